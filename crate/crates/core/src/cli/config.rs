use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::engine::{EngineConfig, StrategyKind};
use crate::features::SyntheticScene;
use crate::retrieval::RetrievalParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    /// Images per schedule block.
    pub size_blk: usize,
    /// Device budget in descriptor units; the image budget is this over the
    /// largest image's descriptor count.
    pub gpu_memory_units: u64,
    pub strategy: StrategyKind,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            size_blk: 400,
            gpu_memory_units: 400_000,
            strategy: StrategyKind::Mbr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub features_dir: PathBuf,
    pub graph: PathBuf,
    pub plan: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            features_dir: "features".into(),
            graph: "graph.mtx".into(),
            plan: "plan.json".into(),
            out_dir: "out".into(),
        }
    }
}

/// Everything a command needs. Nested seeds are overwritten from `seed` by
/// [`RunConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SyntheticScene,
    pub retrieval: RetrievalParams,
    pub schedule: ScheduleParams,
    pub engine: EngineConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Scene,
    Retrieval,
    Hnsw,
    Hash,
    Ransac,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Scene => 1,
            Stage::Retrieval => 2,
            Stage::Hnsw => 3,
            Stage::Hash => 4,
            Stage::Ransac => 5,
        }
    }
}

/// Seed for one pipeline stage, split from the root seed.
pub fn stage_seed(root: u64, stage: Stage) -> u64 {
    let mut z = root ^ stage.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Copy with every nested seed derived from the root seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.scene.seed = stage_seed(self.seed, Stage::Scene);
        c.retrieval.hnsw.seed = stage_seed(self.seed, Stage::Hnsw);
        c.engine.verify.ransac.seed = stage_seed(self.seed, Stage::Ransac);
        c
    }

    pub fn retrieval_seed(&self) -> u64 {
        stage_seed(self.seed, Stage::Retrieval)
    }

    pub fn hash_seed(&self) -> u64 {
        stage_seed(self.seed, Stage::Hash)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.scene
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.engine
            .hash
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.engine
            .verify
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let r = &self.retrieval;
        if r.k_words == 0 {
            return bad("retrieval.k_words must be at least 1".into());
        }
        if !(r.p_percent > 0.0 && r.p_percent <= 100.0) {
            return bad(format!(
                "retrieval.p_percent {} outside (0, 100]",
                r.p_percent
            ));
        }
        if r.h == 0 {
            return bad("retrieval.h must be at least 1".into());
        }
        if r.hnsw.m < 2 || r.hnsw.ef_construction == 0 || r.hnsw.ef_search == 0 {
            return bad("retrieval.hnsw needs m >= 2 and positive ef values".into());
        }
        if self.schedule.size_blk == 0 {
            return bad("schedule.size_blk must be at least 1".into());
        }
        if self.engine.queue_bound == 0 {
            return bad("engine.queue_bound must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_partial_files() {
        let mut c = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        c.schedule.strategy = StrategyKind::GroupBlock;
        c.engine.hash.ratio = 0.7;
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let partial = RunConfig::from_json(r#"{"seed": 5, "schedule": {"size_blk": 8}}"#).unwrap();
        assert_eq!(partial.schedule.size_blk, 8);
        assert_eq!(
            partial.schedule.gpu_memory_units,
            ScheduleParams::default().gpu_memory_units
        );
        assert!(matches!(
            RunConfig::from_json(r#"{"sed": 5}"#),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn stage_seeds_differ_and_resolve_is_idempotent() {
        let c = RunConfig::default().resolved();
        assert_eq!(c.resolved(), c);
        let seeds = [
            Stage::Scene,
            Stage::Retrieval,
            Stage::Hnsw,
            Stage::Hash,
            Stage::Ransac,
        ]
        .map(|s| stage_seed(0, s));
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_ne!(stage_seed(1, Stage::Scene), stage_seed(0, Stage::Scene));
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.engine.hash.ratio = 1.5;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = RunConfig::default();
        c.schedule.size_blk = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.retrieval.p_percent = 0.0;
        assert!(c.validate().is_err());
    }
}
