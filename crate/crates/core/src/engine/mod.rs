//! Plan execution against a simulated device arena, baseline schedules and
//! pipeline metrics.

mod arena;
mod baseline;
mod execute;

pub use arena::{occupancy_csv, ArenaCounters, ArenaEvent, DeviceArena, OccupancySample};
pub use baseline::{plan_baseline, plan_for};
pub use execute::{
    arena_capacity_for, execute_plan, simulate_plan, DeviceBackend, ExecutionOutput, HostBackend,
};

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ImageId;
use crate::hashmatch::{HashError, HashParams};
use crate::mbr::MbrError;
use crate::verify::{VerifyError, VerifyParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArenaError {
    #[error("uploading image {image} ({size} units) exceeds free capacity {free}")]
    CapacityExceeded {
        image: ImageId,
        size: usize,
        free: usize,
    },
    #[error("image {0} is not resident")]
    NotResident(ImageId),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Mbr(#[from] MbrError),
    #[error("no features for image {0}")]
    MissingImage(ImageId),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Sequential,
    LoadFreeList,
    GroupBlock,
    Mbr,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        Self::Sequential,
        Self::LoadFreeList,
        Self::GroupBlock,
        Self::Mbr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sequential => "sequential",
            Self::LoadFreeList => "load_free_list",
            Self::GroupBlock => "group_block",
            Self::Mbr => "mbr",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!("unknown strategy {s:?} (sequential, load_free_list, group_block, mbr)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub hash: HashParams,
    pub verify: VerifyParams,
    /// Initial-match lists waiting for verification.
    pub queue_bound: usize,
    /// Verification threads; 0 uses the rayon pool size.
    pub verify_workers: usize,
    /// Also return the initial (pre-verification) matches.
    pub keep_initial: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            hash: HashParams::default(),
            verify: VerifyParams::default(),
            queue_bound: 64,
            verify_workers: 0,
            keep_initial: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub dimension: usize,
    pub bandwidth: usize,
    pub block_rows: usize,
    pub pairs: usize,
    pub uploads: usize,
    pub units_uploaded: usize,
}

/// Counter metrics are deterministic; `wall_time` is not serialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub strategy: Option<StrategyKind>,
    pub pairs_matched: usize,
    pub initial_matches: usize,
    pub verified_matches: usize,
    pub uploads: usize,
    pub evictions: usize,
    pub units_uploaded: usize,
    pub peak_occupancy: usize,
    pub capacity: usize,
    pub utilization_proxy: f64,
    pub iterations: Vec<IterationMetrics>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PipelineMetrics {
    pub fn pairs_per_second(&self) -> f64 {
        let s = self.wall_time.as_secs_f64();
        if s > 0.0 {
            self.pairs_matched as f64 / s
        } else {
            0.0
        }
    }

    /// Verified over initial matches, all pairs pooled.
    pub fn inlier_ratio(&self) -> f64 {
        if self.initial_matches == 0 {
            0.0
        } else {
            self.verified_matches as f64 / self.initial_matches as f64
        }
    }
}
