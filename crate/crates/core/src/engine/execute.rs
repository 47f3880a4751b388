//! Block-row execution: uploads, matching, eviction and the verification
//! pool fed through a bounded queue.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::mpsc::sync_channel;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use super::{DeviceArena, EngineConfig, EngineError, IterationMetrics, PipelineMetrics};
use crate::features::{FeatureSet, ImageId, DESCRIPTOR_DIM};
use crate::hashmatch::{
    compute_codes, HashCodeSet, HashError, HashFunctions, HashParams, Matcher, PairMatches,
};
use crate::mbr::SchedulePlan;
use crate::retrieval::{Pair, PairState, ViewGraph};
use crate::verify::{verify_pair, PairStats};

/// Device-side operations. The default methods run on the host; a real
/// accelerator overrides them without touching the planner or the executor.
pub trait DeviceBackend: Sync {
    fn upload(
        &self,
        features: &FeatureSet,
        hf: &HashFunctions,
        mean: &[f32; DESCRIPTOR_DIM],
    ) -> HashCodeSet {
        compute_codes(features, hf, mean)
    }

    fn evict(&self, _image: ImageId) {}

    fn match_pair(
        &self,
        matcher: &mut Matcher,
        q: (&HashCodeSet, &FeatureSet),
        t: (&HashCodeSet, &FeatureSet),
        params: &HashParams,
    ) -> Result<PairMatches, HashError> {
        matcher.match_pair(q, t, params.top_k, params.ratio)
    }
}

pub struct HostBackend;

impl DeviceBackend for HostBackend {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionOutput {
    /// Sorted by pair.
    pub verified: Vec<PairMatches>,
    /// Sorted by pair; empty unless `keep_initial` is set.
    pub initial: Vec<PairMatches>,
    pub stats: Vec<PairStats>,
    pub metrics: PipelineMetrics,
}

/// Arena capacity, in descriptor units, that holds `size_gpu` of the largest
/// images.
pub fn arena_capacity_for(size_gpu: usize, features: &[FeatureSet]) -> usize {
    size_gpu * features.iter().map(FeatureSet::len).max().unwrap_or(0)
}

/// Replays the data movement of `plan` on `arena` without matching.
/// `size` gives each image's descriptor count.
pub fn simulate_plan(
    plan: &SchedulePlan,
    arena: &mut DeviceArena,
    size: impl Fn(ImageId) -> usize,
) -> Result<PipelineMetrics, EngineError> {
    let before = arena.counters();
    let mut metrics = PipelineMetrics {
        capacity: arena.capacity(),
        ..PipelineMetrics::default()
    };
    for it in &plan.iterations {
        let at_start = arena.counters();
        for row in &it.rows {
            for id in row.images() {
                arena.upload(id, size(id))?;
            }
            for &id in &row.evict_after {
                arena.evict(id)?;
            }
        }
        arena.clear();
        let now = arena.counters();
        metrics.iterations.push(IterationMetrics {
            dimension: it.dimension(),
            bandwidth: it.bandwidth,
            block_rows: it.rows.len(),
            pairs: it.pair_count(),
            uploads: now.uploads - at_start.uploads,
            units_uploaded: now.units_uploaded - at_start.units_uploaded,
        });
    }
    let after = arena.counters();
    metrics.pairs_matched = plan.pair_count();
    metrics.uploads = after.uploads - before.uploads;
    metrics.evictions = after.evictions - before.evictions;
    metrics.units_uploaded = after.units_uploaded - before.units_uploaded;
    metrics.peak_occupancy = after.peak_occupancy;
    metrics.utilization_proxy = utilization(metrics.pairs_matched, metrics.uploads);
    Ok(metrics)
}

fn utilization(pairs: usize, uploads: usize) -> f64 {
    if uploads == 0 {
        0.0
    } else {
        pairs as f64 / uploads as f64
    }
}

type Verified = BTreeMap<Pair, (PairMatches, PairStats)>;

/// Runs `plan` and verifies every matched pair. Matched pairs are marked
/// processed in `graph`; the arena is emptied after every iteration.
#[allow(clippy::too_many_arguments)]
pub fn execute_plan(
    plan: &SchedulePlan,
    graph: &mut ViewGraph,
    features: &[FeatureSet],
    hf: &HashFunctions,
    mean: &[f32; DESCRIPTOR_DIM],
    arena: &mut DeviceArena,
    config: &EngineConfig,
    backend: &dyn DeviceBackend,
) -> Result<ExecutionOutput, EngineError> {
    let start = Instant::now();
    let by_id: HashMap<ImageId, &FeatureSet> = features.iter().map(|f| (f.image_id(), f)).collect();
    let largest = features.iter().map(FeatureSet::len).max().unwrap_or(0);
    if arena.capacity() < plan.size_gpu * largest {
        return Err(EngineError::InvalidPlan(format!(
            "arena capacity {} cannot hold {} images of {} descriptors",
            arena.capacity(),
            plan.size_gpu,
            largest
        )));
    }
    let mut seen = BTreeSet::new();
    for b in plan.blocks() {
        for &(a, c) in &b.pairs {
            if graph.pair_state(a, c) != Some(PairState::Unprocessed) {
                return Err(EngineError::InvalidPlan(format!(
                    "pair ({a}, {c}) is not an open graph pair"
                )));
            }
            if !seen.insert((a, c)) {
                return Err(EngineError::InvalidPlan(format!(
                    "pair ({a}, {c}) scheduled twice"
                )));
            }
            for id in [a, c] {
                if !by_id.contains_key(&id) {
                    return Err(EngineError::MissingImage(id));
                }
            }
        }
    }

    let workers = if config.verify_workers == 0 {
        rayon::current_num_threads()
    } else {
        config.verify_workers
    };
    let before = arena.counters();
    let mut metrics = PipelineMetrics {
        capacity: arena.capacity(),
        ..PipelineMetrics::default()
    };
    let verified: Mutex<Verified> = Mutex::new(BTreeMap::new());
    let failure: Mutex<Option<EngineError>> = Mutex::new(None);
    let mut initial = Vec::new();

    for it in &plan.iterations {
        let at_start = arena.counters();
        let (tx, rx) = sync_channel::<PairMatches>(config.queue_bound.max(1));
        let rx = Mutex::new(rx);
        let produced = std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let next = rx.lock().unwrap().recv();
                    let Ok(pm) = next else { break };
                    let (q, t) = (by_id[&pm.pair.0], by_id[&pm.pair.1]);
                    match verify_pair(&pm, q, t, &config.verify) {
                        Ok((v, st)) => {
                            verified.lock().unwrap().insert(pm.pair, (v, st));
                        }
                        Err(e) => {
                            failure.lock().unwrap().get_or_insert(e.into());
                        }
                    }
                });
            }
            let mut codes: HashMap<ImageId, HashCodeSet> = HashMap::new();
            let result = (|| -> Result<usize, EngineError> {
                let mut pairs_done = 0;
                for row in &it.rows {
                    let new: Vec<ImageId> = row
                        .images()
                        .into_iter()
                        .filter(|&id| !arena.is_resident(id))
                        .collect();
                    for &id in &new {
                        arena.upload(id, by_id[&id].len())?;
                    }
                    let fresh: Vec<(ImageId, HashCodeSet)> = new
                        .par_iter()
                        .map(|&id| (id, backend.upload(by_id[&id], hf, mean)))
                        .collect();
                    codes.extend(fresh);

                    let pairs: Vec<Pair> = row
                        .blocks
                        .iter()
                        .flat_map(|b| b.pairs.iter().copied())
                        .collect();
                    let matched: Vec<PairMatches> = pairs
                        .par_iter()
                        .map_init(Matcher::new, |m, &(a, c)| {
                            backend.match_pair(
                                m,
                                (&codes[&a], by_id[&a]),
                                (&codes[&c], by_id[&c]),
                                &config.hash,
                            )
                        })
                        .collect::<Result<_, _>>()?;
                    for pm in matched {
                        graph.mark_processed(pm.pair.0, pm.pair.1);
                        pairs_done += 1;
                        if config.keep_initial {
                            initial.push(pm.clone());
                        }
                        if tx.send(pm).is_err() {
                            return Err(EngineError::InvalidPlan(
                                "verification workers stopped".into(),
                            ));
                        }
                    }
                    for &id in &row.evict_after {
                        arena.evict(id)?;
                        codes.remove(&id);
                        backend.evict(id);
                    }
                }
                let left: Vec<ImageId> = arena.resident().collect();
                arena.clear();
                for id in left {
                    backend.evict(id);
                }
                Ok(pairs_done)
            })();
            drop(tx);
            result
        })?;
        if let Some(e) = failure.lock().unwrap().take() {
            return Err(e);
        }
        let now = arena.counters();
        metrics.iterations.push(IterationMetrics {
            dimension: it.dimension(),
            bandwidth: it.bandwidth,
            block_rows: it.rows.len(),
            pairs: produced,
            uploads: now.uploads - at_start.uploads,
            units_uploaded: now.units_uploaded - at_start.units_uploaded,
        });
        metrics.pairs_matched += produced;
        log::debug!(
            "iteration {}: {} pairs, {} uploads",
            metrics.iterations.len() - 1,
            produced,
            now.uploads - at_start.uploads
        );
    }

    let verified = verified.into_inner().unwrap();
    let after = arena.counters();
    metrics.uploads = after.uploads - before.uploads;
    metrics.evictions = after.evictions - before.evictions;
    metrics.units_uploaded = after.units_uploaded - before.units_uploaded;
    metrics.peak_occupancy = after.peak_occupancy;
    metrics.utilization_proxy = utilization(metrics.pairs_matched, metrics.uploads);
    let (verified, stats): (Vec<PairMatches>, Vec<PairStats>) = verified.into_values().unzip();
    metrics.initial_matches = stats.iter().map(|s| s.initial).sum();
    metrics.verified_matches = stats.iter().map(|s| s.inliers).sum();
    initial.sort_by_key(|pm| pm.pair);
    metrics.wall_time = start.elapsed();
    Ok(ExecutionOutput {
        verified,
        initial,
        stats,
        metrics,
    })
}
