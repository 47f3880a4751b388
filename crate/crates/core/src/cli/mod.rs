//! Command implementations behind the `blockmatch` binary. Every command reads
//! a [`RunConfig`], writes its artifacts with the resolved config embedded,
//! and returns a JSON summary for stdout.

mod config;

pub use config::{stage_seed, Paths, RunConfig, ScheduleParams, Stage};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::engine::{
    arena_capacity_for, execute_plan, occupancy_csv, plan_for, simulate_plan, DeviceArena,
    EngineError, HostBackend, PipelineMetrics, StrategyKind,
};
use crate::features::{
    generate_synthetic, mean_descriptor, read_features, write_correspondences, write_features,
    write_pairs, FeatureError, FeatureSet, ImageId,
};
use crate::hashmatch::{matches_to_text, HashError, HashFunctions, PairMatches};
use crate::mbr::{bandwidth, size_gpu_for, MbrError, SchedulePlan};
use crate::retrieval::{build_view_graph, RetrievalError, ViewGraph};
use crate::verify::{stats_to_json_lines, PairStats, RansacStatus, VerifyError};

pub const FEATURE_EXT: &str = "bmf";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Mbr(#[from] MbrError),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad input {path}: {message}")]
    Input { path: PathBuf, message: String },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Features(_) => "features",
            CliError::Retrieval(_) => "retrieval",
            CliError::Mbr(_) => "mbr",
            CliError::Hash(_) => "hashmatch",
            CliError::Verify(_) => "verify",
            CliError::Engine(_) => "engine",
            CliError::Io { .. } => "io",
            CliError::Input { .. } => "input",
        }
    }

    /// 2 for configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn compact(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

pub fn feature_path(dir: &Path, id: ImageId) -> PathBuf {
    dir.join(format!("image_{id:06}.{FEATURE_EXT}"))
}

pub fn write_feature_dir(dir: &Path, sets: &[FeatureSet]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in sets {
        write_features(feature_path(dir, s.image_id()), s)?;
    }
    Ok(())
}

/// Every `*.bmf` file in `dir`, sorted by image id.
pub fn read_feature_dir(dir: &Path) -> Result<Vec<FeatureSet>, CliError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.extension().is_some_and(|e| e == FEATURE_EXT) {
            paths.push(p);
        }
    }
    paths.sort();
    let mut sets = paths
        .iter()
        .map(read_features)
        .collect::<Result<Vec<_>, _>>()?;
    sets.sort_by_key(FeatureSet::image_id);
    for w in sets.windows(2) {
        if w[0].image_id() == w[1].image_id() {
            return Err(CliError::Input {
                path: dir.to_path_buf(),
                message: format!("image {} appears twice", w[0].image_id()),
            });
        }
    }
    if sets.is_empty() {
        return Err(CliError::Input {
            path: dir.to_path_buf(),
            message: format!("no .{FEATURE_EXT} files"),
        });
    }
    Ok(sets)
}

/// Matrix Market text with the config echo as a comment after the header.
pub fn graph_text(g: &ViewGraph, cfg: &RunConfig) -> String {
    let mm = g.to_matrix_market();
    let (header, rest) = mm.split_once('\n').unwrap_or((&mm, ""));
    format!("{header}\n% config {}\n{rest}", compact(cfg))
}

pub fn read_graph(path: &Path) -> Result<ViewGraph, CliError> {
    Ok(ViewGraph::from_matrix_market(&read_file(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub config: RunConfig,
    pub strategy: StrategyKind,
    pub bandwidth_before: usize,
    pub bandwidth_after: usize,
    pub plan: SchedulePlan,
}

/// Accepts a plan document or a bare plan.
pub fn read_plan(path: &Path) -> Result<SchedulePlan, CliError> {
    let text = read_file(path)?;
    let bad = |e: serde_json::Error| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let v: Value = serde_json::from_str(&text).map_err(bad)?;
    if let Some(plan) = v.get("plan") {
        serde_json::from_value(plan.clone()).map_err(bad)
    } else {
        serde_json::from_value(v).map_err(bad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: RunConfig,
    pub strategy: StrategyKind,
    pub size_blk: usize,
    pub size_gpu: usize,
    pub images: usize,
    pub graph_pairs: usize,
    pub bandwidth_before: usize,
    pub bandwidth_after: usize,
    pub metrics: PipelineMetrics,
}

fn max_len(features: &[FeatureSet]) -> usize {
    features.iter().map(FeatureSet::len).max().unwrap_or(0)
}

fn image_budget(cfg: &RunConfig, largest: usize) -> usize {
    size_gpu_for(cfg.schedule.gpu_memory_units, largest, 1)
}

fn bandwidth_after(plan: &SchedulePlan) -> usize {
    plan.iterations.first().map_or(0, |it| it.bandwidth)
}

/// Synthetic scene: feature files, ground-truth pairs and correspondences,
/// and `scene.json` with the config echo.
pub fn cmd_gen(cfg: &RunConfig) -> Result<Value, CliError> {
    let cfg = cfg.resolved();
    let dir = &cfg.paths.features_dir;
    let (sets, truth) = generate_synthetic(&cfg.scene)?;
    write_feature_dir(dir, &sets)?;
    write_pairs(dir.join("gt_pairs.txt"), truth.pairs.iter().copied())?;
    write_correspondences(dir.join("gt_correspondences.txt"), &truth.correspondences)?;
    write_file(&dir.join("scene.json"), pretty(&json!({ "config": cfg })))?;
    log::info!("wrote {} images to {}", sets.len(), dir.display());
    Ok(json!({
        "images": sets.len(),
        "descriptors": sets.iter().map(FeatureSet::len).sum::<usize>(),
        "ground_truth_pairs": truth.pairs.len(),
        "correspondences": truth.correspondences.len(),
        "features_dir": dir,
    }))
}

/// View graph by VLAD + HNSW retrieval, written as Matrix Market.
pub fn cmd_retrieve(cfg: &RunConfig) -> Result<Value, CliError> {
    let cfg = cfg.resolved();
    let features = read_feature_dir(&cfg.paths.features_dir)?;
    let (g, cb) = build_view_graph(&features, &cfg.retrieval, cfg.retrieval_seed())?;
    write_file(&cfg.paths.graph, graph_text(&g, &cfg))?;
    Ok(json!({
        "images": g.len(),
        "pairs": g.edge_count(),
        "k_words": cb.k_words(),
        "bandwidth": bandwidth(&g),
        "graph": cfg.paths.graph,
    }))
}

/// Image size used for planning when no features are given.
fn planning_size(cfg: &RunConfig, features: Option<&[FeatureSet]>) -> usize {
    features.map_or(cfg.scene.points_per_image, max_len).max(1)
}

fn load_optional(dir: Option<&Path>) -> Result<Option<Vec<FeatureSet>>, CliError> {
    dir.map(read_feature_dir).transpose()
}

/// Plans the configured strategy on the graph. Without features every image
/// is taken to have `scene.points_per_image` descriptors.
pub fn cmd_schedule(cfg: &RunConfig, features_dir: Option<&Path>) -> Result<Value, CliError> {
    let cfg = cfg.resolved();
    let g = read_graph(&cfg.paths.graph)?;
    let features = load_optional(features_dir)?;
    let size_gpu = image_budget(&cfg, planning_size(&cfg, features.as_deref()));
    let plan = plan_for(&g, cfg.schedule.strategy, cfg.schedule.size_blk, size_gpu)?;
    let doc = PlanDocument {
        config: cfg.clone(),
        strategy: cfg.schedule.strategy,
        bandwidth_before: bandwidth(&g),
        bandwidth_after: bandwidth_after(&plan),
        plan,
    };
    write_file(&cfg.paths.plan, pretty(&doc))?;
    Ok(json!({
        "strategy": doc.strategy,
        "size_blk": doc.plan.size_blk,
        "size_gpu": size_gpu,
        "bandwidth_before": doc.bandwidth_before,
        "bandwidth_after": doc.bandwidth_after,
        "iterations": doc.plan.iterations.len(),
        "block_rows": doc.plan.block_rows().count(),
        "blocks": doc.plan.blocks().count(),
        "pairs": doc.plan.pair_count(),
        "plan": cfg.paths.plan,
    }))
}

struct Executed {
    report: MetricsReport,
    verified: Vec<PairMatches>,
    initial: Vec<PairMatches>,
    stats: Vec<PairStats>,
    occupancy: Option<String>,
}

fn execute(
    cfg: &RunConfig,
    g: &mut ViewGraph,
    plan: &SchedulePlan,
    features: &[FeatureSet],
    occupancy: bool,
) -> Result<Executed, CliError> {
    let hf = HashFunctions::from_params(cfg.hash_seed(), &cfg.engine.hash)?;
    let mean = mean_descriptor(features);
    let capacity = arena_capacity_for(plan.size_gpu, features);
    let mut arena = if occupancy {
        DeviceArena::with_history(capacity)
    } else {
        DeviceArena::new(capacity)
    };
    let graph_pairs = g.edge_count();
    let before = bandwidth(g);
    let mut out = execute_plan(
        plan,
        g,
        features,
        &hf,
        &mean,
        &mut arena,
        &cfg.engine,
        &HostBackend,
    )?;
    out.metrics.strategy = Some(cfg.schedule.strategy);
    Ok(Executed {
        report: MetricsReport {
            config: cfg.clone(),
            strategy: cfg.schedule.strategy,
            size_blk: plan.size_blk,
            size_gpu: plan.size_gpu,
            images: features.len(),
            graph_pairs,
            bandwidth_before: before,
            bandwidth_after: bandwidth_after(plan),
            metrics: out.metrics,
        },
        verified: out.verified,
        initial: out.initial,
        stats: out.stats,
        occupancy: occupancy.then(|| occupancy_csv(arena.history())),
    })
}

fn write_outputs(cfg: &RunConfig, ex: &Executed, stage_secs: Value) -> Result<Value, CliError> {
    let dir = &cfg.paths.out_dir;
    let echo = format!("# config {}\n", compact(cfg));
    write_file(
        &dir.join("matches.txt"),
        echo.clone() + &matches_to_text(&ex.verified),
    )?;
    if cfg.engine.keep_initial {
        write_file(
            &dir.join("initial_matches.txt"),
            echo.clone() + &matches_to_text(&ex.initial),
        )?;
    }
    let stats_head = format!("{}\n", json!({ "config": cfg }));
    write_file(
        &dir.join("pair_stats.jsonl"),
        stats_head + &stats_to_json_lines(&ex.stats),
    )?;
    write_file(&dir.join("metrics.json"), pretty(&ex.report))?;
    if let Some(csv) = &ex.occupancy {
        write_file(&dir.join("occupancy.csv"), echo + csv)?;
    }
    let m = &ex.report.metrics;
    write_file(
        &dir.join("timing.json"),
        pretty(&json!({
            "config": cfg,
            "wall_time_secs": m.wall_time.as_secs_f64(),
            "pairs_per_second": m.pairs_per_second(),
            "stages_secs": stage_secs,
        })),
    )?;
    Ok(json!({
        "strategy": ex.report.strategy,
        "images": ex.report.images,
        "pairs_matched": m.pairs_matched,
        "initial_matches": m.initial_matches,
        "verified_matches": m.verified_matches,
        "uploads": m.uploads,
        "utilization_proxy": m.utilization_proxy,
        "out_dir": dir,
    }))
}

/// Executes a stored plan and verifies every scheduled pair.
pub fn cmd_match(cfg: &RunConfig, occupancy: bool) -> Result<Value, CliError> {
    let cfg = cfg.resolved();
    let features = read_feature_dir(&cfg.paths.features_dir)?;
    let mut g = read_graph(&cfg.paths.graph)?;
    let plan = read_plan(&cfg.paths.plan)?;
    let t = Instant::now();
    let ex = execute(&cfg, &mut g, &plan, &features, occupancy)?;
    write_outputs(&cfg, &ex, json!({ "execute": t.elapsed().as_secs_f64() }))
}

/// Retrieval, scheduling, matching and verification in one pass. Without a
/// features directory the configured synthetic scene is generated in memory.
pub fn cmd_run(
    cfg: &RunConfig,
    features_dir: Option<&Path>,
    occupancy: bool,
) -> Result<Value, CliError> {
    let cfg = cfg.resolved();
    let t0 = Instant::now();
    let features = match features_dir {
        Some(dir) => read_feature_dir(dir)?,
        None => generate_synthetic(&cfg.scene)?.0,
    };
    let t1 = Instant::now();
    let (mut g, _) = build_view_graph(&features, &cfg.retrieval, cfg.retrieval_seed())?;
    log::info!("view graph: {} images, {} pairs", g.len(), g.edge_count());
    let t2 = Instant::now();
    let size_gpu = image_budget(&cfg, max_len(&features).max(1));
    let plan = plan_for(&g, cfg.schedule.strategy, cfg.schedule.size_blk, size_gpu)?;
    let doc = PlanDocument {
        config: cfg.clone(),
        strategy: cfg.schedule.strategy,
        bandwidth_before: bandwidth(&g),
        bandwidth_after: bandwidth_after(&plan),
        plan,
    };
    let dir = &cfg.paths.out_dir;
    write_file(&dir.join("graph.mtx"), graph_text(&g, &cfg))?;
    write_file(&dir.join("plan.json"), pretty(&doc))?;
    log::info!(
        "plan: {} iterations, {} block rows, size_gpu {}",
        doc.plan.iterations.len(),
        doc.plan.block_rows().count(),
        size_gpu
    );
    let t3 = Instant::now();
    let ex = execute(&cfg, &mut g, &doc.plan, &features, occupancy)?;
    let stages = json!({
        "features": (t1 - t0).as_secs_f64(),
        "retrieval": (t2 - t1).as_secs_f64(),
        "schedule": (t3 - t2).as_secs_f64(),
        "execute": t3.elapsed().as_secs_f64(),
    });
    write_outputs(&cfg, &ex, stages)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: StrategyKind,
    pub pairs: usize,
    pub iterations: usize,
    pub block_rows: usize,
    pub uploads: usize,
    pub evictions: usize,
    pub units_uploaded: usize,
    pub peak_occupancy: usize,
    pub utilization_proxy: f64,
}

/// Data-movement counters of every strategy on one graph, replayed on the
/// arena without matching.
pub fn compare_strategies(
    g: &ViewGraph,
    size_blk: usize,
    size_gpu: usize,
    size: impl Fn(ImageId) -> usize + Copy,
) -> Result<Vec<CompareRow>, CliError> {
    let largest = g.image_ids().iter().map(|&id| size(id)).max().unwrap_or(0);
    let mut rows = Vec::new();
    for strategy in StrategyKind::ALL {
        let plan = plan_for(g, strategy, size_blk, size_gpu)?;
        let mut arena = DeviceArena::new(size_gpu * largest);
        let m = simulate_plan(&plan, &mut arena, size)?;
        rows.push(CompareRow {
            strategy,
            pairs: m.pairs_matched,
            iterations: plan.iterations.len(),
            block_rows: plan.block_rows().count(),
            uploads: m.uploads,
            evictions: m.evictions,
            units_uploaded: m.units_uploaded,
            peak_occupancy: m.peak_occupancy,
            utilization_proxy: m.utilization_proxy,
        });
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("strategy,pairs,iterations,block_rows,uploads,evictions,units_uploaded,peak_occupancy,utilization_proxy\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.6}\n",
            r.strategy,
            r.pairs,
            r.iterations,
            r.block_rows,
            r.uploads,
            r.evictions,
            r.units_uploaded,
            r.peak_occupancy,
            r.utilization_proxy
        ));
    }
    s
}

/// All four strategies on the configured graph; writes `compare.csv` and
/// `compare.json` to the output directory.
pub fn cmd_compare(cfg: &RunConfig, features_dir: Option<&Path>) -> Result<Value, CliError> {
    let cfg = cfg.resolved();
    let g = read_graph(&cfg.paths.graph)?;
    let features = load_optional(features_dir)?;
    let size_gpu = image_budget(&cfg, planning_size(&cfg, features.as_deref()));
    let sizes: std::collections::HashMap<ImageId, usize> = match &features {
        Some(f) => f.iter().map(|s| (s.image_id(), s.len())).collect(),
        None => g
            .image_ids()
            .iter()
            .map(|&id| (id, cfg.scene.points_per_image.max(1)))
            .collect(),
    };
    for &id in g.image_ids() {
        if !sizes.contains_key(&id) {
            return Err(EngineError::MissingImage(id).into());
        }
    }
    let rows = compare_strategies(&g, cfg.schedule.size_blk, size_gpu, |id| sizes[&id])?;
    let dir = &cfg.paths.out_dir;
    write_file(
        &dir.join("compare.csv"),
        format!("# config {}\n{}", compact(&cfg), compare_csv(&rows)),
    )?;
    let doc = json!({
        "config": cfg,
        "size_blk": cfg.schedule.size_blk,
        "size_gpu": size_gpu,
        "bandwidth": bandwidth(&g),
        "rows": rows,
    });
    write_file(&dir.join("compare.json"), pretty(&doc))?;
    Ok(json!({ "size_gpu": size_gpu, "rows": rows }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InlierSummary {
    pub pairs: usize,
    pub pairs_with_model: usize,
    pub too_few_matches: usize,
    pub no_model: usize,
    pub initial_matches: usize,
    pub inliers: usize,
    /// Inliers over initial matches, all pairs pooled.
    pub pooled_inlier_ratio: f64,
    pub mean_inlier_ratio: f64,
    pub median_inlier_ratio: f64,
    pub min_inlier_ratio: f64,
    pub max_inlier_ratio: f64,
    pub mean_inliers: f64,
}

pub fn summarize(stats: &[PairStats]) -> InlierSummary {
    let mut s = InlierSummary {
        pairs: stats.len(),
        ..InlierSummary::default()
    };
    if stats.is_empty() {
        return s;
    }
    for st in stats {
        s.initial_matches += st.initial;
        s.inliers += st.inliers;
        match st.ransac_status {
            RansacStatus::Ok => s.pairs_with_model += 1,
            RansacStatus::TooFewMatches => s.too_few_matches += 1,
            RansacStatus::NoModel => s.no_model += 1,
        }
    }
    let mut ratios: Vec<f64> = stats.iter().map(|st| st.inlier_ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    s.pooled_inlier_ratio = if s.initial_matches == 0 {
        0.0
    } else {
        s.inliers as f64 / s.initial_matches as f64
    };
    s.mean_inlier_ratio = ratios.iter().sum::<f64>() / n as f64;
    s.median_inlier_ratio = if n % 2 == 1 {
        ratios[n / 2]
    } else {
        (ratios[n / 2 - 1] + ratios[n / 2]) / 2.0
    };
    s.min_inlier_ratio = ratios[0];
    s.max_inlier_ratio = ratios[n - 1];
    s.mean_inliers = s.inliers as f64 / n as f64;
    s
}

/// Per-pair stats lines; the config line and blank lines are skipped.
pub fn read_pair_stats(path: &Path) -> Result<Vec<PairStats>, CliError> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Input {
            path: path.to_path_buf(),
            message: format!("line {}: {m}", n + 1),
        };
        let v: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if v.get("config").is_some() {
            continue;
        }
        out.push(serde_json::from_value(v).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

/// Inlier number and inlier ratio summary of `pair_stats.jsonl`; also written
/// to `stats.json` in the output directory.
pub fn cmd_stats(cfg: &RunConfig, input: &Path) -> Result<Value, CliError> {
    let cfg = cfg.resolved();
    let stats = read_pair_stats(input)?;
    let summary = summarize(&stats);
    write_file(
        &cfg.paths.out_dir.join("stats.json"),
        pretty(&json!({ "config": cfg, "input": input, "summary": summary })),
    )?;
    Ok(serde_json::to_value(summary).expect("summary serializes"))
}
