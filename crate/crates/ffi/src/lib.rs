//! C ABI over the blockmatch pipeline.
//!
//! Objects cross the boundary as opaque handles written through an out
//! pointer and released with the matching `bm_*_free`. Every fallible
//! call returns a [`BmStatus`]; the message of the last failure on the
//! calling thread is available through [`bm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use blockmatch::cli::{read_feature_dir, CliError};
use blockmatch::engine::{
    arena_capacity_for, execute_plan, plan_for, simulate_plan, DeviceArena, EngineConfig,
    EngineError, HostBackend, PipelineMetrics, StrategyKind,
};
use blockmatch::features::{
    generate_synthetic, mean_descriptor, FeatureError, FeatureSet, SyntheticScene,
};
use blockmatch::hashmatch::{matches_to_text, HashError, HashFunctions, PairMatches};
use blockmatch::mbr::{bandwidth, MbrError, SchedulePlan};
use blockmatch::retrieval::{build_view_graph, RetrievalError, RetrievalParams, ViewGraph};

pub const BM_VERSION_MAJOR: u32 = 0;
pub const BM_VERSION_MINOR: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Features = 5,
    Retrieval = 6,
    Schedule = 7,
    Hash = 8,
    Verify = 9,
    Engine = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmStrategy {
    Sequential = 0,
    LoadFreeList = 1,
    GroupBlock = 2,
    Mbr = 3,
}

fn strategy_from_code(code: u32) -> Option<StrategyKind> {
    [
        (BmStrategy::Sequential, StrategyKind::Sequential),
        (BmStrategy::LoadFreeList, StrategyKind::LoadFreeList),
        (BmStrategy::GroupBlock, StrategyKind::GroupBlock),
        (BmStrategy::Mbr, StrategyKind::Mbr),
    ]
    .into_iter()
    .find(|&(b, _)| b as u32 == code)
    .map(|(_, k)| k)
}

/// Counter metrics of one execution or simulation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BmMetrics {
    pub pairs_matched: u64,
    pub initial_matches: u64,
    pub verified_matches: u64,
    pub uploads: u64,
    pub evictions: u64,
    pub units_uploaded: u64,
    pub peak_occupancy: u64,
    pub capacity: u64,
    pub iterations: u64,
    pub utilization_proxy: f64,
}

impl From<&PipelineMetrics> for BmMetrics {
    fn from(m: &PipelineMetrics) -> Self {
        Self {
            pairs_matched: m.pairs_matched as u64,
            initial_matches: m.initial_matches as u64,
            verified_matches: m.verified_matches as u64,
            uploads: m.uploads as u64,
            evictions: m.evictions as u64,
            units_uploaded: m.units_uploaded as u64,
            peak_occupancy: m.peak_occupancy as u64,
            capacity: m.capacity as u64,
            iterations: m.iterations.len() as u64,
            utilization_proxy: m.utilization_proxy,
        }
    }
}

/// Feature sets, sorted by image id.
pub struct BmFeatures(Vec<FeatureSet>);

pub struct BmGraph(ViewGraph);

pub struct BmPlan(SchedulePlan);

/// Verified matches and metrics of one execution.
pub struct BmResult {
    verified: Vec<PairMatches>,
    metrics: PipelineMetrics,
}

struct Failure(BmStatus, String);

impl Failure {
    fn arg(m: impl Into<String>) -> Self {
        Failure(BmStatus::InvalidArgument, m.into())
    }
}

impl From<FeatureError> for Failure {
    fn from(e: FeatureError) -> Self {
        let s = match e {
            FeatureError::Io(_) => BmStatus::Io,
            FeatureError::FormatError(_) | FeatureError::TruncatedFile(_) => BmStatus::Format,
            FeatureError::InvalidScene(_) => BmStatus::InvalidArgument,
            _ => BmStatus::Features,
        };
        Failure(s, e.to_string())
    }
}

impl From<RetrievalError> for Failure {
    fn from(e: RetrievalError) -> Self {
        let s = match e {
            RetrievalError::Io(_) => BmStatus::Io,
            RetrievalError::Format(_) => BmStatus::Format,
            RetrievalError::InvalidParameter(_) => BmStatus::InvalidArgument,
            _ => BmStatus::Retrieval,
        };
        Failure(s, e.to_string())
    }
}

impl From<MbrError> for Failure {
    fn from(e: MbrError) -> Self {
        let s = match e {
            MbrError::Io(_) => BmStatus::Io,
            MbrError::Format(_) => BmStatus::Format,
            _ => BmStatus::Schedule,
        };
        Failure(s, e.to_string())
    }
}

impl From<HashError> for Failure {
    fn from(e: HashError) -> Self {
        Failure(BmStatus::Hash, e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let s = match e {
            EngineError::Verify(_) => BmStatus::Verify,
            EngineError::Hash(_) => BmStatus::Hash,
            EngineError::Mbr(_) => BmStatus::Schedule,
            _ => BmStatus::Engine,
        };
        Failure(s, e.to_string())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let s = match e {
            CliError::Io { .. } => BmStatus::Io,
            CliError::Input { .. } => BmStatus::Format,
            CliError::Config(_) => BmStatus::InvalidArgument,
            _ => BmStatus::Features,
        };
        Failure(s, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BmStatus::Ok
        }
        Ok(Err(Failure(s, m))) => {
            set_last_error(&m);
            s
        }
        Err(_) => {
            set_last_error("panic inside blockmatch");
            BmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure(BmStatus::NullPointer, "path is null".into()));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::arg("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(BmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_slot<'a, T>(p: *mut *mut T) -> Result<&'a mut *mut T, Failure> {
    let slot = p
        .as_mut()
        .ok_or_else(|| Failure(BmStatus::NullPointer, "output pointer is null".into()))?;
    *slot = ptr::null_mut();
    Ok(slot)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code; "unknown" outside the enum.
#[no_mangle]
pub extern "C" fn bm_status_name(status: i32) -> *const c_char {
    let names: [&'static CStr; 12] = [
        c"ok",
        c"null_pointer",
        c"invalid_argument",
        c"io",
        c"format",
        c"features",
        c"retrieval",
        c"schedule",
        c"hash",
        c"verify",
        c"engine",
        c"panic",
    ];
    usize::try_from(status)
        .ok()
        .and_then(|i| names.get(i))
        .copied()
        .unwrap_or(c"unknown")
        .as_ptr()
}

/// Synthetic band scene.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bm_features_synthetic(
    n_images: u32,
    points_per_image: u32,
    overlap_band: u32,
    seed: u64,
    out: *mut *mut BmFeatures,
) -> BmStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let scene = SyntheticScene {
            n_images: n_images as usize,
            points_per_image: points_per_image as usize,
            overlap_band: overlap_band as usize,
            seed,
            ..SyntheticScene::default()
        };
        let (sets, _) = generate_synthetic(&scene)?;
        *slot = Box::into_raw(Box::new(BmFeatures(sets)));
        Ok(())
    })
}

/// Every feature file in a directory.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` as for [`bm_features_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn bm_features_load_dir(
    dir: *const c_char,
    out: *mut *mut BmFeatures,
) -> BmStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let sets = read_feature_dir(&path_arg(dir)?)?;
        *slot = Box::into_raw(Box::new(BmFeatures(sets)));
        Ok(())
    })
}

/// Number of images, 0 for null.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_features_count(f: *const BmFeatures) -> u64 {
    f.as_ref().map_or(0, |f| f.0.len() as u64)
}

/// # Safety
/// `f` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bm_features_free(f: *mut BmFeatures) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// View graph by retrieval with default parameters, `top_n` images per image.
///
/// # Safety
/// `f` must be a live handle; `out` as for [`bm_features_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn bm_graph_retrieve(
    f: *const BmFeatures,
    top_n: u32,
    seed: u64,
    out: *mut *mut BmGraph,
) -> BmStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let f = handle(f, "features")?;
        let params = RetrievalParams {
            retrieval_top_n: top_n as usize,
            ..RetrievalParams::default()
        };
        let (g, _) = build_view_graph(&f.0, &params, seed)?;
        *slot = Box::into_raw(Box::new(BmGraph(g)));
        Ok(())
    })
}

/// Graph over `n_images` ids `0..n_images` with `n_pairs` pairs given as
/// `2 * n_pairs` ids.
///
/// # Safety
/// `pairs` must point to `2 * n_pairs` readable values (may be null when
/// `n_pairs` is 0); `out` as for [`bm_features_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn bm_graph_from_pairs(
    n_images: u64,
    pairs: *const u64,
    n_pairs: u64,
    out: *mut *mut BmGraph,
) -> BmStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let flat: &[u64] = if n_pairs == 0 {
            &[]
        } else if pairs.is_null() {
            return Err(Failure(BmStatus::NullPointer, "pairs is null".into()));
        } else {
            std::slice::from_raw_parts(pairs, 2 * n_pairs as usize)
        };
        let list = flat.chunks_exact(2).map(|p| (p[0], p[1]));
        let g = ViewGraph::from_pairs((0..n_images).collect(), list)?;
        *slot = Box::into_raw(Box::new(BmGraph(g)));
        Ok(())
    })
}

/// Matrix Market file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` as for [`bm_features_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn bm_graph_read(path: *const c_char, out: *mut *mut BmGraph) -> BmStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let text = std::fs::read_to_string(path_arg(path)?)
            .map_err(|e| Failure(BmStatus::Io, e.to_string()))?;
        *slot = Box::into_raw(Box::new(BmGraph(ViewGraph::from_matrix_market(&text)?)));
        Ok(())
    })
}

/// # Safety
/// `g` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bm_graph_write(g: *const BmGraph, path: *const c_char) -> BmStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        g.0.write_matrix_market(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_graph_pair_count(g: *const BmGraph) -> u64 {
    g.as_ref().map_or(0, |g| g.0.edge_count() as u64)
}

/// Bandwidth under the stored image order.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_graph_bandwidth(g: *const BmGraph) -> u64 {
    g.as_ref().map_or(0, |g| bandwidth(&g.0) as u64)
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bm_graph_free(g: *mut BmGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Plan for `strategy`, a [`BmStrategy`] value; `size_blk` applies to the
/// band-reduction strategy.
///
/// # Safety
/// `g` must be a live handle; `out` as for [`bm_features_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn bm_plan_build(
    g: *const BmGraph,
    strategy: u32,
    size_blk: u32,
    size_gpu: u32,
    out: *mut *mut BmPlan,
) -> BmStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let g = handle(g, "graph")?;
        let kind = strategy_from_code(strategy)
            .ok_or_else(|| Failure::arg(format!("unknown strategy {strategy}")))?;
        let plan = plan_for(&g.0, kind, size_blk as usize, size_gpu as usize)?;
        *slot = Box::into_raw(Box::new(BmPlan(plan)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_plan_pair_count(p: *const BmPlan) -> u64 {
    p.as_ref().map_or(0, |p| p.0.pair_count() as u64)
}

/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_plan_block_count(p: *const BmPlan) -> u64 {
    p.as_ref().map_or(0, |p| p.0.blocks().count() as u64)
}

/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_plan_iteration_count(p: *const BmPlan) -> u64 {
    p.as_ref().map_or(0, |p| p.0.iterations.len() as u64)
}

/// # Safety
/// `p` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bm_plan_write_json(p: *const BmPlan, path: *const c_char) -> BmStatus {
    guard(|| {
        let p = handle(p, "plan")?;
        p.0.write_json(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bm_plan_free(p: *mut BmPlan) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Replays the plan's data movement with every image `image_units` large on
/// an arena of `size_gpu * image_units`.
///
/// # Safety
/// `p` must be a live handle; `out` must point to writable metrics.
#[no_mangle]
pub unsafe extern "C" fn bm_plan_simulate(
    p: *const BmPlan,
    image_units: u64,
    out: *mut BmMetrics,
) -> BmStatus {
    guard(|| {
        let p = handle(p, "plan")?;
        let out = out
            .as_mut()
            .ok_or_else(|| Failure(BmStatus::NullPointer, "metrics is null".into()))?;
        let units = image_units as usize;
        let mut arena = DeviceArena::new(p.0.size_gpu * units);
        let m = simulate_plan(&p.0, &mut arena, |_| units)?;
        *out = BmMetrics::from(&m);
        Ok(())
    })
}

/// Matches and verifies every planned pair with default parameters. Pairs
/// are marked processed in `g`, so a plan runs once per graph.
///
/// # Safety
/// `p`, `g` and `f` must be live handles; `out` as for [`bm_features_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn bm_execute(
    p: *const BmPlan,
    g: *mut BmGraph,
    f: *const BmFeatures,
    seed: u64,
    out: *mut *mut BmResult,
) -> BmStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let p = handle(p, "plan")?;
        let f = handle(f, "features")?;
        let g = g
            .as_mut()
            .ok_or_else(|| Failure(BmStatus::NullPointer, "graph is null".into()))?;
        let mut config = EngineConfig::default();
        config.verify.ransac.seed = seed;
        let hf = HashFunctions::from_params(seed, &config.hash)?;
        let mean = mean_descriptor(&f.0);
        let mut arena = DeviceArena::new(arena_capacity_for(p.0.size_gpu, &f.0));
        let r = execute_plan(
            &p.0,
            &mut g.0,
            &f.0,
            &hf,
            &mean,
            &mut arena,
            &config,
            &HostBackend,
        )?;
        *slot = Box::into_raw(Box::new(BmResult {
            verified: r.verified,
            metrics: r.metrics,
        }));
        Ok(())
    })
}

/// # Safety
/// `r` must be a live handle; `out` must point to writable metrics.
#[no_mangle]
pub unsafe extern "C" fn bm_result_metrics(r: *const BmResult, out: *mut BmMetrics) -> BmStatus {
    guard(|| {
        let r = handle(r, "result")?;
        let out = out
            .as_mut()
            .ok_or_else(|| Failure(BmStatus::NullPointer, "metrics is null".into()))?;
        *out = BmMetrics::from(&r.metrics);
        Ok(())
    })
}

/// Total verified matches, 0 for null.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_result_match_count(r: *const BmResult) -> u64 {
    r.as_ref().map_or(0, |r| {
        r.verified.iter().map(PairMatches::len).sum::<usize>() as u64
    })
}

/// Verified matches as text, one `i j query_idx train_idx` line per match.
///
/// # Safety
/// `r` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bm_result_write_matches(
    r: *const BmResult,
    path: *const c_char,
) -> BmStatus {
    guard(|| {
        let r = handle(r, "result")?;
        std::fs::write(path_arg(path)?, matches_to_text(&r.verified))
            .map_err(|e| Failure(BmStatus::Io, e.to_string()))
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bm_result_free(r: *mut BmResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
