//! Outlier removal: spatial angular order (SAO) scored with the cyclic edit
//! distance, then RANSAC on the fundamental matrix.

mod ransac;
mod sao;
mod synth;

pub use ransac::{eight_point, ransac_fundamental, FundamentalMatrix, InlierSet, RansacParams};
pub use sao::{
    angular_order, ced, knn_from_delaunay, sao_filter, sao_filter_iterative, sao_scores,
    NeighborGraph, NeighborOrder, SaoOutcome, SaoScore,
};
pub use synth::{two_view, TwoView};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSet;
use crate::hashmatch::{MatchStage, PairMatches};
use crate::retrieval::Pair;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("{found} matches, at least 8 needed")]
    TooFewMatches { found: usize },
    #[error("no model with at least 8 inliers (best {best})")]
    NoModel { best: usize },
    #[error("neighbor {0} coincides with the center")]
    CoincidentPoint(usize),
    #[error("match ({0}, {1}) refers to a missing keypoint")]
    BadIndex(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("image ids {found:?} do not match pair {expected:?}")]
    PairMismatch { expected: Pair, found: Pair },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaoMode {
    /// Score once, keep scores at or below the threshold.
    Single,
    /// Drop the worst-scored matches and rescore until all pass.
    #[default]
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyParams {
    pub neighbors: usize,
    pub score_threshold: f64,
    pub sao_mode: SaoMode,
    pub ransac: RansacParams,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            neighbors: 6,
            score_threshold: 0.5,
            sao_mode: SaoMode::Iterative,
            ransac: RansacParams::default(),
        }
    }
}

impl VerifyParams {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |m: String| Err(VerifyError::InvalidParameter(m));
        if self.neighbors == 0 {
            return bad("neighbors must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            ));
        }
        if !(self.ransac.threshold_px > 0.0) {
            return bad(format!(
                "epipolar threshold {} must be > 0",
                self.ransac.threshold_px
            ));
        }
        if !(self.ransac.confidence > 0.0 && self.ransac.confidence < 1.0) {
            return bad(format!(
                "confidence {} outside (0, 1)",
                self.ransac.confidence
            ));
        }
        if self.ransac.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RansacStatus {
    Ok,
    TooFewMatches,
    NoModel,
}

/// One JSON line of per-pair verification output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pair: Pair,
    pub initial: usize,
    pub after_sao: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub sao_passed_through: bool,
    pub sao_fallback: bool,
    pub ransac_iterations: usize,
    pub ransac_status: RansacStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointVerification {
    /// Indices into the input correspondences, ascending.
    pub kept: Vec<usize>,
    pub after_sao: usize,
    pub sao: SaoOutcome,
    pub ransac: Result<InlierSet, RansacStatus>,
}

/// Mixes the run seed with the pair so every pair draws its own RANSAC
/// samples regardless of the order pairs are verified in.
pub fn pair_seed(seed: u64, pair: Pair) -> u64 {
    let mut z = seed ^ pair.0.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ pair.1.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SAO then RANSAC over correspondences `p1[i] <-> p2[i]`. A pair that
/// cannot support a model keeps nothing.
pub fn verify_points(
    pair: Pair,
    p1: &[[f64; 2]],
    p2: &[[f64; 2]],
    params: &VerifyParams,
) -> PointVerification {
    let sao = match params.sao_mode {
        SaoMode::Single => sao_filter(p1, p2, params.neighbors, params.score_threshold),
        SaoMode::Iterative => {
            sao_filter_iterative(p1, p2, params.neighbors, params.score_threshold)
        }
    };
    let q1: Vec<[f64; 2]> = sao.kept.iter().map(|&i| p1[i]).collect();
    let q2: Vec<[f64; 2]> = sao.kept.iter().map(|&i| p2[i]).collect();
    let rp = RansacParams {
        seed: pair_seed(params.ransac.seed, pair),
        ..params.ransac
    };
    let ransac = match ransac_fundamental(pair, &q1, &q2, &rp) {
        Ok(mut set) => {
            set.kept = set.kept.iter().map(|&k| sao.kept[k]).collect();
            Ok(set)
        }
        Err(VerifyError::TooFewMatches { .. }) => Err(RansacStatus::TooFewMatches),
        Err(_) => Err(RansacStatus::NoModel),
    };
    PointVerification {
        kept: ransac.as_ref().map(|s| s.kept.clone()).unwrap_or_default(),
        after_sao: sao.kept.len(),
        sao,
        ransac,
    }
}

/// Verifies the initial matches of one pair; `q` and `t` are the query and
/// train images of `initial.pair`.
pub fn verify_pair(
    initial: &PairMatches,
    q: &FeatureSet,
    t: &FeatureSet,
    params: &VerifyParams,
) -> Result<(PairMatches, PairStats), VerifyError> {
    let found = (q.image_id(), t.image_id());
    if found != initial.pair {
        return Err(VerifyError::PairMismatch {
            expected: initial.pair,
            found,
        });
    }
    let (qk, tk) = (q.keypoints(), t.keypoints());
    let mut p1 = Vec::with_capacity(initial.len());
    let mut p2 = Vec::with_capacity(initial.len());
    for &(a, b) in &initial.matches {
        match (qk.get(a), tk.get(b)) {
            (Some(x), Some(y)) => {
                p1.push(x.position());
                p2.push(y.position());
            }
            _ => return Err(VerifyError::BadIndex(a, b)),
        }
    }
    let v = verify_points(initial.pair, &p1, &p2, params);
    let kept: Vec<(usize, usize)> = v.kept.iter().map(|&i| initial.matches[i]).collect();
    let stats = PairStats {
        pair: initial.pair,
        initial: initial.len(),
        after_sao: v.after_sao,
        inliers: kept.len(),
        inlier_ratio: if initial.is_empty() {
            0.0
        } else {
            kept.len() as f64 / initial.len() as f64
        },
        sao_passed_through: v.sao.passed_through,
        sao_fallback: v.sao.fallback,
        ransac_iterations: v.ransac.as_ref().map_or(0, |s| s.iterations),
        ransac_status: v.ransac.as_ref().map_or_else(|e| *e, |_| RansacStatus::Ok),
    };
    Ok((
        PairMatches::new(initial.pair, kept, MatchStage::Verified),
        stats,
    ))
}

pub fn stats_to_json_lines(stats: &[PairStats]) -> String {
    let mut out = String::new();
    for s in stats {
        out.push_str(&serde_json::to_string(s).expect("stats serialize"));
        out.push('\n');
    }
    out
}
