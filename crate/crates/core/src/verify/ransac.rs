//! Fundamental matrix by normalized 8-point inside RANSAC.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VerifyError;
use crate::retrieval::Pair;

/// Rank 2, unit Frobenius norm, largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Projects `m` to rank 2 and rescales it; `None` for a (near) zero matrix.
    /// The smallest singular value is zeroed as `m - (m v)(v)ᵀ`, `v` the
    /// eigenvector of `mᵀm` with the smallest eigenvalue.
    pub fn from_matrix(m: Matrix3<f64>) -> Option<Self> {
        let e = (m.transpose() * m).symmetric_eigen();
        let (imin, _) = e.eigenvalues.argmin();
        let v = e.eigenvectors.column(imin).into_owned();
        Self::scaled(m - m * v * v.transpose())
    }

    /// Unit Frobenius norm and sign only; `m` must already be rank 2.
    fn scaled(mut f: Matrix3<f64>) -> Option<Self> {
        let norm = f.norm();
        if !(norm > 1e-300) || !norm.is_finite() {
            return None;
        }
        f /= norm;
        let (mut best, mut sign) = (0.0, 1.0);
        for v in f.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        Some(Self(f * sign))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `x2ᵀ F x1`.
    pub fn residual(&self, x1: [f64; 2], x2: [f64; 2]) -> f64 {
        let a = Vector3::new(x1[0], x1[1], 1.0);
        let b = Vector3::new(x2[0], x2[1], 1.0);
        b.dot(&(self.0 * a))
    }

    /// Root of the summed squared distances of each point to its epipolar line.
    pub fn symmetric_distance(&self, x1: [f64; 2], x2: [f64; 2]) -> f64 {
        let a = Vector3::new(x1[0], x1[1], 1.0);
        let b = Vector3::new(x2[0], x2[1], 1.0);
        let l2 = self.0 * a;
        let l1 = self.0.transpose() * b;
        let r = b.dot(&l2);
        let n2 = l2[0] * l2[0] + l2[1] * l2[1];
        let n1 = l1[0] * l1[0] + l1[1] * l1[1];
        if n1 == 0.0 || n2 == 0.0 {
            return f64::INFINITY;
        }
        (r * r / n1 + r * r / n2).sqrt()
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_iters: usize,
    pub threshold_px: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iters: 2048,
            threshold_px: 2.0,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InlierSet {
    pub pair: Pair,
    /// Indices into the input correspondences, ascending.
    pub kept: Vec<usize>,
    pub model: FundamentalMatrix,
    pub inlier_ratio: f64,
    pub iterations: usize,
}

/// Similarity taking the points to zero centroid and mean distance √2.
fn normalizer(pts: &[[f64; 2]], idx: &[usize]) -> Option<Matrix3<f64>> {
    let n = idx.len() as f64;
    let cx = idx.iter().map(|&i| pts[i][0]).sum::<f64>() / n;
    let cy = idx.iter().map(|&i| pts[i][1]).sum::<f64>() / n;
    let d = idx
        .iter()
        .map(|&i| ((pts[i][0] - cx).powi(2) + (pts[i][1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(d > 0.0) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / d;
    Some(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

/// Normalized 8-point estimate over `idx` (at least 8 correspondences).
pub fn eight_point(p1: &[[f64; 2]], p2: &[[f64; 2]], idx: &[usize]) -> Option<FundamentalMatrix> {
    if idx.len() < 8 {
        return None;
    }
    let t1 = normalizer(p1, idx)?;
    let t2 = normalizer(p2, idx)?;
    let rows = idx.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (r, &i) in idx.iter().enumerate() {
        let x1 = t1 * Vector3::new(p1[i][0], p1[i][1], 1.0);
        let x2 = t2 * Vector3::new(p2[i][0], p2[i][1], 1.0);
        for (k, v) in [
            x2[0] * x1[0],
            x2[0] * x1[1],
            x2[0],
            x2[1] * x1[0],
            x2[1] * x1[1],
            x2[1],
            x1[0],
            x1[1],
            1.0,
        ]
        .into_iter()
        .enumerate()
        {
            a[(r, k)] = v;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let (imin, _) = svd.singular_values.argmin();
    let f = vt.row(imin);
    let fhat = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    // rank 2 in normalized coordinates, then back to pixels
    let fn_ = FundamentalMatrix::from_matrix(fhat)?;
    FundamentalMatrix::scaled(t2.transpose() * fn_.0 * t1)
}

fn inliers_of(
    f: &FundamentalMatrix,
    p1: &[[f64; 2]],
    p2: &[[f64; 2]],
    threshold: f64,
) -> Vec<usize> {
    (0..p1.len())
        .filter(|&i| f.symmetric_distance(p1[i], p2[i]) < threshold)
        .collect()
}

fn required_iterations(inliers: usize, total: usize, confidence: f64) -> f64 {
    let w = inliers as f64 / total as f64;
    let all_good = w.powi(8);
    if all_good >= 1.0 {
        return 0.0;
    }
    if all_good <= 0.0 {
        return f64::INFINITY;
    }
    let k = ((1.0 - confidence).ln() / (-all_good).ln_1p()).ceil();
    if k.is_finite() {
        k.max(0.0)
    } else {
        f64::INFINITY
    }
}

/// RANSAC over correspondences `p1[i] <-> p2[i]`. The best sample model is
/// refit on its inliers until the inlier set stops growing.
pub fn ransac_fundamental(
    pair: Pair,
    p1: &[[f64; 2]],
    p2: &[[f64; 2]],
    params: &RansacParams,
) -> Result<InlierSet, VerifyError> {
    assert_eq!(p1.len(), p2.len());
    let n = p1.len();
    if n < 8 {
        return Err(VerifyError::TooFewMatches { found: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(FundamentalMatrix, Vec<usize>)> = None;
    let mut needed = params.max_iters as f64;
    let mut iterations = 0;
    while (iterations as f64) < needed.min(params.max_iters as f64) {
        iterations += 1;
        let idx = sample(&mut rng, n, 8).into_vec();
        let Some(f) = eight_point(p1, p2, &idx) else {
            continue;
        };
        let inl = inliers_of(&f, p1, p2, params.threshold_px);
        if best.as_ref().is_none_or(|b| inl.len() > b.1.len()) {
            needed = required_iterations(inl.len(), n, params.confidence);
            best = Some((f, inl));
        }
    }
    let found = best.as_ref().map_or(0, |b| b.1.len());
    let Some((mut model, mut kept)) = best.filter(|b| b.1.len() >= 8) else {
        return Err(VerifyError::NoModel { best: found });
    };
    for _ in 0..10 {
        let Some(f) = eight_point(p1, p2, &kept) else {
            break;
        };
        let inl = inliers_of(&f, p1, p2, params.threshold_px);
        if inl.len() < kept.len() {
            break;
        }
        let same = inl == kept;
        model = f;
        kept = inl;
        if same {
            break;
        }
    }
    Ok(InlierSet {
        pair,
        inlier_ratio: kept.len() as f64 / n as f64,
        kept,
        model,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_two_and_unit_norm() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0);
        let f = FundamentalMatrix::from_matrix(m).unwrap();
        assert!((f.matrix().norm() - 1.0).abs() < 1e-12);
        let s = DMatrix::from_column_slice(3, 3, f.matrix().as_slice()).singular_values();
        assert!(s.min() < 1e-8);
        assert!(FundamentalMatrix::from_matrix(Matrix3::zeros()).is_none());
    }

    #[test]
    fn too_few() {
        let p = vec![[0.0, 0.0]; 7];
        assert!(matches!(
            ransac_fundamental((0, 1), &p, &p, &RansacParams::default()),
            Err(VerifyError::TooFewMatches { found: 7 })
        ));
    }

    #[test]
    fn iteration_bound() {
        assert_eq!(required_iterations(10, 10, 0.999), 0.0);
        assert!(required_iterations(0, 10, 0.999).is_infinite());
        assert!(required_iterations(4, 500, 0.999) > 1e9);
        // w = 0.5: log(0.001) / log(1 - 1/256)
        assert_eq!(required_iterations(5, 10, 0.999), 1765.0);
    }
}
