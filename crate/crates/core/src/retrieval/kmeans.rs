use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::RetrievalError;
use crate::features::{Descriptor, FeatureSet, DESCRIPTOR_DIM};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"BMCB";

/// Visual words for VLAD encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<[f32; DESCRIPTOR_DIM]>,
}

impl Codebook {
    pub fn new(centroids: Vec<[f32; DESCRIPTOR_DIM]>) -> Result<Self, RetrievalError> {
        if centroids.is_empty() {
            return Err(RetrievalError::InvalidParameter(
                "codebook needs >= 1 word".into(),
            ));
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RetrievalError::InvalidParameter(
                "non-finite centroid".into(),
            ));
        }
        Ok(Self { centroids })
    }

    pub fn k_words(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[[f32; DESCRIPTOR_DIM]] {
        &self.centroids
    }

    /// Index of the nearest centroid, lowest index on ties.
    pub fn nearest(&self, d: &[f32; DESCRIPTOR_DIM]) -> usize {
        nearest(&self.centroids, d).0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(12 + self.k_words() * DESCRIPTOR_DIM * 4);
        b.extend_from_slice(CODEBOOK_MAGIC);
        b.extend_from_slice(&(self.k_words() as u32).to_le_bytes());
        b.extend_from_slice(&(DESCRIPTOR_DIM as u32).to_le_bytes());
        for c in &self.centroids {
            for v in c {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, RetrievalError> {
        let bad = |m: &str| RetrievalError::Format(format!("codebook: {m}"));
        if b.len() < 12 {
            return Err(bad("truncated header"));
        }
        if &b[..4] != CODEBOOK_MAGIC {
            return Err(bad("bad magic"));
        }
        let k = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        if dim != DESCRIPTOR_DIM {
            return Err(bad("dimension is not 128"));
        }
        if b.len() < 12 + k * dim * 4 {
            return Err(bad("truncated body"));
        }
        let centroids = b[12..12 + k * dim * 4]
            .chunks_exact(dim * 4)
            .map(|row| {
                let mut c = [0f32; DESCRIPTOR_DIM];
                for (o, w) in c.iter_mut().zip(row.chunks_exact(4)) {
                    *o = f32::from_le_bytes(w.try_into().unwrap());
                }
                c
            })
            .collect();
        Self::new(centroids)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f32; DESCRIPTOR_DIM], b: &[f32; DESCRIPTOR_DIM]) -> f32 {
    let mut s = 0f32;
    for k in 0..DESCRIPTOR_DIM {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

fn nearest(centroids: &[[f32; DESCRIPTOR_DIM]], d: &[f32; DESCRIPTOR_DIM]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let dist = sq_dist(c, d);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

/// Picks training descriptors: `ceil(p% * n)` images sampled uniformly, and
/// from each the `h` features with the largest keypoint scale.
pub fn select_training_descriptors(
    features: &[FeatureSet],
    p_percent: f64,
    h: usize,
    seed: u64,
) -> Result<Vec<Descriptor>, RetrievalError> {
    if features.is_empty() {
        return Err(RetrievalError::EmptyInput);
    }
    if !(p_percent > 0.0 && p_percent <= 100.0) {
        return Err(RetrievalError::InvalidParameter(format!(
            "p = {p_percent} not in (0, 100]"
        )));
    }
    if h == 0 {
        return Err(RetrievalError::InvalidParameter("h must be >= 1".into()));
    }
    let n = features.len();
    let count = ((p_percent / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();

    let mut out = Vec::new();
    for i in chosen {
        let fs = &features[i];
        let mut idx: Vec<usize> = (0..fs.len()).collect();
        idx.sort_by(|&a, &b| {
            fs.keypoints()[b]
                .scale
                .total_cmp(&fs.keypoints()[a].scale)
                .then(a.cmp(&b))
        });
        out.extend(idx.into_iter().take(h).map(|k| fs.descriptors()[k].clone()));
    }
    Ok(out)
}

/// Per-iteration within-cluster SSE, recorded after each assignment step.
#[derive(Debug, Clone, Default)]
pub struct KMeansTrace {
    pub sse: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn train_codebook(
    descriptors: &[Descriptor],
    k_words: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Codebook, RetrievalError> {
    train_codebook_traced(descriptors, k_words, max_iters, seed).map(|(cb, _)| cb)
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are reseeded from
/// the point farthest from its assigned centroid.
pub fn train_codebook_traced(
    descriptors: &[Descriptor],
    k_words: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(Codebook, KMeansTrace), RetrievalError> {
    if k_words == 0 {
        return Err(RetrievalError::InvalidParameter(
            "k_words must be >= 1".into(),
        ));
    }
    if descriptors.len() < k_words {
        return Err(RetrievalError::TooFewDescriptors {
            have: descriptors.len(),
            need: k_words,
        });
    }
    let data: Vec<&[f32; DESCRIPTOR_DIM]> = descriptors.iter().map(|d| d.values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&data, k_words, &mut rng)?;

    let mut assign = vec![usize::MAX; data.len()];
    let mut trace = KMeansTrace::default();
    for it in 0..max_iters.max(1) {
        let next: Vec<(usize, f32)> = data.par_iter().map(|d| nearest(&centroids, d)).collect();
        let sse: f64 = next.iter().map(|&(_, d)| d as f64).sum();
        trace.sse.push(sse);
        trace.iterations = it + 1;
        let changed = next.iter().zip(&assign).any(|(n, &a)| n.0 != a);
        for (a, n) in assign.iter_mut().zip(&next) {
            *a = n.0;
        }
        if !changed {
            trace.converged = true;
            break;
        }
        update_centroids(&data, &mut assign, &mut centroids);
    }
    Ok((Codebook::new(centroids)?, trace))
}

fn seed_plus_plus(
    data: &[&[f32; DESCRIPTOR_DIM]],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f32; DESCRIPTOR_DIM]>, RetrievalError> {
    let mut centroids = vec![*data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|d| sq_dist(d, &centroids[0]) as f64)
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(RetrievalError::TooFewDescriptors {
                have: centroids.len(),
                need: k,
            });
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&v| v > 0.0).unwrap();
        for (i, &v) in d2.iter().enumerate() {
            if v > 0.0 && target < v {
                pick = i;
                break;
            }
            target -= v;
        }
        let c = *data[pick];
        for (dd, d) in d2.iter_mut().zip(data) {
            *dd = dd.min(sq_dist(d, &c) as f64);
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn update_centroids(
    data: &[&[f32; DESCRIPTOR_DIM]],
    assign: &mut [usize],
    centroids: &mut [[f32; DESCRIPTOR_DIM]],
) {
    let k = centroids.len();
    let mut sums = vec![[0f64; DESCRIPTOR_DIM]; k];
    let mut counts = vec![0usize; k];
    for (d, &a) in data.iter().zip(assign.iter()) {
        counts[a] += 1;
        for (s, &v) in sums[a].iter_mut().zip(d.iter()) {
            *s += v as f64;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        for (o, s) in centroids[c].iter_mut().zip(&sums[c]) {
            *o = (s / counts[c] as f64) as f32;
        }
    }
    let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    for empty in empties {
        // farthest point from its own centroid becomes a singleton cluster
        let far = (0..data.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(data[a], &centroids[assign[a]])
                    .total_cmp(&sq_dist(data[b], &centroids[assign[b]]))
                    .then(b.cmp(&a))
            });
        let Some(far) = far else { continue };
        let old = assign[far];
        counts[old] -= 1;
        for (s, &v) in sums[old].iter_mut().zip(data[far].iter()) {
            *s -= v as f64;
        }
        for (o, s) in centroids[old].iter_mut().zip(&sums[old]) {
            *o = (s / counts[old] as f64) as f32;
        }
        centroids[empty] = *data[far];
        counts[empty] = 1;
        assign[far] = empty;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{normalize, Keypoint};

    fn desc(f: impl Fn(usize) -> f32) -> Descriptor {
        let raw: Vec<f32> = (0..DESCRIPTOR_DIM).map(f).collect();
        normalize(&raw).unwrap()
    }

    fn set_with_scales(id: u64, scales: &[f32]) -> FeatureSet {
        let kps = scales
            .iter()
            .map(|&s| Keypoint::new(0.0, 0.0, s, 0.0).unwrap())
            .collect();
        let ds = (0..scales.len())
            .map(|i| desc(|k| ((k + i * 7) % 13) as f32 + 1.0))
            .collect();
        FeatureSet::new(id, kps, ds).unwrap()
    }

    #[test]
    fn training_selection_all() {
        let sets: Vec<_> = (0..4)
            .map(|i| set_with_scales(i, &[1.0, 2.0, 3.0]))
            .collect();
        let d = select_training_descriptors(&sets, 100.0, 1000, 1).unwrap();
        assert_eq!(d.len(), 12);
    }

    #[test]
    fn training_selection_half_of_ten() {
        let sets: Vec<_> = (0..10).map(|i| set_with_scales(i, &[1.0])).collect();
        let a = select_training_descriptors(&sets, 50.0, 1, 3).unwrap();
        let b = select_training_descriptors(&sets, 50.0, 1, 3).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
    }

    #[test]
    fn training_selection_top_scale_matches_exhaustive_sort() {
        let scales = [2.5, 9.0, 4.0];
        let fs = set_with_scales(0, &scales);
        let got = select_training_descriptors(std::slice::from_ref(&fs), 100.0, 2, 0).unwrap();
        // oracle: full sort by scale, descending
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| scales[b].partial_cmp(&scales[a]).unwrap());
        let expected: Vec<Descriptor> = order[..2]
            .iter()
            .map(|&i| fs.descriptors()[i].clone())
            .collect();
        assert_eq!(got, expected);
        assert_eq!(order[..2], [1, 2]);
    }

    #[test]
    fn training_selection_errors() {
        assert!(matches!(
            select_training_descriptors(&[], 10.0, 5, 0),
            Err(RetrievalError::EmptyInput)
        ));
        let sets = vec![set_with_scales(0, &[1.0])];
        assert!(select_training_descriptors(&sets, 0.0, 5, 0).is_err());
        assert!(select_training_descriptors(&sets, 101.0, 5, 0).is_err());
        assert!(select_training_descriptors(&sets, 10.0, 0, 0).is_err());
    }

    #[test]
    fn single_word_is_the_mean() {
        let ds: Vec<Descriptor> = (0..20)
            .map(|i| desc(|k| ((k * 3 + i) % 17) as f32))
            .collect();
        let cb = train_codebook(&ds, 1, 10, 0).unwrap();
        for k in 0..DESCRIPTOR_DIM {
            let mean: f64 = ds.iter().map(|d| d.values()[k] as f64).sum::<f64>() / 20.0;
            assert!((cb.centroids()[0][k] as f64 - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_descriptors() {
        let ds: Vec<Descriptor> = (0..3).map(|i| desc(|k| (k + i) as f32)).collect();
        assert!(matches!(
            train_codebook(&ds, 4, 10, 0),
            Err(RetrievalError::TooFewDescriptors { have: 3, need: 4 })
        ));
        // identical points cannot yield distinct centroids
        let same = vec![desc(|k| k as f32); 5];
        assert!(train_codebook(&same, 2, 10, 0).is_err());
    }

    #[test]
    fn codebook_bytes_round_trip_and_bad_magic() {
        let ds: Vec<Descriptor> = (0..10)
            .map(|i| desc(|k| ((k * i) % 11) as f32 + 0.5))
            .collect();
        let cb = train_codebook(&ds, 3, 20, 5).unwrap();
        let b = cb.to_bytes();
        assert_eq!(&b[..4], b"BMCB");
        assert_eq!(Codebook::from_bytes(&b).unwrap(), cb);
        let mut bad = b.clone();
        bad[1] = b'X';
        assert!(Codebook::from_bytes(&bad).is_err());
        assert!(Codebook::from_bytes(&b[..b.len() - 1]).is_err());
    }
}
