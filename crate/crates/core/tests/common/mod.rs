//! Test-only generators and oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use blockmatch::features::{normalize, Descriptor, FeatureSet, Keypoint, DESCRIPTOR_DIM};
use blockmatch::hashmatch::{compute_codes, HashCodeSet, HashFunctions};
use blockmatch::retrieval::ViewGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, scale: f32) -> [f32; DESCRIPTOR_DIM] {
    std::array::from_fn(|_| scale * rng.sample::<f32, _>(StandardNormal))
}

pub fn unit(v: &[f32; DESCRIPTOR_DIM]) -> Descriptor {
    normalize(v).unwrap()
}

pub fn perturb(rng: &mut ChaCha8Rng, d: &Descriptor, sigma: f32) -> Descriptor {
    let n = gaussian_vec(rng, sigma);
    unit(&std::array::from_fn(|k| d.values()[k] + n[k]))
}

pub fn feature_set(id: u64, ds: Vec<Descriptor>) -> FeatureSet {
    let kps = (0..ds.len())
        .map(|i| Keypoint::new(i as f32, (i * 7 % 13) as f32, 1.0 + i as f32, 0.0).unwrap())
        .collect();
    FeatureSet::new(id, kps, ds).unwrap()
}

pub fn mean_of(sets: &[&FeatureSet]) -> [f32; DESCRIPTOR_DIM] {
    let mut acc = [0f64; DESCRIPTOR_DIM];
    let mut n = 0usize;
    for s in sets {
        for d in s.descriptors() {
            for k in 0..DESCRIPTOR_DIM {
                acc[k] += d.values()[k] as f64;
            }
            n += 1;
        }
    }
    std::array::from_fn(|k| {
        if n == 0 {
            0.0
        } else {
            (acc[k] / n as f64) as f32
        }
    })
}

/// True iff every (query, train) feature pair shares a bucket in some table.
pub fn buckets_cover_all(q: &HashCodeSet, t: &HashCodeSet) -> bool {
    (0..q.len())
        .all(|i| (0..t.len()).all(|j| (0..q.tables()).any(|tb| q.bucket(i, tb) == t.bucket(j, tb))))
}

pub struct SmallInstance {
    pub q: FeatureSet,
    pub t: FeatureSet,
    pub qc: HashCodeSet,
    pub tc: HashCodeSet,
}

/// Small query/train sets around one center where every train feature is a
/// bucket candidate of every query and the train set fits in `k`. Rejection
/// sampled; the spread varies so both ratio-test outcomes occur.
pub fn small_instance(rng: &mut ChaCha8Rng, hf: &HashFunctions, k: usize) -> SmallInstance {
    loop {
        let center = unit(&gaussian_vec(rng, 1.0));
        let nq = rng.random_range(1..=4);
        let nt = rng.random_range(1..=k);
        let spread = rng.random_range(0.002f32..0.02);
        let qd: Vec<Descriptor> = (0..nq).map(|_| perturb(rng, &center, spread)).collect();
        let mut td: Vec<Descriptor> = (0..nt).map(|_| perturb(rng, &center, spread)).collect();
        if rng.random::<f64>() < 0.5 {
            // plant a near copy of a query so some instances pass the ratio test
            let src = qd[rng.random_range(0..nq)].clone();
            let slot = rng.random_range(0..nt);
            td[slot] = perturb(rng, &src, spread * 0.05);
        }
        let q = feature_set(1, qd);
        let t = feature_set(2, td);
        // centering on the instance itself would leave only the noise to hash
        let mean = [0.0; DESCRIPTOR_DIM];
        let qc = compute_codes(&q, hf, &mean);
        let tc = compute_codes(&t, hf, &mean);
        if buckets_cover_all(&qc, &tc) {
            return SmallInstance { q, t, qc, tc };
        }
    }
}

/// Images sharing noisy copies of common cluster-structured descriptors:
/// image `i` holds a copy of every base descriptor plus private clutter.
pub fn cluster_images(
    n_images: usize,
    per_image: usize,
    shared_fraction: f64,
    noise: f32,
    seed: u64,
) -> Vec<FeatureSet> {
    let mut r = rng(seed);
    let centers: Vec<[f32; DESCRIPTOR_DIM]> = (0..64).map(|_| gaussian_vec(&mut r, 1.0)).collect();
    let draw = |r: &mut ChaCha8Rng| {
        let c = &centers[r.random_range(0..centers.len())];
        let g = gaussian_vec(r, 0.35);
        unit(&std::array::from_fn(|k| c[k] + g[k]))
    };
    let shared = (per_image as f64 * shared_fraction) as usize;
    let base: Vec<Descriptor> = (0..shared).map(|_| draw(&mut r)).collect();
    (0..n_images)
        .map(|i| {
            let mut ds: Vec<Descriptor> = base.iter().map(|d| perturb(&mut r, d, noise)).collect();
            while ds.len() < per_image {
                ds.push(draw(&mut r));
            }
            feature_set(i as u64, ds)
        })
        .collect()
}

/// Exact nearest and second-nearest train index by sorting all distances.
pub fn sorted_neighbors(q: &Descriptor, t: &FeatureSet) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = t
        .descriptors()
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let s: f64 = q
                .values()
                .iter()
                .zip(e.values())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum();
            (s.sqrt(), j)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

pub fn graph(n: u64, edges: &[(u64, u64)]) -> ViewGraph {
    ViewGraph::from_pairs((0..n).collect(), edges.iter().copied()).unwrap()
}

pub fn band(n: u64, w: u64) -> ViewGraph {
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..(i + w + 1).min(n)).map(move |j| (i, j)))
        .collect();
    graph(n, &edges)
}

/// Exact minimum bandwidth by enumerating every permutation (Heap's algorithm).
pub fn min_bandwidth(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut pos: Vec<usize> = (0..n).collect();
    let eval = |pos: &[usize]| {
        edges
            .iter()
            .map(|&(a, b)| pos[a].abs_diff(pos[b]))
            .max()
            .unwrap_or(0)
    };
    let mut best = eval(&pos);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                pos.swap(0, i);
            } else {
                pos.swap(c[i], i);
            }
            best = best.min(eval(&pos));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Erdős–Rényi graph over ids `0..n`.
pub fn random_graph(n: u64, density: f64, seed: u64) -> ViewGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if r.random::<f64>() < density {
                edges.push((a, b));
            }
        }
    }
    graph(n, &edges)
}

/// Plain recursive edit distance with memo, minimized over every rotation of
/// both sequences.
pub fn ced_oracle(a: &[u8], b: &[u8]) -> usize {
    fn lev(
        a: &[u8],
        b: &[u8],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            lev(a, b, i + 1, j + 1, memo)
        } else {
            1 + lev(a, b, i + 1, j, memo)
                .min(lev(a, b, i, j + 1, memo))
                .min(lev(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    let rot = |s: &[u8], r: usize| -> Vec<u8> { s[r..].iter().chain(&s[..r]).copied().collect() };
    let mut best = a.len().max(b.len());
    for ra in 0..a.len().max(1) {
        for rb in 0..b.len().max(1) {
            let (x, y) = (
                if a.is_empty() { vec![] } else { rot(a, ra) },
                if b.is_empty() { vec![] } else { rot(b, rb) },
            );
            best = best.min(lev(&x, &y, 0, 0, &mut HashMap::new()));
        }
    }
    best
}
