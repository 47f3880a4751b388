//! Random-hyperplane codes: coarse bucket ids per table and long fine codes.

use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{HashError, HashParams};
use crate::features::{FeatureSet, ImageId, DESCRIPTOR_DIM};

/// Largest supported coarse code width; a table holds `2^coarse_bits` buckets.
pub const MAX_COARSE_BITS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct HashFunctions {
    seed: u64,
    tables: usize,
    coarse_bits: usize,
    fine_bits: usize,
    /// `tables * coarse_bits` planes, then `fine_bits` planes, row-major.
    planes: Vec<f32>,
}

impl HashFunctions {
    pub fn new(
        seed: u64,
        tables: usize,
        coarse_bits: usize,
        fine_bits: usize,
    ) -> Result<Self, HashError> {
        if tables == 0 || coarse_bits == 0 || coarse_bits > MAX_COARSE_BITS || fine_bits == 0 {
            return Err(HashError::InvalidParameter(format!(
                "tables {tables}, coarse bits {coarse_bits}, fine bits {fine_bits}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = (tables * coarse_bits + fine_bits) * DESCRIPTOR_DIM;
        let planes = (0..count)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Ok(Self {
            seed,
            tables,
            coarse_bits,
            fine_bits,
            planes,
        })
    }

    pub fn from_params(seed: u64, p: &HashParams) -> Result<Self, HashError> {
        Self::new(seed, p.tables, p.coarse_bits, p.fine_bits)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn coarse_bits(&self) -> usize {
        self.coarse_bits
    }

    pub fn fine_bits(&self) -> usize {
        self.fine_bits
    }

    pub fn coarse_plane(&self, table: usize, bit: usize) -> &[f32] {
        let k = table * self.coarse_bits + bit;
        &self.planes[k * DESCRIPTOR_DIM..(k + 1) * DESCRIPTOR_DIM]
    }

    pub fn fine_plane(&self, bit: usize) -> &[f32] {
        let k = self.tables * self.coarse_bits + bit;
        &self.planes[k * DESCRIPTOR_DIM..(k + 1) * DESCRIPTOR_DIM]
    }

    pub fn fine_words(&self) -> usize {
        self.fine_bits.div_ceil(64)
    }
}

/// Default shape: 6 tables of 8 bits, 128 fine bits.
pub fn make_hash_functions(seed: u64) -> HashFunctions {
    HashFunctions::from_params(seed, &HashParams::default()).expect("default shape is valid")
}

/// Identifies the centering mean a code set was built with.
pub fn mean_fingerprint(mean: &[f32; DESCRIPTOR_DIM]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in mean {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Codes of one image plus its per-table bucket lookup (CSR: `offsets` has
/// `2^coarse_bits + 1` entries per table).
#[derive(Debug, Clone, PartialEq)]
pub struct HashCodeSet {
    image_id: ImageId,
    hash_seed: u64,
    mean_fingerprint: u64,
    tables: usize,
    coarse_bits: usize,
    fine_bits: usize,
    coarse: Vec<u32>,
    fine: Vec<u64>,
    offsets: Vec<u32>,
    members: Vec<u32>,
}

impl HashCodeSet {
    pub fn image_id(&self) -> ImageId {
        self.image_id
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn mean_fingerprint(&self) -> u64 {
        self.mean_fingerprint
    }

    pub fn len(&self) -> usize {
        self.coarse.len() / self.tables
    }

    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty()
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn fine_bits(&self) -> usize {
        self.fine_bits
    }

    pub fn bucket(&self, feature: usize, table: usize) -> u32 {
        self.coarse[feature * self.tables + table]
    }

    pub fn fine_code(&self, feature: usize) -> &[u64] {
        let w = self.fine_bits.div_ceil(64);
        &self.fine[feature * w..(feature + 1) * w]
    }

    /// Features of this image whose code in `table` is `bucket`, ascending.
    pub fn bucket_members(&self, table: usize, bucket: u32) -> &[u32] {
        let base = table * ((1usize << self.coarse_bits) + 1) + bucket as usize;
        &self.members[self.offsets[base] as usize..self.offsets[base + 1] as usize]
    }

    /// Storage held by the codes and lookup tables.
    pub fn size_bytes(&self) -> usize {
        4 * (self.coarse.len() + self.offsets.len() + self.members.len()) + 8 * self.fine.len()
    }

    pub fn same_functions(&self, other: &Self) -> bool {
        self.hash_seed == other.hash_seed
            && self.mean_fingerprint == other.mean_fingerprint
            && self.tables == other.tables
            && self.coarse_bits == other.coarse_bits
            && self.fine_bits == other.fine_bits
    }
}

pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A bit is set iff the centered descriptor has a strictly positive projection.
pub fn compute_codes(
    fs: &FeatureSet,
    hf: &HashFunctions,
    centering_mean: &[f32; DESCRIPTOR_DIM],
) -> HashCodeSet {
    let n = fs.len();
    let (tables, m, nb) = (hf.tables, hf.coarse_bits, hf.fine_bits);
    let words = hf.fine_words();
    let mut coarse = Vec::with_capacity(n * tables);
    let mut fine = vec![0u64; n * words];
    let mut centered = [0f32; DESCRIPTOR_DIM];
    for (f, d) in fs.descriptors().iter().enumerate() {
        for (c, (v, mu)) in centered
            .iter_mut()
            .zip(d.values().iter().zip(centering_mean))
        {
            *c = v - mu;
        }
        for t in 0..tables {
            let mut code = 0u32;
            for b in 0..m {
                if dot(&centered, hf.coarse_plane(t, b)) > 0.0 {
                    code |= 1 << b;
                }
            }
            coarse.push(code);
        }
        let out = &mut fine[f * words..(f + 1) * words];
        for b in 0..nb {
            if dot(&centered, hf.fine_plane(b)) > 0.0 {
                out[b / 64] |= 1 << (b % 64);
            }
        }
    }

    let buckets = 1usize << m;
    let mut offsets = vec![0u32; tables * (buckets + 1)];
    let mut members = vec![0u32; tables * n];
    for t in 0..tables {
        let base = t * (buckets + 1);
        for f in 0..n {
            offsets[base + coarse[f * tables + t] as usize + 1] += 1;
        }
        // offsets are global positions into `members`
        offsets[base] = (t * n) as u32;
        for k in 1..=buckets {
            offsets[base + k] += offsets[base + k - 1];
        }
        let mut fill: Vec<u32> = offsets[base..base + buckets].to_vec();
        for f in 0..n {
            let b = coarse[f * tables + t] as usize;
            members[fill[b] as usize] = f as u32;
            fill[b] += 1;
        }
    }

    HashCodeSet {
        image_id: fs.image_id(),
        hash_seed: hf.seed,
        mean_fingerprint: mean_fingerprint(centering_mean),
        tables,
        coarse_bits: m,
        fine_bits: nb,
        coarse,
        fine,
        offsets,
        members,
    }
}
