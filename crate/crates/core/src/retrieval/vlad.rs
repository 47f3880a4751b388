use super::Codebook;
use crate::features::{FeatureSet, DESCRIPTOR_DIM};

/// Global image vector: per-word residual sums, signed-square-rooted and
/// L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct VladVector {
    values: Vec<f32>,
    degenerate: bool,
}

impl VladVector {
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// True when no residual mass was accumulated (empty image, or every
    /// descriptor sits exactly on a centroid). The vector is then all zeros.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn encode_vlad(fs: &FeatureSet, cb: &Codebook) -> VladVector {
    let dim = cb.k_words() * DESCRIPTOR_DIM;
    let mut acc = vec![0f64; dim];
    for d in fs.descriptors() {
        let w = cb.nearest(d.values());
        let c = &cb.centroids()[w];
        let slot = &mut acc[w * DESCRIPTOR_DIM..(w + 1) * DESCRIPTOR_DIM];
        for k in 0..DESCRIPTOR_DIM {
            slot[k] += d.values()[k] as f64 - c[k] as f64;
        }
    }
    for v in acc.iter_mut() {
        *v = v.signum() * v.abs().sqrt();
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return VladVector {
            values: vec![0.0; dim],
            degenerate: true,
        };
    }
    VladVector {
        values: acc.iter().map(|v| (v / norm) as f32).collect(),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{normalize, Descriptor, Keypoint};

    fn fs_of(ds: Vec<Descriptor>) -> FeatureSet {
        let kps = ds
            .iter()
            .map(|_| Keypoint::new(0.0, 0.0, 1.0, 0.0).unwrap())
            .collect();
        FeatureSet::new(0, kps, ds).unwrap()
    }

    fn d(f: impl Fn(usize) -> f32) -> Descriptor {
        normalize(&(0..128).map(f).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_residual_is_degenerate() {
        let c = d(|k| k as f32 + 1.0);
        let cb = Codebook::new(vec![*c.values()]).unwrap();
        let v = encode_vlad(&fs_of(vec![c.clone(), c]), &cb);
        assert!(v.is_degenerate());
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert!(encode_vlad(&FeatureSet::empty(3), &cb).is_degenerate());
    }

    #[test]
    fn single_term() {
        let c = d(|k| (k % 5) as f32 + 1.0);
        let x = d(|k| (k % 7) as f32 + 1.0);
        let cb = Codebook::new(vec![*c.values()]).unwrap();
        let v = encode_vlad(&fs_of(vec![x.clone()]), &cb);
        let raw: Vec<f64> = (0..128)
            .map(|k| {
                let r = x.values()[k] as f64 - c.values()[k] as f64;
                r.signum() * r.abs().sqrt()
            })
            .collect();
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..128 {
            assert!((v.values()[k] as f64 - raw[k] / n).abs() < 1e-6);
        }
        assert!((v.norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn residual_lands_in_nearest_word_slot() {
        let c0 = d(|k| if k < 64 { 1.0 } else { 0.0 });
        let c1 = d(|k| if k >= 64 { 1.0 } else { 0.0 });
        let cb = Codebook::new(vec![*c0.values(), *c1.values()]).unwrap();
        let x = d(|k| if k >= 64 { 1.0 } else { 0.1 });
        let v = encode_vlad(&fs_of(vec![x]), &cb);
        assert_eq!(v.values().len(), 256);
        assert!(v.values()[..128].iter().all(|&a| a == 0.0));
        assert!(v.values()[128..].iter().any(|&a| a != 0.0));
    }

    #[test]
    fn identical_sets_identical_vectors() {
        let cb = Codebook::new(vec![
            *d(|k| k as f32).values(),
            *d(|k| 1.0 + (k % 3) as f32).values(),
        ])
        .unwrap();
        let ds: Vec<Descriptor> = (0..5).map(|i| d(|k| ((k + i) % 9) as f32 + 0.1)).collect();
        assert_eq!(
            encode_vlad(&fs_of(ds.clone()), &cb),
            encode_vlad(&fs_of(ds), &cb)
        );
    }
}
