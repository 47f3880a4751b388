//! Band-structured synthetic scenes.
//!
//! World points are laid out along a strip; owner `o` holds the points of
//! strip cell `o`, and image `i` observes cells `i - band ..= i`. Images `i`
//! and `j` therefore share points exactly when `|i - j| <= band`. Each
//! observation is a noisy copy of its world descriptor placed through a
//! per-image affine map, so correspondences between two images are related
//! by an affine map as well.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    normalize_f64, Descriptor, FeatureError, FeatureSet, ImageId, Keypoint, DESCRIPTOR_DIM,
};

/// Number of Gaussian cluster centers world descriptors are drawn around.
pub const CLUSTER_CENTERS: usize = 32;
/// Per-component spread of world descriptors around their cluster center.
pub const CLUSTER_SPREAD: f64 = 0.1;
/// Side of the virtual square image plane, pixels.
pub const IMAGE_SIZE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScene {
    pub n_images: usize,
    pub points_per_image: usize,
    /// How many neighboring images share content on each side.
    pub overlap_band: usize,
    /// Per-component std of observation noise in descriptor space.
    pub noise_sigma: f64,
    /// Fraction of observations whose keypoint is moved to a random position.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            n_images: 20,
            points_per_image: 500,
            overlap_band: 3,
            noise_sigma: 0.02,
            outlier_fraction: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidScene(m));
        if self.n_images == 0 {
            return bad("n_images must be >= 1".into());
        }
        if self.overlap_band >= self.n_images {
            return bad(format!(
                "overlap_band {} must be < n_images {}",
                self.overlap_band, self.n_images
            ));
        }
        if self.points_per_image < self.overlap_band + 1 {
            return bad(format!(
                "points_per_image {} must be >= overlap_band + 1",
                self.points_per_image
            ));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad(format!(
                "outlier_fraction {} not in [0,1]",
                self.outlier_fraction
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return bad(format!(
                "noise_sigma {} must be finite and >= 0",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// A true feature correspondence between two images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Correspondence {
    pub pair: (ImageId, ImageId),
    pub query_idx: usize,
    pub train_idx: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Every overlapping image pair `(i, j)` with `i < j`.
    pub pairs: Vec<(ImageId, ImageId)>,
    /// Geometrically consistent correspondences, sorted.
    pub correspondences: Vec<Correspondence>,
}

struct WorldPoint {
    desc: Vec<f64>,
    pos: [f64; 2],
    scale: f64,
    orientation: f64,
}

struct Observation {
    world: usize,
    displaced: bool,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn generate_synthetic(
    scene: &SyntheticScene,
) -> Result<(Vec<FeatureSet>, GroundTruth), FeatureError> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let band = scene.overlap_band;
    let per_owner = scene.points_per_image / (band + 1);
    let cell = IMAGE_SIZE / (band + 1) as f64;

    let centers: Vec<Vec<f64>> = (0..CLUSTER_CENTERS)
        .map(|_| unit(gaussian_vec(&mut rng, DESCRIPTOR_DIM)))
        .collect();
    let draw_world = |rng: &mut ChaCha8Rng, x0: f64, x1: f64| {
        let c = &centers[rng.random_range(0..CLUSTER_CENTERS)];
        let g = gaussian_vec(rng, DESCRIPTOR_DIM);
        let desc = unit(
            c.iter()
                .zip(&g)
                .map(|(c, g)| c + CLUSTER_SPREAD * g)
                .collect(),
        );
        WorldPoint {
            desc,
            pos: [rng.random_range(x0..x1), rng.random_range(0.0..IMAGE_SIZE)],
            scale: rng.random_range(1.5..12.0),
            orientation: rng.random_range(0.0..std::f64::consts::TAU),
        }
    };

    let mut world = Vec::with_capacity(scene.n_images * per_owner);
    for o in 0..scene.n_images {
        let x0 = o as f64 * cell;
        for _ in 0..per_owner {
            world.push(draw_world(&mut rng, x0, x0 + cell));
        }
    }

    let mut sets = Vec::with_capacity(scene.n_images);
    // local index of each world point in each image, if observed undisplaced
    let mut local: Vec<Vec<Option<usize>>> = Vec::with_capacity(scene.n_images);

    for i in 0..scene.n_images {
        let theta: f64 = rng.random_range(-0.2..0.2);
        let s: f64 = rng.random_range(0.9..1.1);
        let shear: f64 = rng.random_range(-0.05..0.05);
        let (sin, cos) = theta.sin_cos();
        let a = [
            [s * cos, s * (-sin + shear * cos)],
            [s * sin, s * (cos + shear * sin)],
        ];
        let wc = [
            (i as f64 - band as f64) * cell + IMAGE_SIZE / 2.0,
            IMAGE_SIZE / 2.0,
        ];
        let to_image = |p: [f64; 2]| {
            let d = [p[0] - wc[0], p[1] - wc[1]];
            [
                a[0][0] * d[0] + a[0][1] * d[1] + IMAGE_SIZE / 2.0,
                a[1][0] * d[0] + a[1][1] * d[1] + IMAGE_SIZE / 2.0,
            ]
        };

        let first_owner = i.saturating_sub(band);
        let mut obs: Vec<Observation> = Vec::with_capacity(scene.points_per_image);
        for o in first_owner..=i {
            for k in 0..per_owner {
                let displaced = rng.random::<f64>() < scene.outlier_fraction;
                obs.push(Observation {
                    world: o * per_owner + k,
                    displaced,
                });
            }
        }
        let shared = obs.len();
        // image-local clutter that nothing else observes
        let mut clutter = Vec::new();
        while shared + clutter.len() < scene.points_per_image {
            clutter.push(draw_world(&mut rng, 0.0, IMAGE_SIZE));
        }

        let mut order: Vec<usize> = (0..shared + clutter.len()).collect();
        order.shuffle(&mut rng);

        let mut keypoints = vec![None; order.len()];
        let mut descriptors = vec![None; order.len()];
        let mut li = vec![None; world.len()];
        for (src, &slot) in order.iter().enumerate() {
            let (wp, displaced, widx) = if src < shared {
                let ob = &obs[src];
                (&world[ob.world], ob.displaced, Some(ob.world))
            } else {
                (&clutter[src - shared], false, None)
            };
            let pos = if displaced || widx.is_none() {
                [
                    rng.random_range(0.0..IMAGE_SIZE),
                    rng.random_range(0.0..IMAGE_SIZE),
                ]
            } else {
                to_image(wp.pos)
            };
            let sigma = scene.noise_sigma * rng.random_range(0.5..1.5);
            let noisy: Vec<f64> = wp
                .desc
                .iter()
                .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let kp = Keypoint::new(
                pos[0] as f32,
                pos[1] as f32,
                (wp.scale * s) as f32,
                (wp.orientation + theta) as f32,
            )?;
            keypoints[slot] = Some(kp);
            descriptors[slot] = Some(normalize_f64(&noisy)?);
            if let Some(w) = widx {
                if !displaced {
                    li[w] = Some(slot);
                }
            }
        }
        let keypoints: Vec<Keypoint> = keypoints.into_iter().map(Option::unwrap).collect();
        let descriptors: Vec<Descriptor> = descriptors.into_iter().map(Option::unwrap).collect();
        sets.push(FeatureSet::new(i as ImageId, keypoints, descriptors)?);
        local.push(li);
    }

    let mut gt = GroundTruth::default();
    for i in 0..scene.n_images {
        for j in i + 1..=(i + band).min(scene.n_images - 1) {
            gt.pairs.push((i as ImageId, j as ImageId));
            let owners = j.saturating_sub(band)..=i;
            for o in owners {
                for w in o * per_owner..(o + 1) * per_owner {
                    if let (Some(a), Some(b)) = (local[i][w], local[j][w]) {
                        gt.correspondences.push(Correspondence {
                            pair: (i as ImageId, j as ImageId),
                            query_idx: a,
                            train_idx: b,
                        });
                    }
                }
            }
        }
    }
    gt.correspondences.sort();
    Ok((sets, gt))
}
