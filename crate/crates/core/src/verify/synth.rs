//! Two-view correspondences from a pair of projective cameras, with labeled
//! uniform outliers.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::FundamentalMatrix;
use crate::features::IMAGE_SIZE;

#[derive(Debug, Clone)]
pub struct TwoView {
    pub p1: Vec<[f64; 2]>,
    pub p2: Vec<[f64; 2]>,
    pub inlier: Vec<bool>,
    pub truth: FundamentalMatrix,
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0)
}

/// `inliers` projections of random 3-d points seen by both cameras (pixel
/// noise `noise_px`, both projections inside the image) and `outliers`
/// independent uniform positions, shuffled together. Point depths spread by
/// `±relief` around the mean depth; 0 gives a plane facing the first camera.
pub fn two_view(inliers: usize, outliers: usize, noise_px: f64, relief: f64, seed: u64) -> TwoView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = IMAGE_SIZE / 2.0;
    let focal = rng.random_range(600.0..1200.0);
    let k = Matrix3::new(focal, 0.0, c, 0.0, focal, c, 0.0, 0.0, 1.0);
    let rot = Rotation3::from_euler_angles(
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.3..0.3),
    )
    .into_inner();
    let t = Vector3::new(
        rng.random_range(0.5..1.5),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
    );
    let kinv = k.try_inverse().unwrap();
    let truth = FundamentalMatrix::from_matrix(kinv.transpose() * skew(&t) * rot * kinv).unwrap();

    let project = |x: Vector3<f64>| {
        let h = k * x;
        [h[0] / h[2], h[1] / h[2]]
    };
    let inside =
        |p: [f64; 2]| (0.0..IMAGE_SIZE).contains(&p[0]) && (0.0..IMAGE_SIZE).contains(&p[1]);

    let mut rows: Vec<([f64; 2], [f64; 2], bool)> = Vec::with_capacity(inliers + outliers);
    while rows.len() < inliers {
        let depth = 8.0 * (1.0 + relief * rng.random_range(-1.0..1.0));
        let ray = kinv
            * Vector3::new(
                rng.random_range(0.0..IMAGE_SIZE),
                rng.random_range(0.0..IMAGE_SIZE),
                1.0,
            );
        let x = ray * depth;
        let x2 = rot * x + t;
        if x2[2] <= 0.1 {
            continue;
        }
        let mut a = project(x);
        let mut b = project(x2);
        for p in [&mut a, &mut b] {
            p[0] += noise_px * rng.sample::<f64, _>(StandardNormal);
            p[1] += noise_px * rng.sample::<f64, _>(StandardNormal);
        }
        if inside(a) && inside(b) {
            rows.push((a, b, true));
        }
    }
    for _ in 0..outliers {
        let a = [
            rng.random_range(0.0..IMAGE_SIZE),
            rng.random_range(0.0..IMAGE_SIZE),
        ];
        let b = [
            rng.random_range(0.0..IMAGE_SIZE),
            rng.random_range(0.0..IMAGE_SIZE),
        ];
        rows.push((a, b, false));
    }
    rows.shuffle(&mut rng);
    TwoView {
        p1: rows.iter().map(|r| r.0).collect(),
        p2: rows.iter().map(|r| r.1).collect(),
        inlier: rows.iter().map(|r| r.2).collect(),
        truth,
    }
}
