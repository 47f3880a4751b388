mod common;

use blockmatch::features::{FeatureSet, Keypoint};
use blockmatch::hashmatch::{MatchStage, PairMatches};
use blockmatch::verify::*;
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn scatter(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)])
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn ced_matches_oracle_on_random_sequences() {
    let mut r = rng(31);
    for _ in 0..300 {
        let la = r.random_range(0..=8);
        let lb = r.random_range(0..=8);
        let a: Vec<u8> = (0..la).map(|_| r.random_range(0..5)).collect();
        let b: Vec<u8> = (0..lb).map(|_| r.random_range(0..5)).collect();
        assert_eq!(ced(&a, &b), ced_oracle(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn moved_match_scores_above_median_and_is_removed() {
    let mut r = rng(32);
    for _ in 0..20 {
        let p1 = scatter(&mut r, 50);
        let shift = [r.random_range(-80.0..80.0), r.random_range(-80.0..80.0)];
        let mut p2: Vec<[f64; 2]> = p1
            .iter()
            .map(|p| [p[0] + shift[0], p[1] + shift[1]])
            .collect();
        let moved = r.random_range(0..50);
        // far from where it belongs
        loop {
            let q = [r.random_range(0.0..1000.0), r.random_range(0.0..1000.0)];
            if (q[0] - p2[moved][0]).hypot(q[1] - p2[moved][1]) > 400.0 {
                p2[moved] = q;
                break;
            }
        }
        let (scores, _) = sao_scores(&p1, &p2, 6);
        let med = median(scores.iter().map(|s| s.score).collect());
        assert!(scores[moved].score > med);
        assert!(!sao_filter(&p1, &p2, 6, 0.5).kept.contains(&moved));
        assert!(!sao_filter_iterative(&p1, &p2, 6, 0.5).kept.contains(&moved));
    }
}

#[test]
fn exact_correspondences_fit_the_model() {
    for seed in 0..5 {
        let tv = two_view(100, 0, 0.0, 0.5, seed);
        let set = ransac_fundamental((0, 1), &tv.p1, &tv.p2, &RansacParams::default()).unwrap();
        assert_eq!(set.kept.len(), 100);
        for i in 0..100 {
            assert!(set.model.residual(tv.p1[i], tv.p2[i]).abs() < 1e-6);
        }
        let f = set.model.matrix();
        assert!((f.norm() - 1.0).abs() < 1e-12);
        let s = DMatrix::from_column_slice(3, 3, f.as_slice()).singular_values();
        assert!(s.min() < 1e-8);
        // the estimate is the true model up to sign and scale
        let d = (f - tv.truth.matrix())
            .norm()
            .min((f + tv.truth.matrix()).norm());
        assert!(d < 1e-6, "{d}");
    }
}

#[test]
fn uniform_outliers_are_rejected_at_one_pixel() {
    for seed in 0..10 {
        let tv = two_view(100, 50, 0.0, 0.5, 100 + seed);
        let params = RansacParams {
            threshold_px: 1.0,
            ..RansacParams::default()
        };
        let set = ransac_fundamental((0, 1), &tv.p1, &tv.p2, &params).unwrap();
        let tp = set.kept.iter().filter(|&&i| tv.inlier[i]).count();
        assert!(tp >= 95, "seed {seed}: {tp}");
        assert!(
            set.kept.len() - tp <= 2,
            "seed {seed}: {} false",
            set.kept.len() - tp
        );
        for &i in &set.kept {
            assert!(set.model.symmetric_distance(tv.p1[i], tv.p2[i]) < 1.0);
        }
    }
}

#[test]
fn seven_matches_are_too_few() {
    let tv = two_view(7, 0, 0.0, 0.5, 3);
    assert!(matches!(
        ransac_fundamental((0, 1), &tv.p1, &tv.p2, &RansacParams::default()),
        Err(VerifyError::TooFewMatches { found: 7 })
    ));
    let out = verify_points((0, 1), &tv.p1, &tv.p2, &VerifyParams::default());
    assert!(out.kept.is_empty());
    assert_eq!(out.ransac, Err(RansacStatus::TooFewMatches));
}

fn image(id: u64, pts: &[[f64; 2]]) -> FeatureSet {
    let mut set = feature_set(
        id,
        (0..pts.len())
            .map(|_| unit(&gaussian_vec(&mut rng(id), 1.0)))
            .collect(),
    );
    let kps: Vec<Keypoint> = pts
        .iter()
        .map(|p| Keypoint::new(p[0] as f32, p[1] as f32, 2.0, 0.0).unwrap())
        .collect();
    set = FeatureSet::new(id, kps, set.descriptors().to_vec()).unwrap();
    set
}

#[test]
fn verify_pair_maps_indices_back() {
    let tv = two_view(120, 60, 0.3, 0.02, 9);
    // query keypoints in order, train keypoints reversed
    let n = tv.p1.len();
    let rev: Vec<[f64; 2]> = tv.p2.iter().rev().copied().collect();
    let q = image(4, &tv.p1);
    let t = image(7, &rev);
    let initial = PairMatches::new(
        (4, 7),
        (0..n).map(|i| (i, n - 1 - i)).collect(),
        MatchStage::Initial,
    );
    let (out, stats) = verify_pair(&initial, &q, &t, &VerifyParams::default()).unwrap();
    assert_eq!(out.stage, MatchStage::Verified);
    assert_eq!(stats.initial, n);
    assert_eq!(stats.inliers, out.len());
    assert!(stats.inliers <= stats.after_sao && stats.after_sao <= stats.initial);
    assert!(out.matches.iter().all(|m| initial.matches.contains(m)));
    let tp = out.matches.iter().filter(|&&(i, _)| tv.inlier[i]).count();
    assert!(tp as f64 >= 0.9 * 120.0, "{tp}");
    assert_eq!(tp, out.len());
    assert_eq!(stats.ransac_status, RansacStatus::Ok);
    let line = stats_to_json_lines(std::slice::from_ref(&stats));
    let back: PairStats = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(back, stats);

    let wrong = PairMatches::new((4, 8), vec![], MatchStage::Initial);
    assert!(matches!(
        verify_pair(&wrong, &q, &t, &VerifyParams::default()),
        Err(VerifyError::PairMismatch { .. })
    ));
    let oob = PairMatches::new((4, 7), vec![(0, n)], MatchStage::Initial);
    assert!(matches!(
        verify_pair(&oob, &q, &t, &VerifyParams::default()),
        Err(VerifyError::BadIndex(0, _))
    ));
}

fn arb_seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 0..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ced_properties(a in arb_seq(), b in arb_seq(), r in 0usize..8) {
        let d = ced(&a, &b);
        prop_assert_eq!(d, ced(&b, &a));
        prop_assert!(d <= a.len().max(b.len()));
        if !a.is_empty() {
            let k = r % a.len();
            let rotated: Vec<u8> = a[k..].iter().chain(&a[..k]).copied().collect();
            prop_assert_eq!(ced(&a, &rotated), 0);
        }
        let some_rotation_equal = a.len() == b.len()
            && (a.is_empty() || (0..b.len()).any(|k| b[k..].iter().chain(&b[..k]).eq(a.iter())));
        prop_assert_eq!(d == 0, some_rotation_equal);
    }

    #[test]
    fn neighbor_lists_are_well_formed(seed in any::<u64>(), n in 1usize..60, k in 1usize..8) {
        let pts = scatter(&mut rng(seed), n);
        let g = knn_from_delaunay(&pts, k);
        for (i, ns) in g.neighbors.iter().enumerate() {
            prop_assert_eq!(ns.len(), k.min(n - 1));
            prop_assert!(!ns.contains(&i));
            let mut s = ns.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), ns.len());
        }
    }

    #[test]
    fn scores_survive_a_common_rotation(seed in any::<u64>(), angle in 0.1f64..6.0) {
        let mut r = rng(seed);
        let p1 = scatter(&mut r, 40);
        let p2: Vec<[f64; 2]> = p1
            .iter()
            .map(|p| [p[0] + r.random_range(-30.0..30.0), p[1] + r.random_range(-30.0..30.0)])
            .collect();
        let (s, c) = angle.sin_cos();
        let turn = |p: &[f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let q1: Vec<[f64; 2]> = p1.iter().map(turn).collect();
        let q2: Vec<[f64; 2]> = p2.iter().map(turn).collect();
        let (a, _) = sao_scores(&p1, &p2, 6);
        let (b, _) = sao_scores(&q1, &q2, 6);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((0.0..=1.0).contains(&x.score));
            prop_assert_eq!(x.score, y.score);
        }
    }

    #[test]
    fn verification_narrows_and_is_deterministic(seed in any::<u64>(), outliers in 0usize..80, mode in prop_oneof![Just(SaoMode::Single), Just(SaoMode::Iterative)]) {
        let tv = two_view(80, outliers, 0.5, 0.05, seed);
        let params = VerifyParams { sao_mode: mode, ..VerifyParams::default() };
        let a = verify_points((1, 2), &tv.p1, &tv.p2, &params);
        let b = verify_points((1, 2), &tv.p1, &tv.p2, &params);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.kept.iter().all(|i| a.sao.kept.contains(i)));
        prop_assert!(a.sao.kept.iter().all(|&i| i < tv.p1.len()));
        if let Ok(set) = &a.ransac {
            for &i in &set.kept {
                prop_assert!(set.model.symmetric_distance(tv.p1[i], tv.p2[i]) < params.ransac.threshold_px);
            }
        }
    }
}
