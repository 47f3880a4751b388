mod common;

use blockmatch::features::FeatureSet;
use blockmatch::hashmatch::{
    brute_force_match, compute_codes, make_hash_functions, match_pair, HashError, HashFunctions,
    Matcher,
};
use common::*;
use proptest::prelude::*;

#[test]
fn exact_copy_beats_distractors() {
    let mut r = rng(1);
    let hf = make_hash_functions(0);
    let d = unit(&gaussian_vec(&mut r, 1.0));
    let q = feature_set(0, vec![d.clone()]);
    let mut ts: Vec<_> = (0..7).map(|_| unit(&gaussian_vec(&mut r, 1.0))).collect();
    ts.insert(3, d);
    let t = feature_set(1, ts);
    let mean = [0.0; 128];
    let (qc, tc) = (compute_codes(&q, &hf, &mean), compute_codes(&t, &hf, &mean));
    let m = match_pair((&qc, &q), (&tc, &t), 8, 0.5).unwrap();
    assert_eq!(m.matches, vec![(0, 3)]);
    assert_eq!(m.pair, (0, 1));
}

#[test]
fn empty_sets() {
    let hf = make_hash_functions(0);
    let mut r = rng(2);
    let q = feature_set(
        0,
        (0..3).map(|_| unit(&gaussian_vec(&mut r, 1.0))).collect(),
    );
    let t = FeatureSet::empty(1);
    assert!(brute_force_match(&q, &t, 0.5).is_empty());
    let mean = [0.0; 128];
    let m = match_pair(
        (&compute_codes(&q, &hf, &mean), &q),
        (&compute_codes(&t, &hf, &mean), &t),
        8,
        0.5,
    )
    .unwrap();
    assert!(m.is_empty());
}

#[test]
fn different_seeds_are_rejected() {
    let mut r = rng(3);
    let q = feature_set(0, vec![unit(&gaussian_vec(&mut r, 1.0))]);
    let mean = [0.0; 128];
    let a = compute_codes(&q, &make_hash_functions(1), &mean);
    let b = compute_codes(&q, &make_hash_functions(2), &mean);
    assert!(matches!(
        match_pair((&a, &q), (&b, &q), 8, 0.5),
        Err(HashError::HashMismatch { .. })
    ));
    let c = compute_codes(&q, &make_hash_functions(1), &[0.01; 128]);
    assert!(matches!(
        match_pair((&a, &q), (&c, &q), 8, 0.5),
        Err(HashError::HashMismatch { .. })
    ));
}

#[test]
fn self_match_on_distinct_copies() {
    let sets = cluster_images(2, 200, 1.0, 0.0, 4);
    let (q, t) = (&sets[0], &sets[1]);
    let m = brute_force_match(q, t, 0.5);
    let diag = m.matches.iter().filter(|(a, b)| a == b).count();
    assert_eq!(diag, m.len());
    assert!(m.len() > 150);
}

#[test]
fn brute_force_agrees_with_sorting_oracle() {
    let sets = cluster_images(2, 300, 0.5, 0.05, 5);
    let m = brute_force_match(&sets[0], &sets[1], 0.6);
    let mut expected = Vec::new();
    for (i, d) in sets[0].descriptors().iter().enumerate() {
        let s = sorted_neighbors(d, &sets[1]);
        if s[0].0 < s[1].0 * 0.6 {
            expected.push((i, s[0].1));
        }
    }
    assert_eq!(m.matches, expected);
}

#[test]
fn small_instances_equal_oracle() {
    let hf = make_hash_functions(11);
    let mut r = rng(12);
    let mut kept = 0;
    for _ in 0..100 {
        let inst = small_instance(&mut r, &hf, 8);
        let got = match_pair((&inst.qc, &inst.q), (&inst.tc, &inst.t), 8, 0.5).unwrap();
        let want = brute_force_match(&inst.q, &inst.t, 0.5);
        assert_eq!(got.matches, want.matches);
        kept += got.len();
    }
    assert!(kept > 0);
}

#[test]
fn candidates_come_from_shared_buckets_in_hamming_order() {
    let sets = cluster_images(2, 400, 0.5, 0.05, 6);
    let hf = make_hash_functions(7);
    let mean = mean_of(&[&sets[0], &sets[1]]);
    let qc = compute_codes(&sets[0], &hf, &mean);
    let tc = compute_codes(&sets[1], &hf, &mean);
    let mut m = Matcher::new();
    for i in 0..qc.len() {
        let c = m.candidates(&qc, i, &tc, 8);
        assert!(c.len() <= 8);
        for w in c.windows(2) {
            assert!((w[0].hamming, w[0].train_idx) < (w[1].hamming, w[1].train_idx));
        }
        for x in &c {
            assert!((0..6).any(|t| qc.bucket(i, t) == tc.bucket(x.train_idx, t)));
            assert!(x.hamming as usize <= hf.fine_bits());
        }
    }
}

fn arb_pair() -> impl Strategy<Value = (u64, f32, f64, f64)> {
    (any::<u64>(), 0.01f32..0.2, 0.2f64..0.9, 0.2f64..0.9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ratio_monotone_and_deterministic((seed, noise, ra, rb) in arb_pair()) {
        let sets = cluster_images(2, 120, 0.6, noise, seed);
        let hf = HashFunctions::new(seed, 6, 8, 128).unwrap();
        let mean = mean_of(&[&sets[0], &sets[1]]);
        let qc = compute_codes(&sets[0], &hf, &mean);
        let tc = compute_codes(&sets[1], &hf, &mean);
        let (lo, hi) = if ra <= rb { (ra, rb) } else { (rb, ra) };
        let a = match_pair((&qc, &sets[0]), (&tc, &sets[1]), 8, lo).unwrap();
        let b = match_pair((&qc, &sets[0]), (&tc, &sets[1]), 8, hi).unwrap();
        prop_assert!(a.matches.iter().all(|m| b.matches.contains(m)));
        prop_assert_eq!(&a, &match_pair((&qc, &sets[0]), (&tc, &sets[1]), 8, lo).unwrap());
        let mut seen = std::collections::BTreeSet::new();
        prop_assert!(b.matches.iter().all(|&(q, _)| seen.insert(q)));
    }

    #[test]
    fn hamming_is_a_symmetric_distance(seed in any::<u64>()) {
        let sets = cluster_images(1, 20, 0.0, 0.0, seed);
        let hf = make_hash_functions(seed);
        let c = compute_codes(&sets[0], &hf, &[0.0; 128]);
        for i in 0..c.len() {
            prop_assert_eq!(blockmatch::hashmatch::hamming(c.fine_code(i), c.fine_code(i)), 0);
            for j in 0..c.len() {
                prop_assert_eq!(
                    blockmatch::hashmatch::hamming(c.fine_code(i), c.fine_code(j)),
                    blockmatch::hashmatch::hamming(c.fine_code(j), c.fine_code(i))
                );
            }
        }
    }
}
