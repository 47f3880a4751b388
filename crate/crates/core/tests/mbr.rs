use std::collections::BTreeSet;

mod common;

use blockmatch::mbr::{bandwidth, gps_order, iterate_schedule, LevelStructure, PermutationOrder};
use blockmatch::retrieval::{Pair, ViewGraph};
use common::*;
use proptest::prelude::*;

fn edge_list(g: &ViewGraph) -> Vec<(usize, usize)> {
    g.edges().collect()
}

fn reordered(g: &ViewGraph) -> ViewGraph {
    gps_order(g).unwrap().apply(g)
}

#[test]
fn scrambled_path_reaches_bandwidth_one() {
    // path 0-2-4-1-3
    let g = graph(5, &[(0, 2), (2, 4), (4, 1), (1, 3)]);
    assert_eq!(bandwidth(&g), 3);
    assert_eq!(min_bandwidth(5, &edge_list(&g)), 1);
    assert_eq!(bandwidth(&reordered(&g)), 1);
}

#[test]
fn star_reaches_optimum() {
    let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
    assert_eq!(bandwidth(&g), 4);
    assert_eq!(min_bandwidth(5, &edge_list(&g)), 2);
    assert_eq!(bandwidth(&reordered(&g)), 2);
}

#[test]
fn complete_graph_stays_full() {
    let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    assert_eq!(bandwidth(&reordered(&g)), 3);
}

#[test]
fn shuffled_band_recovers() {
    let n = 60u64;
    let mut ids: Vec<u64> = (0..n).collect();
    // deterministic scramble
    for i in 0..n as usize {
        ids.swap(i, (i * 37 + 11) % n as usize);
    }
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..(i + 4).min(n)).map(move |j| (i, j)))
        .collect();
    let g = ViewGraph::from_pairs(ids, edges).unwrap();
    assert!(bandwidth(&g) > 10);
    assert!(
        bandwidth(&reordered(&g)) <= 6,
        "{}",
        bandwidth(&reordered(&g))
    );
}

#[test]
fn band_scene_single_iteration() {
    let g = band(100, 5);
    let plan = iterate_schedule(&g, 10, 40).unwrap();
    assert_eq!(plan.iterations.len(), 1);
    plan.validate(&g.pairs().into_iter().collect()).unwrap();
}

#[test]
fn band_graphs_shrink_every_iteration() {
    for (n, w, blk, gpu) in [
        (50, 3, 2, 4),
        (80, 6, 3, 9),
        (120, 10, 5, 15),
        (200, 12, 4, 17),
    ] {
        let plan = iterate_schedule(&band(n, w), blk, gpu).unwrap();
        let dims: Vec<usize> = plan.iterations.iter().map(|it| it.dimension()).collect();
        assert!(dims.windows(2).all(|d| d[1] < d[0]), "{dims:?}");
    }
}

#[test]
fn complete_graph_with_tiny_budget_keeps_every_image() {
    // each image has three partners but only two positions within reach
    let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    let plan = iterate_schedule(&g, 1, 2).unwrap();
    assert_eq!(plan.iterations[0].dimension(), 4);
    assert_eq!(plan.iterations[0].pair_count(), 3);
    assert_eq!(plan.iterations[1].dimension(), 4);
}

#[test]
fn disconnected_components_are_both_covered() {
    let mut edges: Vec<(u64, u64)> = (0..9).map(|i| (i, i + 1)).collect();
    edges.extend((20..26).map(|i| (i, i + 1)));
    edges.push((30, 31));
    let g = graph(40, &edges);
    let order = gps_order(&g).unwrap();
    let h = order.apply(&g);
    // largest component first
    let first: BTreeSet<u64> = h.image_ids()[..10].iter().copied().collect();
    assert_eq!(first, (0..10).collect());
    let plan = iterate_schedule(&g, 2, 4).unwrap();
    plan.validate(&g.pairs().into_iter().collect()).unwrap();
    assert_eq!(plan.pair_count(), edges.len());
}

fn arb_graph(max_n: usize) -> impl Strategy<Value = ViewGraph> {
    (1..=max_n).prop_flat_map(|n| {
        let all: Vec<(u64, u64)> = (0..n as u64)
            .flat_map(|i| (i + 1..n as u64).map(move |j| (i, j)))
            .collect();
        let m = all.len();
        (
            Just(n),
            proptest::collection::vec(any::<bool>(), m),
            Just(all),
        )
            .prop_map(|(n, keep, all)| {
                let edges: Vec<Pair> = all
                    .into_iter()
                    .zip(keep)
                    .filter(|x| x.1)
                    .map(|x| x.0)
                    .collect();
                ViewGraph::from_pairs((0..n as u64).collect(), edges).unwrap()
            })
    })
}

fn arb_sparse_graph(max_n: usize) -> impl Strategy<Value = ViewGraph> {
    (2..=max_n).prop_flat_map(|n| {
        proptest::collection::vec((0..n as u64, 0..n as u64), 0..3 * n).prop_map(move |es| {
            let es: Vec<Pair> = es.into_iter().filter(|(a, b)| a != b).collect();
            ViewGraph::from_pairs((0..n as u64).collect(), es).unwrap()
        })
    })
}

fn pairs_of(g: &ViewGraph) -> BTreeSet<Pair> {
    g.pairs().into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn within_twice_optimum_small(g in arb_graph(8)) {
        let opt = min_bandwidth(g.len(), &edge_list(&g));
        let got = bandwidth(&reordered(&g));
        prop_assert!(got <= 2 * opt, "got {} optimum {}", got, opt);
    }

    #[test]
    fn order_is_bijection_preserving_edges(g in arb_sparse_graph(200)) {
        let order = gps_order(&g).unwrap();
        prop_assert!(PermutationOrder::new(order.as_slice().to_vec()).is_ok());
        let h = order.apply(&g);
        prop_assert_eq!(pairs_of(&h), pairs_of(&g));
        prop_assert!(h.is_symmetric());
        prop_assert!(bandwidth(&h) <= bandwidth(&g));
    }

    #[test]
    fn level_structures_are_valid(g in arb_sparse_graph(60), root in 0usize..60) {
        let root = root % g.len();
        let ls = LevelStructure::rooted_at(&g, root);
        prop_assert_eq!(&ls.levels[0], &vec![root]);
        let comp = g.components().into_iter().find(|c| c.contains(&root)).unwrap();
        let mut members: Vec<usize> = ls.levels.concat();
        members.sort_unstable();
        prop_assert_eq!(members, comp);
        let mut at = vec![usize::MAX; g.len()];
        for (l, ns) in ls.levels.iter().enumerate() {
            for &a in ns { at[a] = l; }
        }
        for (a, b) in g.edges() {
            if at[a] != usize::MAX {
                prop_assert!(at[a].abs_diff(at[b]) <= 1);
            }
        }
    }

    #[test]
    fn plan_partitions_pairs_within_budget(
        g in arb_sparse_graph(120),
        size_blk in 1usize..12,
        extra in 0usize..20,
    ) {
        let size_gpu = 2 * size_blk + extra;
        let plan = iterate_schedule(&g, size_blk, size_gpu).unwrap();
        prop_assert!(plan.validate(&pairs_of(&g)).is_ok(), "{:?}", plan.validate(&pairs_of(&g)));
        // every iteration makes progress; images only ever leave
        for w in plan.iterations.windows(2) {
            prop_assert!(w[1].dimension() <= w[0].dimension());
        }
        for it in &plan.iterations {
            prop_assert!(it.pair_count() > 0);
        }
    }
}
