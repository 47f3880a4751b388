//! Reference schedules without bandwidth reduction, in the plan schema.

use std::collections::{BTreeMap, BTreeSet};

use super::StrategyKind;
use crate::features::ImageId;
use crate::mbr::{
    bandwidth, iterate_schedule, BlockRow, Iteration, MbrError, ScheduleBlock, SchedulePlan,
};
use crate::retrieval::{canonical_pair, Pair, ViewGraph};

fn block(
    k: usize,
    row: Vec<(usize, ImageId)>,
    col: Vec<(usize, ImageId)>,
    pairs: Vec<Pair>,
) -> ScheduleBlock {
    let span = |v: &[(usize, ImageId)]| {
        let lo = v.iter().map(|x| x.0).min().unwrap_or(0);
        let hi = v.iter().map(|x| x.0 + 1).max().unwrap_or(0);
        (lo, hi)
    };
    ScheduleBlock {
        row_index: k,
        col_index: k,
        row_range: span(&row),
        col_range: span(&col),
        row_images: row.into_iter().map(|x| x.1).collect(),
        col_images: col.into_iter().map(|x| x.1).collect(),
        pairs,
    }
}

fn single_block_rows(blocks: Vec<ScheduleBlock>) -> Vec<BlockRow> {
    blocks
        .into_iter()
        .enumerate()
        .map(|(k, b)| BlockRow {
            row_index: k,
            blocks: vec![b],
            evict_after: Vec::new(),
        })
        .collect()
}

/// Unprocessed edges as position pairs `(a, b)` with `a < b`, sorted.
fn open_edges(g: &ViewGraph) -> Vec<(usize, usize)> {
    let ids = g.image_ids();
    let mut e: Vec<(usize, usize)> = g
        .edges()
        .filter(|&(a, b)| {
            g.pair_state(ids[a], ids[b]) != Some(crate::retrieval::PairState::Processed)
        })
        .collect();
    e.sort_unstable();
    e
}

/// After each row, evicts resident images the next row does not use.
fn evict_unless_next(rows: &mut [BlockRow]) {
    let mut resident: BTreeSet<ImageId> = BTreeSet::new();
    for k in 0..rows.len() {
        resident.extend(rows[k].images());
        let next = rows.get(k + 1).map(BlockRow::images).unwrap_or_default();
        let evict: Vec<ImageId> = resident
            .iter()
            .copied()
            .filter(|id| !next.contains(id))
            .collect();
        for id in &evict {
            resident.remove(id);
        }
        rows[k].evict_after = evict;
    }
}

/// After each row, evicts images with no pairs left, then least recently used
/// images until the next row fits in `budget`.
fn evict_free_list(rows: &mut [BlockRow], budget: usize) {
    let mut remaining: BTreeMap<ImageId, usize> = BTreeMap::new();
    for b in rows.iter().flat_map(|r| &r.blocks) {
        for &(a, c) in &b.pairs {
            *remaining.entry(a).or_default() += 1;
            *remaining.entry(c).or_default() += 1;
        }
    }
    let mut resident: BTreeSet<ImageId> = BTreeSet::new();
    let mut last_use: BTreeMap<ImageId, usize> = BTreeMap::new();
    for k in 0..rows.len() {
        for id in rows[k].images() {
            resident.insert(id);
            last_use.insert(id, k);
        }
        for b in &rows[k].blocks {
            for &(a, c) in &b.pairs {
                *remaining.get_mut(&a).unwrap() -= 1;
                *remaining.get_mut(&c).unwrap() -= 1;
            }
        }
        let mut evict: Vec<ImageId> = resident
            .iter()
            .copied()
            .filter(|id| remaining[id] == 0)
            .collect();
        for id in &evict {
            resident.remove(id);
        }
        if let Some(next) = rows.get(k + 1).map(BlockRow::images) {
            let mut need = resident.union(&next).count();
            if need > budget {
                let mut lru: Vec<(usize, ImageId)> = resident
                    .iter()
                    .filter(|id| !next.contains(id))
                    .map(|&id| (last_use[&id], id))
                    .collect();
                lru.sort_unstable();
                for (_, id) in lru {
                    if need <= budget {
                        break;
                    }
                    resident.remove(&id);
                    evict.push(id);
                    need -= 1;
                }
            }
        } else {
            evict.extend(resident.iter().copied());
            resident.clear();
        }
        rows[k].evict_after = evict;
    }
}

/// One pair per block row, both images loaded and freed around it.
fn sequential(g: &ViewGraph) -> Vec<BlockRow> {
    let ids = g.image_ids();
    let blocks = open_edges(g)
        .into_iter()
        .enumerate()
        .map(|(k, (a, b))| {
            block(
                k,
                vec![(a, ids[a])],
                vec![(b, ids[b])],
                vec![canonical_pair(ids[a], ids[b])],
            )
        })
        .collect();
    let mut rows = single_block_rows(blocks);
    for r in &mut rows {
        r.evict_after = r.images().into_iter().collect();
    }
    rows
}

/// Each image in graph order against its later partners, partners taken in
/// groups of `budget - 1`; residency from the free list plus LRU.
fn load_free_list(g: &ViewGraph, budget: usize) -> Vec<BlockRow> {
    let ids = g.image_ids();
    let mut partners: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (a, b) in open_edges(g) {
        partners.entry(a).or_default().push(b);
    }
    let mut blocks = Vec::new();
    for (a, ps) in partners {
        for group in ps.chunks(budget - 1) {
            let k = blocks.len();
            let pairs = group
                .iter()
                .map(|&b| canonical_pair(ids[a], ids[b]))
                .collect();
            blocks.push(block(
                k,
                vec![(a, ids[a])],
                group.iter().map(|&b| (b, ids[b])).collect(),
                pairs,
            ));
        }
    }
    let mut rows = single_block_rows(blocks);
    evict_free_list(&mut rows, budget);
    rows
}

/// Graph order cut into groups of `budget / 2` images; one block per group
/// pair that shares an edge.
fn group_block(g: &ViewGraph, budget: usize) -> Vec<BlockRow> {
    let ids = g.image_ids();
    let gs = budget / 2;
    let mut cells: BTreeMap<(usize, usize), Vec<Pair>> = BTreeMap::new();
    for (a, b) in open_edges(g) {
        cells
            .entry((a / gs, b / gs))
            .or_default()
            .push(canonical_pair(ids[a], ids[b]));
    }
    let members = |grp: usize| -> Vec<(usize, ImageId)> {
        (grp * gs..((grp + 1) * gs).min(ids.len()))
            .map(|p| (p, ids[p]))
            .collect()
    };
    let blocks = cells
        .into_iter()
        .enumerate()
        .map(|(k, ((gi, gj), mut pairs))| {
            pairs.sort_unstable();
            let mut b = block(k, members(gi), members(gj), pairs);
            (b.row_index, b.col_index) = (gi, gj);
            b
        })
        .collect();
    let mut rows = single_block_rows(blocks);
    evict_unless_next(&mut rows);
    rows
}

/// Plan for `strategy` with `size_gpu` resident images. `size_blk` is used by
/// `Mbr` only.
pub fn plan_for(
    g: &ViewGraph,
    strategy: StrategyKind,
    size_blk: usize,
    size_gpu: usize,
) -> Result<SchedulePlan, MbrError> {
    match strategy {
        StrategyKind::Mbr => iterate_schedule(g, size_blk, size_gpu),
        other => plan_baseline(g, other, size_gpu),
    }
}

/// Baseline plan in graph order, as one iteration.
pub fn plan_baseline(
    g: &ViewGraph,
    strategy: StrategyKind,
    size_gpu: usize,
) -> Result<SchedulePlan, MbrError> {
    if size_gpu < 2 {
        return Err(MbrError::BudgetTooSmall {
            size_blk: 1,
            size_gpu,
        });
    }
    let rows = match strategy {
        StrategyKind::Sequential => sequential(g),
        StrategyKind::LoadFreeList => load_free_list(g, size_gpu),
        StrategyKind::GroupBlock => group_block(g, size_gpu),
        StrategyKind::Mbr => return Err(MbrError::InvalidPlan("mbr is not a baseline".into())),
    };
    let size_blk = match strategy {
        StrategyKind::GroupBlock => size_gpu / 2,
        _ => 1,
    };
    let iterations = if rows.is_empty() {
        Vec::new()
    } else {
        vec![Iteration {
            image_order: g.image_ids().to_vec(),
            bandwidth: bandwidth(g),
            rows,
            deferred: 0,
        }]
    };
    Ok(SchedulePlan {
        size_blk,
        size_gpu,
        iterations,
    })
}
