//! Schedule blocks over a banded image order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bandwidth, gps_order_unguarded, MbrError};
use crate::features::ImageId;
use crate::retrieval::{canonical_pair, Pair, PairState, ViewGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleBlock {
    pub row_index: usize,
    pub col_index: usize,
    /// Half-open position ranges in the iteration's image order.
    pub row_range: (usize, usize),
    pub col_range: (usize, usize),
    pub row_images: Vec<ImageId>,
    pub col_images: Vec<ImageId>,
    pub pairs: Vec<Pair>,
}

impl ScheduleBlock {
    /// Images this block actually touches, ascending by id.
    pub fn images(&self) -> BTreeSet<ImageId> {
        self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRow {
    pub row_index: usize,
    pub blocks: Vec<ScheduleBlock>,
    /// Images released once every block of this row has been matched.
    pub evict_after: Vec<ImageId>,
}

impl BlockRow {
    pub fn pair_count(&self) -> usize {
        self.blocks.iter().map(|b| b.pairs.len()).sum()
    }

    pub fn images(&self) -> BTreeSet<ImageId> {
        self.blocks.iter().flat_map(ScheduleBlock::images).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iteration {
    /// Remaining image order after reordering.
    pub image_order: Vec<ImageId>,
    pub bandwidth: usize,
    pub rows: Vec<BlockRow>,
    /// Pairs left for later iterations.
    pub deferred: usize,
}

impl Iteration {
    pub fn dimension(&self) -> usize {
        self.image_order.len()
    }

    pub fn pair_count(&self) -> usize {
        self.rows.iter().map(BlockRow::pair_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub size_blk: usize,
    pub size_gpu: usize,
    pub iterations: Vec<Iteration>,
}

impl SchedulePlan {
    pub fn pair_count(&self) -> usize {
        self.iterations.iter().map(Iteration::pair_count).sum()
    }

    pub fn block_rows(&self) -> impl Iterator<Item = &BlockRow> {
        self.iterations.iter().flat_map(|it| &it.rows)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ScheduleBlock> {
        self.block_rows().flat_map(|r| &r.blocks)
    }

    /// Checks the plan against the pair set it was built for: every pair is
    /// scheduled exactly once, and replaying the rows with their eviction
    /// lists never holds more than `size_gpu` images.
    pub fn validate(&self, pairs: &BTreeSet<Pair>) -> Result<(), MbrError> {
        let bad = |m: String| Err(MbrError::InvalidPlan(m));
        let mut seen = BTreeSet::new();
        for b in self.blocks() {
            for &p in &b.pairs {
                if !pairs.contains(&p) {
                    return bad(format!("pair {p:?} not in graph"));
                }
                if !seen.insert(p) {
                    return bad(format!("pair {p:?} scheduled twice"));
                }
                let (a, c) = p;
                let in_row = |x| b.row_images.contains(&x);
                let in_col = |x| b.col_images.contains(&x);
                if !((in_row(a) && in_col(c)) || (in_row(c) && in_col(a))) {
                    return bad(format!(
                        "pair {p:?} outside block ({}, {})",
                        b.row_index, b.col_index
                    ));
                }
            }
            if b.pairs.is_empty() {
                return bad(format!("empty block ({}, {})", b.row_index, b.col_index));
            }
        }
        if seen.len() != pairs.len() {
            return bad(format!("{} of {} pairs scheduled", seen.len(), pairs.len()));
        }
        for peak in self.resident_peaks() {
            if peak > self.size_gpu {
                return bad(format!(
                    "{peak} resident images exceed budget {}",
                    self.size_gpu
                ));
            }
        }
        Ok(())
    }

    /// Resident image count at the end of each row's loading phase, replaying
    /// uploads and eviction lists. The arena is emptied between iterations.
    pub fn resident_peaks(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for it in &self.iterations {
            let mut resident = BTreeSet::new();
            for row in &it.rows {
                resident.extend(row.images());
                out.push(resident.len());
                for id in &row.evict_after {
                    resident.remove(id);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MbrError> {
        serde_json::from_str(text).map_err(|e| MbrError::Format(e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), MbrError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, MbrError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_budget(size_blk: usize, size_gpu: usize) -> Result<usize, MbrError> {
    if size_blk == 0 || size_gpu < 2 * size_blk {
        return Err(MbrError::BudgetTooSmall { size_blk, size_gpu });
    }
    Ok(size_gpu / size_blk)
}

/// One pass over a graph already in banded order. The order is cut into
/// chunks of `size_blk` images; a block row holds its own chunk plus the next
/// `size_gpu / size_blk - 1` chunks. Pairs reaching further are returned as
/// deferred.
pub fn generate_blocks(
    g: &ViewGraph,
    size_blk: usize,
    size_gpu: usize,
) -> Result<(Vec<BlockRow>, Vec<Pair>), MbrError> {
    let window = check_budget(size_blk, size_gpu)?;
    let ids = g.image_ids();
    let chunk = |p: usize| p / size_blk;
    let mut cells: BTreeMap<(usize, usize), Vec<Pair>> = BTreeMap::new();
    let mut deferred = Vec::new();
    for (a, b) in g.edges() {
        let (ca, cb) = (chunk(a), chunk(b));
        let pair = canonical_pair(ids[a], ids[b]);
        if cb - ca < window {
            cells.entry((ca, cb)).or_default().push(pair);
        } else {
            deferred.push(pair);
        }
    }
    deferred.sort_unstable();
    Ok((assemble_rows(ids, size_blk, cells), deferred))
}

fn assemble_rows(
    ids: &[ImageId],
    size_blk: usize,
    cells: BTreeMap<(usize, usize), Vec<Pair>>,
) -> Vec<BlockRow> {
    let range = |c: usize| (c * size_blk, ((c + 1) * size_blk).min(ids.len()));
    let mut rows: Vec<BlockRow> = Vec::new();
    for ((ri, ci), mut pairs) in cells {
        pairs.sort_unstable();
        let (rr, cr) = (range(ri), range(ci));
        let block = ScheduleBlock {
            row_index: ri,
            col_index: ci,
            row_range: rr,
            col_range: cr,
            row_images: ids[rr.0..rr.1].to_vec(),
            col_images: ids[cr.0..cr.1].to_vec(),
            pairs,
        };
        match rows.last_mut() {
            Some(r) if r.row_index == ri => r.blocks.push(block),
            _ => rows.push(BlockRow {
                row_index: ri,
                blocks: vec![block],
                evict_after: Vec::new(),
            }),
        }
    }

    // A row's own chunk is never needed again once the row is done; neither is
    // anything before the next row's chunk.
    let position: BTreeMap<ImageId, usize> =
        ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let mut resident: BTreeSet<ImageId> = BTreeSet::new();
    for k in 0..rows.len() {
        resident.extend(rows[k].images());
        let keep_from = rows.get(k + 1).map_or(usize::MAX, |r| r.row_index);
        let evict: Vec<ImageId> = resident
            .iter()
            .copied()
            .filter(|id| keep_from == usize::MAX || position[id] / size_blk < keep_from)
            .collect();
        for id in &evict {
            resident.remove(id);
        }
        rows[k].evict_after = evict;
    }
    rows
}

/// Repeats reorder / block / drop-covered on the unprocessed pairs of `graph`
/// until none remain.
pub fn iterate_schedule(
    graph: &ViewGraph,
    size_blk: usize,
    size_gpu: usize,
) -> Result<SchedulePlan, MbrError> {
    check_budget(size_blk, size_gpu)?;
    let processed: BTreeSet<Pair> = graph
        .pairs()
        .into_iter()
        .filter(|&(a, b)| graph.pair_state(a, b) == Some(PairState::Processed))
        .collect();
    let mut g = graph.without_pairs(&processed);
    let cap = g.edge_count();
    let mut iterations = Vec::new();
    while g.edge_count() > 0 {
        if iterations.len() >= cap {
            return Err(MbrError::NonTermination(iterations.len()));
        }
        g = gps_order_unguarded(&g)?.apply(&g);
        let (mut rows, mut deferred) = generate_blocks(&g, size_blk, size_gpu)?;
        if rows.is_empty() {
            (rows, deferred) = nearest_block(&g, size_blk);
        }
        let covered: BTreeSet<Pair> = rows
            .iter()
            .flat_map(|r| &r.blocks)
            .flat_map(|b| b.pairs.iter().copied())
            .collect();
        log::debug!(
            "iteration {}: {} images, bandwidth {}, {} pairs, {} deferred",
            iterations.len(),
            g.len(),
            bandwidth(&g),
            covered.len(),
            deferred.len()
        );
        iterations.push(Iteration {
            image_order: g.image_ids().to_vec(),
            bandwidth: bandwidth(&g),
            rows,
            deferred: deferred.len(),
        });
        g = g.without_pairs(&covered);
    }
    Ok(SchedulePlan {
        size_blk,
        size_gpu,
        iterations,
    })
}

/// Used only when no pair lies inside the window: schedules the single chunk
/// pair with the smallest chunk distance (two chunks fit any valid budget).
fn nearest_block(g: &ViewGraph, size_blk: usize) -> (Vec<BlockRow>, Vec<Pair>) {
    let ids = g.image_ids();
    let chunk = |p: usize| p / size_blk;
    let (a, b) = g
        .edges()
        .min_by_key(|&(a, b)| (chunk(b) - chunk(a), chunk(a)))
        .expect("graph has edges");
    let key = (chunk(a), chunk(b));
    let mut cells: BTreeMap<(usize, usize), Vec<Pair>> = BTreeMap::new();
    let mut rest = Vec::new();
    for (x, y) in g.edges() {
        let pair = canonical_pair(ids[x], ids[y]);
        if (chunk(x), chunk(y)) == key {
            cells.entry(key).or_default().push(pair);
        } else {
            rest.push(pair);
        }
    }
    rest.sort_unstable();
    (assemble_rows(ids, size_blk, cells), rest)
}
