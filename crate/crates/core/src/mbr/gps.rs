//! Gibbs-Poole-Stockmeyer reordering.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::MbrError;
use crate::retrieval::ViewGraph;

/// Old position -> new position, a bijection over `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationOrder {
    perm: Vec<usize>,
}

impl PermutationOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self, MbrError> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(MbrError::InvalidPermutation);
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    /// Builds the order that places `sequence[k]` at position `k`.
    pub fn from_sequence(sequence: &[usize]) -> Result<Self, MbrError> {
        let mut perm = vec![usize::MAX; sequence.len()];
        for (new, &old) in sequence.iter().enumerate() {
            if old >= perm.len() || perm[old] != usize::MAX {
                return Err(MbrError::InvalidPermutation);
            }
            perm[old] = new;
        }
        Ok(Self { perm })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn new_index(&self, old: usize) -> usize {
        self.perm[old]
    }

    /// New position -> old position.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (old, &new) in self.perm.iter().enumerate() {
            inv[new] = old;
        }
        inv
    }

    pub fn apply(&self, g: &ViewGraph) -> ViewGraph {
        g.permuted(&self.perm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelStructure {
    pub root: usize,
    pub levels: Vec<Vec<usize>>,
}

impl LevelStructure {
    /// Breadth-first levels of the component containing `root`. Nodes inside a
    /// level are sorted by position.
    pub fn rooted_at(g: &ViewGraph, root: usize) -> Self {
        let mut level_of = vec![usize::MAX; g.len()];
        level_of[root] = 0;
        let mut levels = vec![vec![root]];
        loop {
            let mut next = Vec::new();
            for &a in levels.last().unwrap() {
                for &b in g.neighbors(a) {
                    if level_of[b] == usize::MAX {
                        level_of[b] = levels.len();
                        next.push(b);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort_unstable();
            levels.push(next);
        }
        Self { root, levels }
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn width(&self) -> usize {
        self.levels.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn level_map(&self, n: usize) -> Vec<usize> {
        let mut m = vec![usize::MAX; n];
        for (l, nodes) in self.levels.iter().enumerate() {
            for &a in nodes {
                m[a] = l;
            }
        }
        m
    }
}

/// Largest |i - j| over all edges; 0 without edges.
pub fn bandwidth(g: &ViewGraph) -> usize {
    g.edges().map(|(a, b)| b - a).max().unwrap_or(0)
}

/// Bandwidth-reducing order. Each connected component is ordered on its own and
/// components are laid out by descending size. Falls back to the identity if
/// the heuristic would widen the band.
pub fn gps_order(g: &ViewGraph) -> Result<PermutationOrder, MbrError> {
    let order = gps_order_unguarded(g)?;
    if bandwidth(&order.apply(g)) > bandwidth(g) {
        return Ok(PermutationOrder::identity(g.len()));
    }
    Ok(order)
}

/// The heuristic order itself, without the comparison against the input
/// order. It does not depend on the input order (ties go by image id).
pub fn gps_order_unguarded(g: &ViewGraph) -> Result<PermutationOrder, MbrError> {
    if g.is_empty() {
        return Err(MbrError::EmptyGraph);
    }
    let ids = g.image_ids();
    let mut comps = g.components();
    comps.sort_by_key(|c| (std::cmp::Reverse(c.len()), c.iter().map(|&a| ids[a]).min()));
    let mut sequence = Vec::with_capacity(g.len());
    for comp in &comps {
        sequence.extend(order_component(g, comp));
    }
    PermutationOrder::from_sequence(&sequence)
}

/// Key used for every "minimum degree" choice: degree, then image id.
fn degree_key(g: &ViewGraph, a: usize) -> (usize, u64) {
    (g.degree(a), g.image_ids()[a])
}

pub fn pseudo_peripheral_pair(g: &ViewGraph, comp: &[usize]) -> (LevelStructure, LevelStructure) {
    let u = *comp.iter().min_by_key(|&&a| degree_key(g, a)).unwrap();
    let mut lu = LevelStructure::rooted_at(g, u);
    loop {
        let v = *lu
            .levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&a| degree_key(g, a))
            .unwrap();
        let lv = LevelStructure::rooted_at(g, v);
        if lv.depth() > lu.depth() {
            lu = lv;
        } else {
            return (lu, lv);
        }
    }
}

/// Merges the two rootings. Nodes on which both agree keep that level; every
/// connected group of the remaining nodes goes wholesale to whichever rooting
/// keeps the widest level narrower.
pub fn combine_levels(
    g: &ViewGraph,
    comp: &[usize],
    lu: &LevelStructure,
    lv: &LevelStructure,
) -> Vec<Vec<usize>> {
    let n = g.len();
    let depth = lu.depth();
    let mu = lu.level_map(n);
    let mv = lv.level_map(n);
    let rev = |a: usize| depth.saturating_sub(mv[a]);
    let mut level = vec![usize::MAX; n];
    let mut widths = vec![0usize; depth + 1];
    let mut pending = Vec::new();
    for &a in comp {
        if mu[a] == rev(a) {
            level[a] = mu[a];
            widths[mu[a]] += 1;
        } else {
            pending.push(a);
        }
    }

    let ids = g.image_ids();
    let mut is_pending = vec![false; n];
    for &a in &pending {
        is_pending[a] = true;
    }
    let mut groups = Vec::new();
    for &s in &pending {
        if !is_pending[s] {
            continue;
        }
        is_pending[s] = false;
        let mut group = vec![s];
        let mut k = 0;
        while k < group.len() {
            for &b in g.neighbors(group[k]) {
                if is_pending[b] {
                    is_pending[b] = false;
                    group.push(b);
                }
            }
            k += 1;
        }
        groups.push(group);
    }
    groups.sort_by_key(|gr| {
        (
            std::cmp::Reverse(gr.len()),
            gr.iter().map(|&a| ids[a]).min(),
        )
    });

    for group in groups {
        let mut wu = widths.clone();
        let mut wv = widths.clone();
        for &a in &group {
            wu[mu[a]] += 1;
            wv[rev(a)] += 1;
        }
        let (hu, hv) = (wu.iter().max().unwrap(), wv.iter().max().unwrap());
        let use_u = hu <= hv;
        for &a in &group {
            level[a] = if use_u { mu[a] } else { rev(a) };
        }
        widths = if use_u { wu } else { wv };
    }

    let mut levels = vec![Vec::new(); depth + 1];
    for &a in comp {
        levels[level[a]].push(a);
    }
    levels
}

/// Positions of one component in their new relative order.
fn order_component(g: &ViewGraph, comp: &[usize]) -> Vec<usize> {
    if comp.len() == 1 {
        return comp.to_vec();
    }
    let (lu, lv) = pseudo_peripheral_pair(g, comp);
    let levels = combine_levels(g, comp, &lu, &lv);

    let n = g.len();
    let mut level_of = vec![usize::MAX; n];
    for (l, nodes) in levels.iter().enumerate() {
        for &a in nodes {
            level_of[a] = l;
        }
    }
    let mut numbered = vec![false; n];
    let mut out: Vec<usize> = Vec::with_capacity(comp.len());
    let mut cursor = 0;
    for (l, nodes) in levels.iter().enumerate() {
        let mut left = nodes.len();
        if l == 0 && level_of[lu.root] == 0 {
            numbered[lu.root] = true;
            out.push(lu.root);
            left -= 1;
        }
        let mut queue: VecDeque<usize> = VecDeque::new();
        while left > 0 {
            if cursor < out.len() {
                let a = out[cursor];
                cursor += 1;
                let mut fresh: Vec<usize> = g
                    .neighbors(a)
                    .iter()
                    .copied()
                    .filter(|&b| level_of[b] == l && !numbered[b])
                    .collect();
                fresh.sort_by_key(|&b| degree_key(g, b));
                queue.extend(fresh);
            } else {
                let a = *nodes
                    .iter()
                    .filter(|&&b| !numbered[b])
                    .min_by_key(|&&b| degree_key(g, b))
                    .unwrap();
                queue.push_back(a);
            }
            while let Some(b) = queue.pop_front() {
                if !numbered[b] {
                    numbered[b] = true;
                    out.push(b);
                    left -= 1;
                }
            }
        }
        // rewind so the next level is scanned from the first node of this one
        cursor = out.len() - nodes.len();
    }
    out
}
