use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::features::ImageId;

/// Unordered image pair, stored with the smaller id first.
pub type Pair = (ImageId, ImageId);

pub fn canonical_pair(a: ImageId, b: ImageId) -> Pair {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairState {
    Unprocessed,
    Processed,
}

/// Symmetric boolean adjacency over an ordered list of images.
///
/// Rows and columns follow `image_ids`; reordering the graph permutes that
/// list and relabels the adjacency accordingly.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    image_ids: Vec<ImageId>,
    adjacency: Vec<Vec<usize>>,
    pair_state: BTreeMap<Pair, PairState>,
}

impl ViewGraph {
    /// Builds a graph over `image_ids` (kept in the given order). Self pairs
    /// and duplicates are dropped; unknown ids are an error.
    pub fn from_pairs(
        image_ids: Vec<ImageId>,
        pairs: impl IntoIterator<Item = Pair>,
    ) -> Result<Self, RetrievalError> {
        let mut pos = HashMap::with_capacity(image_ids.len());
        for (i, &id) in image_ids.iter().enumerate() {
            if pos.insert(id, i).is_some() {
                return Err(RetrievalError::InvalidGraph(format!(
                    "duplicate image id {id}"
                )));
            }
        }
        let mut sets = vec![BTreeSet::new(); image_ids.len()];
        let mut pair_state = BTreeMap::new();
        for (a, b) in pairs {
            if a == b {
                continue;
            }
            let (Some(&pa), Some(&pb)) = (pos.get(&a), pos.get(&b)) else {
                return Err(RetrievalError::InvalidGraph(format!(
                    "pair ({a},{b}) has unknown image"
                )));
            };
            sets[pa].insert(pb);
            sets[pb].insert(pa);
            pair_state.insert(canonical_pair(a, b), PairState::Unprocessed);
        }
        Ok(Self {
            image_ids,
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            pair_state,
        })
    }

    pub fn empty() -> Self {
        Self {
            image_ids: Vec::new(),
            adjacency: Vec::new(),
            pair_state: BTreeMap::new(),
        }
    }

    /// Matrix dimension.
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn image_ids(&self) -> &[ImageId] {
        &self.image_ids
    }

    pub fn neighbors(&self, pos: usize) -> &[usize] {
        &self.adjacency[pos]
    }

    pub fn degree(&self, pos: usize) -> usize {
        self.adjacency[pos].len()
    }

    pub fn edge_count(&self) -> usize {
        self.pair_state.len()
    }

    /// Edges as position pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    /// All pairs as canonical image-id pairs, sorted.
    pub fn pairs(&self) -> Vec<Pair> {
        self.pair_state.keys().copied().collect()
    }

    pub fn has_pair(&self, a: ImageId, b: ImageId) -> bool {
        self.pair_state.contains_key(&canonical_pair(a, b))
    }

    pub fn pair_state(&self, a: ImageId, b: ImageId) -> Option<PairState> {
        self.pair_state.get(&canonical_pair(a, b)).copied()
    }

    /// Marks a pair processed; returns false if the pair is not in the graph.
    pub fn mark_processed(&mut self, a: ImageId, b: ImageId) -> bool {
        match self.pair_state.get_mut(&canonical_pair(a, b)) {
            Some(s) => {
                *s = PairState::Processed;
                true
            }
            None => false,
        }
    }

    pub fn unprocessed_pairs(&self) -> Vec<Pair> {
        self.pair_state
            .iter()
            .filter(|(_, s)| **s == PairState::Unprocessed)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Reorders rows and columns: the image at old position `i` moves to `new_pos[i]`.
    pub fn permuted(&self, new_pos: &[usize]) -> Self {
        let n = self.len();
        assert_eq!(new_pos.len(), n, "permutation length");
        let mut image_ids = vec![0; n];
        let mut adjacency = vec![Vec::new(); n];
        for old in 0..n {
            let np = new_pos[old];
            image_ids[np] = self.image_ids[old];
            let mut ns: Vec<usize> = self.adjacency[old].iter().map(|&b| new_pos[b]).collect();
            ns.sort_unstable();
            adjacency[np] = ns;
        }
        Self {
            image_ids,
            adjacency,
            pair_state: self.pair_state.clone(),
        }
    }

    /// Drops the given pairs, then removes every image left without pairs.
    /// Surviving images keep their relative order.
    pub fn without_pairs(&self, covered: &BTreeSet<Pair>) -> Self {
        let keep_pair = |p: &Pair| !covered.contains(p);
        let pairs: Vec<Pair> = self.pair_state.keys().copied().filter(keep_pair).collect();
        let mut used = BTreeSet::new();
        for &(a, b) in &pairs {
            used.insert(a);
            used.insert(b);
        }
        let ids: Vec<ImageId> = self
            .image_ids
            .iter()
            .copied()
            .filter(|id| used.contains(id))
            .collect();
        let mut g = Self::from_pairs(ids, pairs).expect("subgraph of a valid graph");
        for (p, s) in g.pair_state.iter_mut() {
            *s = self.pair_state[p];
        }
        g
    }

    /// Connected components as position lists, each sorted ascending; components
    /// ordered by their smallest position.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let cid = out.len();
            let mut stack = vec![s];
            comp[s] = cid;
            let mut members = Vec::new();
            while let Some(u) = stack.pop() {
                members.push(u);
                for &v in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = cid;
                        stack.push(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency.iter().enumerate().all(|(a, ns)| {
            ns.iter()
                .all(|&b| b != a && self.adjacency[b].binary_search(&a).is_ok())
        })
    }

    /// Matrix Market coordinate pattern, symmetric, lower triangle.
    /// Image ids ride along in a comment line so the order survives a round trip.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate pattern symmetric\n");
        s.push_str("% image_ids");
        for id in &self.image_ids {
            let _ = write!(s, " {id}");
        }
        s.push('\n');
        let _ = writeln!(s, "{} {} {}", self.len(), self.len(), self.edge_count());
        let mut entries: Vec<(usize, usize)> = self.edges().map(|(a, b)| (b, a)).collect();
        entries.sort_unstable_by_key(|&(r, c)| (c, r));
        for (r, c) in entries {
            let _ = writeln!(s, "{} {}", r + 1, c + 1);
        }
        s
    }

    pub fn from_matrix_market(text: &str) -> Result<Self, RetrievalError> {
        let bad = |m: &str| RetrievalError::Format(format!("matrix market: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let h = header.to_ascii_lowercase();
        if !h.starts_with("%%matrixmarket") || !h.contains("coordinate") {
            return Err(bad("expected coordinate header"));
        }
        let mut ids: Option<Vec<ImageId>> = None;
        let mut size: Option<(usize, usize)> = None;
        let mut entries = Vec::new();
        for line in lines {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('%') {
                if let Some(list) = rest.trim().strip_prefix("image_ids") {
                    let parsed: Result<Vec<ImageId>, _> =
                        list.split_whitespace().map(str::parse).collect();
                    ids = Some(parsed.map_err(|_| bad("bad image_ids comment"))?);
                }
                continue;
            }
            let f: Vec<&str> = t.split_whitespace().collect();
            if size.is_none() {
                if f.len() != 3 {
                    return Err(bad("bad size line"));
                }
                let r: usize = f[0].parse().map_err(|_| bad("bad size"))?;
                let c: usize = f[1].parse().map_err(|_| bad("bad size"))?;
                if r != c {
                    return Err(bad("matrix not square"));
                }
                size = Some((r, f[2].parse().map_err(|_| bad("bad nnz"))?));
                continue;
            }
            if f.len() < 2 {
                return Err(bad("bad entry"));
            }
            let r: usize = f[0].parse().map_err(|_| bad("bad entry"))?;
            let c: usize = f[1].parse().map_err(|_| bad("bad entry"))?;
            entries.push((r, c));
        }
        let (n, _) = size.ok_or_else(|| bad("missing size line"))?;
        let ids = ids.unwrap_or_else(|| (0..n as ImageId).collect());
        if ids.len() != n {
            return Err(bad("image_ids length differs from dimension"));
        }
        let mut pairs = Vec::with_capacity(entries.len());
        for (r, c) in entries {
            if r == 0 || c == 0 || r > n || c > n {
                return Err(bad("entry out of range"));
            }
            pairs.push((ids[r - 1], ids[c - 1]));
        }
        Self::from_pairs(ids, pairs)
    }

    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        fs::write(path, self.to_matrix_market())?;
        Ok(())
    }

    pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::from_matrix_market(&fs::read_to_string(path)?)
    }
}
