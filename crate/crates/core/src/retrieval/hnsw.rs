//! Hierarchical navigable small world graph over dense f32 vectors (L2).

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RetrievalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Max neighbors per node on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    dist: f64,
    node: usize,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
    /// `links[node][layer]`: neighbor nodes on that layer.
    links: Vec<Vec<Vec<usize>>>,
    entry_point: Option<usize>,
    level_mult: f64,
    rng: ChaCha8Rng,
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        let m = params.m.max(2);
        Self {
            params: HnswParams { m, ..params },
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            links: Vec::new(),
            entry_point: None,
            level_mult: 1.0 / (m as f64).ln(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn entry_point(&self) -> Option<usize> {
        self.entry_point
    }

    pub fn top_layer(&self) -> Option<usize> {
        self.entry_point.map(|e| self.links[e].len() - 1)
    }

    pub fn node_id(&self, node: usize) -> u64 {
        self.ids[node]
    }

    /// Number of layers `node` participates in.
    pub fn node_levels(&self, node: usize) -> usize {
        self.links[node].len()
    }

    pub fn neighbors(&self, node: usize, layer: usize) -> &[usize] {
        self.links[node]
            .get(layer)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn vector(&self, node: usize) -> &[f32] {
        &self.data[node * self.dim..(node + 1) * self.dim]
    }

    fn dist(&self, q: &[f32], node: usize) -> f64 {
        sq_l2(q, self.vector(node))
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    pub fn insert(&mut self, id: u64, vector: &[f32]) -> Result<(), RetrievalError> {
        if vector.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let u: f64 = 1.0 - self.rng.random::<f64>();
        let level = (-u.ln() * self.level_mult).floor() as usize;
        let node = self.ids.len();
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(ep) = self.entry_point else {
            self.entry_point = Some(node);
            return Ok(());
        };
        let top = self.links[ep].len() - 1;
        let mut cur = Scored {
            dist: self.dist(vector, ep),
            node: ep,
        };
        for layer in (level + 1..=top).rev() {
            cur = self.greedy(vector, cur, layer);
        }
        let mut entries = vec![cur];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(
                vector,
                &entries,
                self.params.ef_construction,
                layer,
                Some(node),
            );
            let chosen: Vec<usize> = found
                .iter()
                .take(self.max_links(layer))
                .map(|s| s.node)
                .collect();
            self.links[node][layer] = chosen.clone();
            for nb in chosen {
                self.links[nb][layer].push(node);
                if self.links[nb][layer].len() > self.max_links(layer) {
                    self.prune(nb, layer);
                }
            }
            entries = found;
        }
        if level > top {
            self.entry_point = Some(node);
        }
        Ok(())
    }

    fn prune(&mut self, node: usize, layer: usize) {
        let v = self.vector(node).to_vec();
        let mut scored: Vec<Scored> = self.links[node][layer]
            .iter()
            .map(|&n| Scored {
                dist: self.dist(&v, n),
                node: n,
            })
            .collect();
        scored.sort();
        scored.truncate(self.max_links(layer));
        self.links[node][layer] = scored.into_iter().map(|s| s.node).collect();
    }

    fn greedy(&self, q: &[f32], mut cur: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &n in self.neighbors(cur.node, layer) {
                let s = Scored {
                    dist: self.dist(q, n),
                    node: n,
                };
                if s < cur {
                    cur = s;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Beam search on one layer; result sorted ascending, at most `ef` long.
    /// `skip` is never returned (the node currently being inserted).
    /// Expansion stops only once the beam is full, so with `ef >= len()` every
    /// node reachable from the entries is evaluated.
    fn search_layer(
        &self,
        q: &[f32],
        entries: &[Scored],
        ef: usize,
        layer: usize,
        skip: Option<usize>,
    ) -> Vec<Scored> {
        let ef = ef.max(1);
        let mut visited: HashSet<usize> = entries.iter().map(|s| s.node).chain(skip).collect();
        let mut candidates: BinaryHeap<Reverse<Scored>> =
            entries.iter().map(|&s| Reverse(s)).collect();
        let mut best: BinaryHeap<Scored> = entries.iter().copied().collect();
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(c)) = candidates.pop() {
            if best.len() >= ef && c > *best.peek().unwrap() {
                break;
            }
            for &n in self.neighbors(c.node, layer) {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored {
                    dist: self.dist(q, n),
                    node: n,
                };
                if best.len() < ef || s < *best.peek().unwrap() {
                    candidates.push(Reverse(s));
                    best.push(s);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        if layer == 0 && ef >= self.len() && visited.len() < self.len() {
            // pruning can strand nodes; a beam covering the index must see all of them
            for n in 0..self.len() {
                if visited.insert(n) {
                    best.push(Scored {
                        dist: self.dist(q, n),
                        node: n,
                    });
                }
            }
        }
        let mut out = best.into_vec();
        out.sort();
        out
    }

    /// Up to `top_n` `(id, L2 distance)` results, ascending.
    pub fn search(&self, query: &[f32], top_n: usize) -> Result<Vec<(u64, f32)>, RetrievalError> {
        self.search_ef(query, top_n, self.params.ef_search)
    }

    pub fn search_ef(
        &self,
        query: &[f32],
        top_n: usize,
        ef_search: usize,
    ) -> Result<Vec<(u64, f32)>, RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let Some(ep) = self.entry_point else {
            return Ok(Vec::new());
        };
        if top_n == 0 {
            return Ok(Vec::new());
        }
        let top = self.links[ep].len() - 1;
        let mut cur = Scored {
            dist: self.dist(query, ep),
            node: ep,
        };
        for layer in (1..=top).rev() {
            cur = self.greedy(query, cur, layer);
        }
        let found = self.search_layer(query, &[cur], ef_search.max(top_n), 0, None);
        Ok(found
            .into_iter()
            .take(top_n)
            .map(|s| (self.ids[s.node], s.dist.sqrt() as f32))
            .collect())
    }
}

fn sq_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.sample::<f32, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    fn brute(vs: &[Vec<f32>], q: &[f32], top: usize) -> Vec<u64> {
        let mut d: Vec<(f64, u64)> = vs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                (
                    v.iter().zip(q).map(|(a, b)| ((a - b) as f64).powi(2)).sum(),
                    i as u64,
                )
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(top).map(|x| x.1).collect()
    }

    fn build(vs: &[Vec<f32>], params: HnswParams) -> HnswIndex {
        let mut idx = HnswIndex::new(vs[0].len(), params);
        for (i, v) in vs.iter().enumerate() {
            idx.insert(i as u64, v).unwrap();
        }
        idx
    }

    #[test]
    fn ten_vectors_match_brute_force_top3() {
        let vs = random_vectors(10, 16, 1);
        let idx = build(
            &vs,
            HnswParams {
                ef_search: 10,
                ..Default::default()
            },
        );
        for q in random_vectors(20, 16, 2) {
            let got: Vec<u64> = idx
                .search(&q, 3)
                .unwrap()
                .into_iter()
                .map(|x| x.0)
                .collect();
            assert_eq!(got, brute(&vs, &q, 3));
        }
    }

    #[test]
    fn self_match_first() {
        let vs = random_vectors(50, 8, 3);
        let idx = build(&vs, HnswParams::default());
        for (i, v) in vs.iter().enumerate() {
            let r = idx.search(v, 1).unwrap();
            assert_eq!(r[0], (i as u64, 0.0));
        }
    }

    #[test]
    fn zero_top_n_and_dimension_mismatch() {
        let vs = random_vectors(5, 4, 4);
        let mut idx = build(&vs, HnswParams::default());
        assert!(idx.search(&vs[0], 0).unwrap().is_empty());
        assert!(matches!(
            idx.search(&[0.0; 3], 1),
            Err(RetrievalError::DimensionMismatch {
                expected: 4,
                got: 3
            })
        ));
        assert!(idx.insert(9, &[1.0]).is_err());
    }

    #[test]
    fn structural_invariants() {
        let vs = random_vectors(200, 6, 5);
        let idx = build(
            &vs,
            HnswParams {
                m: 4,
                ..Default::default()
            },
        );
        let top = idx.top_layer().unwrap();
        assert_eq!(idx.node_levels(idx.entry_point().unwrap()), top + 1);
        for node in 0..idx.len() {
            for layer in 0..idx.node_levels(node) {
                for &n in idx.neighbors(node, layer) {
                    assert!(n < idx.len());
                    assert!(idx.node_levels(n) > layer, "edge to node absent from layer");
                    assert_ne!(n, node);
                }
                assert!(idx.neighbors(node, layer).len() <= idx.max_links(layer));
            }
        }
    }
}
