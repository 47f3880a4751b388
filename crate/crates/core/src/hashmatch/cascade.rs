//! Bucket lookup, Hamming ranking, Euclidean re-rank and ratio test.

use serde::{Deserialize, Serialize};

use super::lsh::{hamming, HashCodeSet};
use super::HashError;
use crate::features::{FeatureSet, DESCRIPTOR_DIM};
use crate::retrieval::Pair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    Initial,
    Verified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCandidate {
    pub query_idx: usize,
    pub train_idx: usize,
    pub hamming: u32,
    pub euclidean: f64,
}

/// Matches between the query image `pair.0` and the train image `pair.1`,
/// sorted by query index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMatches {
    pub pair: Pair,
    pub matches: Vec<(usize, usize)>,
    pub stage: MatchStage,
}

impl PairMatches {
    pub fn new(pair: Pair, matches: Vec<(usize, usize)>, stage: MatchStage) -> Self {
        Self {
            pair,
            matches,
            stage,
        }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

pub fn euclidean(a: &[f32; DESCRIPTOR_DIM], b: &[f32; DESCRIPTOR_DIM]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Nearest and second-nearest by (distance, index); `None` for an empty list.
/// A lone candidate is accepted, otherwise `d1 < d2 * ratio` decides.
fn ratio_decision(mut scored: impl Iterator<Item = (f64, usize)>, ratio: f64) -> Option<usize> {
    let better = |a: (f64, usize), b: (f64, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut first = scored.next()?;
    let mut second: Option<(f64, usize)> = None;
    for s in scored {
        if better(s, first) {
            second = Some(first);
            first = s;
        } else if second.is_none_or(|q| better(s, q)) {
            second = Some(s);
        }
    }
    match second {
        None => Some(first.1),
        Some(q2) if first.0 < q2.0 * ratio => Some(first.1),
        _ => None,
    }
}

/// Reusable per-thread buffers for [`Matcher::candidates`].
pub struct Matcher {
    stamp: Vec<u32>,
    epoch: u32,
    pool: Vec<u32>,
    by_distance: Vec<Vec<u32>>,
}

impl Default for Matcher {
    fn default() -> Self {
        Self::new()
    }
}

impl Matcher {
    pub fn new() -> Self {
        Self {
            stamp: Vec::new(),
            epoch: 0,
            pool: Vec::new(),
            by_distance: Vec::new(),
        }
    }

    /// Top-`k` candidates of one query feature: union of same-bucket train
    /// features over all tables, ranked through Hamming-distance buckets
    /// (ties by train index). Euclidean distances are left at zero.
    pub fn candidates(
        &mut self,
        q: &HashCodeSet,
        query_idx: usize,
        t: &HashCodeSet,
        k: usize,
    ) -> Vec<MatchCandidate> {
        if self.stamp.len() < t.len() {
            self.stamp.resize(t.len(), 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.pool.clear();
        for table in 0..q.tables() {
            for &f in t.bucket_members(table, q.bucket(query_idx, table)) {
                let s = &mut self.stamp[f as usize];
                if *s != self.epoch {
                    *s = self.epoch;
                    self.pool.push(f);
                }
            }
        }
        self.pool.sort_unstable();

        let levels = q.fine_bits() + 1;
        if self.by_distance.len() < levels {
            self.by_distance.resize(levels, Vec::new());
        }
        let code = q.fine_code(query_idx);
        for &f in &self.pool {
            let h = hamming(code, t.fine_code(f as usize));
            self.by_distance[h as usize].push(f);
        }
        let mut out = Vec::with_capacity(k.min(self.pool.len()));
        for (h, bucket) in self.by_distance.iter_mut().enumerate().take(levels) {
            for &f in bucket.iter() {
                if out.len() == k {
                    break;
                }
                out.push(MatchCandidate {
                    query_idx,
                    train_idx: f as usize,
                    hamming: h as u32,
                    euclidean: 0.0,
                });
            }
            bucket.clear();
        }
        out
    }

    pub fn match_pair(
        &mut self,
        q: (&HashCodeSet, &FeatureSet),
        t: (&HashCodeSet, &FeatureSet),
        top_k: usize,
        ratio: f64,
    ) -> Result<PairMatches, HashError> {
        let (qc, qf) = q;
        let (tc, tf) = t;
        if !qc.same_functions(tc) {
            return Err(HashError::HashMismatch {
                query: qc.image_id(),
                train: tc.image_id(),
            });
        }
        if qc.len() != qf.len() || tc.len() != tf.len() {
            return Err(HashError::CodeCountMismatch);
        }
        let pair = (qf.image_id(), tf.image_id());
        let mut matches = Vec::new();
        if tf.is_empty() {
            return Ok(PairMatches::new(pair, matches, MatchStage::Initial));
        }
        let (qd, td) = (qf.descriptors(), tf.descriptors());
        for i in 0..qf.len() {
            let cands = self.candidates(qc, i, tc, top_k);
            let scored = cands.iter().map(|c| {
                (
                    euclidean(qd[i].values(), td[c.train_idx].values()),
                    c.train_idx,
                )
            });
            if let Some(j) = ratio_decision(scored, ratio) {
                matches.push((i, j));
            }
        }
        Ok(PairMatches::new(pair, matches, MatchStage::Initial))
    }
}

/// Cascade-hashing match of query `q` against train `t`; see [`Matcher`] to
/// reuse buffers across calls.
pub fn match_pair(
    q: (&HashCodeSet, &FeatureSet),
    t: (&HashCodeSet, &FeatureSet),
    top_k: usize,
    ratio: f64,
) -> Result<PairMatches, HashError> {
    Matcher::new().match_pair(q, t, top_k, ratio)
}

/// Exhaustive nearest / second-nearest scan with the same ratio rule.
pub fn brute_force_match(q: &FeatureSet, t: &FeatureSet, ratio: f64) -> PairMatches {
    let td = t.descriptors();
    let matches = q
        .descriptors()
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let scored = td
                .iter()
                .enumerate()
                .map(|(j, e)| (euclidean(d.values(), e.values()), j));
            ratio_decision(scored, ratio).map(|j| (i, j))
        })
        .collect();
    PairMatches::new((q.image_id(), t.image_id()), matches, MatchStage::Initial)
}
