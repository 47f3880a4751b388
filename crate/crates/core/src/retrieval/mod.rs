//! Match-pair selection: codebook training, VLAD encoding, HNSW retrieval
//! and view-graph construction.

mod graph;
mod hnsw;
mod kmeans;
mod vlad;

pub use graph::{canonical_pair, Pair, PairState, ViewGraph};
pub use hnsw::{HnswIndex, HnswParams};
pub use kmeans::{
    select_training_descriptors, train_codebook, train_codebook_traced, Codebook, KMeansTrace,
    CODEBOOK_MAGIC,
};
pub use vlad::{encode_vlad, VladVector};

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSet, ImageId, DESCRIPTOR_DIM};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no input features")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {need} distinct descriptors, have {have}")]
    TooFewDescriptors { have: usize, need: usize },
    #[error("vector dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub k_words: usize,
    /// Percent of images used for codebook training.
    pub p_percent: f64,
    /// Largest-scale features taken from each training image.
    pub h: usize,
    pub kmeans_max_iters: usize,
    pub retrieval_top_n: usize,
    pub hnsw: HnswParams,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            k_words: 64,
            p_percent: 10.0,
            h: 200,
            kmeans_max_iters: 25,
            retrieval_top_n: 30,
            hnsw: HnswParams::default(),
        }
    }
}

/// Retrieves the `top_n` most similar images for every image and unions the
/// results into a symmetric view graph over all input images (sorted by id).
/// Images whose VLAD vector is degenerate are left isolated.
pub fn select_pairs(
    features: &[FeatureSet],
    cb: &Codebook,
    top_n: usize,
    hnsw: &HnswParams,
) -> Result<ViewGraph, RetrievalError> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by_key(|&i| features[i].image_id());
    let ids: Vec<ImageId> = order.iter().map(|&i| features[i].image_id()).collect();
    if features.len() < 2 || top_n == 0 {
        return ViewGraph::from_pairs(ids, Vec::new());
    }

    let vlads: Vec<VladVector> = order
        .par_iter()
        .map(|&i| encode_vlad(&features[i], cb))
        .collect();
    let mut index = HnswIndex::new(cb.k_words() * DESCRIPTOR_DIM, *hnsw);
    for (id, v) in ids.iter().zip(&vlads) {
        if !v.is_degenerate() {
            index.insert(*id, v.values())?;
        }
    }
    let ef = hnsw.ef_search.max(top_n + 1);
    let hits: Vec<Vec<(u64, f32)>> = ids
        .par_iter()
        .zip(&vlads)
        .map(|(_, v)| {
            if v.is_degenerate() {
                Ok(Vec::new())
            } else {
                index.search_ef(v.values(), top_n + 1, ef)
            }
        })
        .collect::<Result<_, _>>()?;

    let mut pairs = BTreeSet::new();
    for (&id, found) in ids.iter().zip(hits) {
        for (other, _) in found.into_iter().filter(|&(o, _)| o != id).take(top_n) {
            pairs.insert(canonical_pair(id, other));
        }
    }
    ViewGraph::from_pairs(ids, pairs)
}

/// Training-descriptor selection, codebook training and pair retrieval in one call.
pub fn build_view_graph(
    features: &[FeatureSet],
    params: &RetrievalParams,
    seed: u64,
) -> Result<(ViewGraph, Codebook), RetrievalError> {
    let training = select_training_descriptors(features, params.p_percent, params.h, seed)?;
    let k = params.k_words.min(training.len()).max(1);
    let cb = train_codebook(&training, k, params.kmeans_max_iters, seed.wrapping_add(1))?;
    let g = select_pairs(features, &cb, params.retrieval_top_n, &params.hnsw)?;
    Ok((g, cb))
}
