//! Cascade hashing feature matching and its exhaustive oracle.

mod cascade;
mod io;
mod lsh;

pub use cascade::{
    brute_force_match, euclidean, match_pair, MatchCandidate, MatchStage, Matcher, PairMatches,
};
pub use io::{
    decode_matches, encode_matches, matches_from_text, matches_to_text, read_matches_binary,
    read_matches_text, write_matches_binary, write_matches_text, MATCHES_MAGIC,
};
pub use lsh::{
    compute_codes, hamming, make_hash_functions, mean_fingerprint, HashCodeSet, HashFunctions,
    MAX_COARSE_BITS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ImageId;

#[derive(Debug, Error)]
pub enum HashError {
    #[error("code sets of images {query} and {train} were built with different hash functions or centering")]
    HashMismatch { query: ImageId, train: ImageId },
    #[error("code count does not match feature count")]
    CodeCountMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashParams {
    pub tables: usize,
    pub coarse_bits: usize,
    pub fine_bits: usize,
    /// Candidates re-ranked by Euclidean distance.
    pub top_k: usize,
    pub ratio: f64,
}

impl Default for HashParams {
    fn default() -> Self {
        Self {
            tables: 6,
            coarse_bits: 8,
            fine_bits: 128,
            top_k: 8,
            ratio: 0.5,
        }
    }
}

impl HashParams {
    pub fn validate(&self) -> Result<(), HashError> {
        if self.top_k == 0 {
            return Err(HashError::InvalidParameter(
                "top_k must be at least 1".into(),
            ));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(HashError::InvalidParameter(format!(
                "ratio {} outside (0, 1]",
                self.ratio
            )));
        }
        HashFunctions::new(0, self.tables, self.coarse_bits, self.fine_bits).map(|_| ())
    }
}
