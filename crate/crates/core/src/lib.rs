//! Memory-budget-aware feature matching.
//!
//! The pipeline selects match pairs by global image retrieval, reorders the
//! resulting view graph with Gibbs-Poole-Stockmeyer bandwidth reduction,
//! cuts it into schedule blocks that fit a bounded device memory, matches
//! each block with cascade hashing and verifies matches with a local
//! angular-order constraint followed by RANSAC.

pub mod cli;
pub mod engine;
pub mod features;
pub mod hashmatch;
pub mod mbr;
pub mod retrieval;
pub mod verify;
