//! Bandwidth reduction of the view graph and iterative schedule-block
//! generation under a device memory budget.

mod blocks;
mod gps;

pub use blocks::{
    generate_blocks, iterate_schedule, BlockRow, Iteration, ScheduleBlock, SchedulePlan,
};
pub use gps::{
    bandwidth, combine_levels, gps_order, gps_order_unguarded, pseudo_peripheral_pair,
    LevelStructure, PermutationOrder,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MbrError {
    #[error("graph has no images")]
    EmptyGraph,
    #[error("budget too small: size_gpu {size_gpu} must be at least twice size_blk {size_blk} (size_blk >= 1)")]
    BudgetTooSmall { size_blk: usize, size_gpu: usize },
    #[error("not a permutation")]
    InvalidPermutation,
    #[error("schedule did not terminate after {0} iterations")]
    NonTermination(usize),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Images that fit the device: `memory_bytes / (max_features * bytes_per_feature)`.
pub fn size_gpu_for(memory_bytes: u64, max_features: usize, bytes_per_feature: usize) -> usize {
    let per_image = (max_features.max(1) * bytes_per_feature.max(1)) as u64;
    (memory_bytes / per_image) as usize
}
