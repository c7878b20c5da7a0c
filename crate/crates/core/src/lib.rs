//! Learning cross-modal embeddings from image/text pairs where a fraction of
//! the pairs are mismatched.
//!
//! Two linear encoder pairs are co-trained. A two-component mixture over
//! per-pair losses splits the data into clean and noisy subsets, rank
//! correlation against a memory bank of clean features turns each clean pair
//! into a soft margin, and noisy pairs are repaired by swapping one side for
//! a similar bank entry.

mod container;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod gmm_selector;
pub mod memory_bank;
pub mod npr;
pub mod rank_correlation;
pub mod trainer;
pub mod cli;

pub use error::{Error, Result};
