//! Explains individual predictions of tabular classifiers with association rules.
//!
//! For one prediction the pipeline builds a neighborhood around the
//! instance, labels it with the black box, mines the k best class
//! association rules under several objectives and sorts them into four
//! categories relative to the instance and its prediction.

pub mod blackbox;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod miner;
pub mod neighborhood;
pub mod preprocess;

pub use error::{Error, Result};
