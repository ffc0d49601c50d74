//! Desk-scale laboratory for long-tailed classification.
//!
//! The crate bundles the closed-form inverse loss reweighting with
//! macro-level batch-frequency compensation, Neural Collapse geometry
//! metrics, classic reweighting baselines, a Mittag-Leffler learning-rate
//! schedule, synthetic long-tailed data, and a small softmax trainer that
//! wires them together.

pub mod error;
pub mod linalg;
pub mod par;
pub mod loss;
pub mod etf;
pub mod nc_metrics;
pub mod reweighting;
pub mod baselines;
pub mod scheduler;
pub mod data;
pub mod trainer;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use par::Execution;
