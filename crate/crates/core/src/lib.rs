//! Multi-view fusion for binary classification of multi-view time series.
//!
//! The crate is organised bottom-up:
//!
//! - [`datamodel`]: dataset schema, on-disk format, preprocessing and a
//!   synthetic generator with per-view informativeness.
//! - [`diffcore`]: a small reverse-mode differentiation engine over a closed
//!   primitive set, plus a finite-difference gradient checker.
//! - [`layers`]: stacked GRU view-encoders, dense heads, dropout, batch norm
//!   and parameter initialisation.
//! - [`fusion`]: input, feature (simple merge and gated), decision,
//!   multi-loss and ensemble fusion.
//! - [`training`]: BCE loss, Adam, early-stopped training and the repeated
//!   experiment harness.
//! - [`metrics`]: average accuracy, AUC, binary F1, prediction entropy,
//!   aggregation and relative improvement.

pub mod datamodel;
pub mod diffcore;
pub mod error;
pub mod fusion;
pub mod layers;
pub mod metrics;
pub mod training;

pub use error::{Error, Result};
