//! Out-of-distribution detection from the statistics of fitted generative
//! models.
//!
//! The library turns per-example log-densities and score vectors (gradients
//! of the log-density with respect to the model parameters) into batch test
//! statistics, calibrates those statistics into p-values against bootstrapped
//! null distributions, combines p-values across statistics, and controls the
//! false discovery rate of the resulting decisions.
//!
//! The crate is organised as a pipeline:
//!
//! * [`models`] fits diagonal Gaussians, Gaussian mixtures, and probabilistic
//!   PCA, and exposes log-densities and parameter gradients behind one trait.
//! * [`fim`] estimates the diagonal Fisher information used to whiten scores.
//! * [`stats`] evaluates batch test statistics over gradient records.
//! * [`calibration`] bootstraps null distributions and maps statistics to
//!   p-values through empirical CDFs.
//! * [`combine`] merges p-values across statistics (Fisher, harmonic mean,
//!   density-of-states KDE).
//! * [`decision`] applies Benjamini-Hochberg FDR control.
//! * [`evaluation`] computes AUROC and runs end-to-end experiment pipelines.
//! * [`io`] reads and writes the on-disk record, model, and report formats.

pub mod calibration;
pub mod combine;
pub mod data;
pub mod decision;
pub mod error;
pub mod evaluation;
pub mod fim;
pub mod io;
pub mod models;
pub mod stats;

mod layout;

pub use data::DataMatrix;
pub use error::{Error, Result};
pub use layout::{LayoutBlock, ParameterLayout, ParameterVector};
