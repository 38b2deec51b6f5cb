//! Laboratory for one-class tabular anomaly detection.
//!
//! The crate is organised around the stages of an experiment:
//!
//! * [`data`] loads labelled tables, builds one-class splits and standardizes.
//! * [`linalg`] holds the symmetric eigensolver and residual-subspace projection.
//! * [`detectors`] fits the five shallow detectors (k-NN, LOF, isolation forest,
//!   one-class SVM, residual norm); higher scores are more anomalous.
//! * [`pretext`] and [`nn`] train residual-MLP encoders on self-supervised tasks
//!   and extract their 128-wide penultimate embeddings.
//! * [`synthesis`] generates synthetic anomalies, corruptions and toy datasets.
//! * [`eval`] computes AUROC, rank statistics, probes and writes reports.

pub mod data;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod pretext;
pub mod rng;
pub mod synthesis;

pub use error::{Error, Result};
