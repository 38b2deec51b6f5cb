//! AUROC, rank statistics, the supervised probe and report writers.

pub mod metrics;
pub mod probe;
pub mod rank;
pub mod report;

pub use metrics::{auroc, midranks, spearman};
pub use probe::{fit_logistic, linear_probe, ProbeConfig};
pub use rank::{critical_difference, nemenyi_q, rank_compare, RankDiagram, RankEntry, ScoreTable};
