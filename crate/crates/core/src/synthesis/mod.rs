//! Synthetic anomalies, feature corruptions and toy datasets.

pub mod anomalies;
pub mod corrupt;
pub mod forest;
pub mod gmm;
pub mod toy;

use serde::{Deserialize, Serialize};

pub use anomalies::{synthesize_anomalies, AnomalyKind, SynthParams};
pub use corrupt::{apply_missing, corrupt, CorruptionKind, Partitions};
pub use forest::{forest_importance, ForestConfig, ImportanceRanking};
pub use gmm::{fit_gmm, fit_gmm_k, Gmm};
pub use toy::{make_toy, ToySpec, TOY_NAMES};

use crate::error::Result;

/// Sidecar written next to every generated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub kind: String,
    pub params: serde_json::Value,
    pub seed: u64,
    /// Checksum of the data the generator read, empty for toys.
    pub source_checksum: String,
}

impl GenerationRecord {
    pub fn new(kind: impl Into<String>, params: &impl Serialize, seed: u64, source_checksum: impl Into<String>) -> Result<Self> {
        Ok(Self {
            kind: kind.into(),
            params: serde_json::to_value(params)?,
            seed,
            source_checksum: source_checksum.into(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
