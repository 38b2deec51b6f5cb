//! Shallow one-class detectors. Every score is oriented so that higher means
//! more anomalous.

mod iforest;
mod knn;
mod lof;
pub mod neighbors;
mod ocsvm;
mod residual;

use std::path::Path;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use iforest::{
    average_path_length, iforest, max_depth, IForestConfig, IForestModel, ITree, ITreeNode,
    DEFAULT_SUBSAMPLE, DEFAULT_TREES,
};
pub use knn::{knn, subsample_rows, KnnAggregation, KnnConfig, KnnModel, DEFAULT_MAX_TRAIN};
pub use lof::{lof, LofConfig, LofModel, REACH_FLOOR};
pub use ocsvm::{ocsvm, scale_gamma, Gamma, OcsvmConfig, OcsvmModel};
pub use residual::{residual_norm, ResidualModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Knn,
    Lof,
    Iforest,
    Ocsvm,
    ResidualNorm,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::Knn,
        DetectorKind::Lof,
        DetectorKind::Iforest,
        DetectorKind::Ocsvm,
        DetectorKind::ResidualNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Knn => "knn",
            DetectorKind::Lof => "lof",
            DetectorKind::Iforest => "iforest",
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::ResidualNorm => "residual_norm",
        }
    }
}

/// Hyperparameters for one detector fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    Knn(KnnConfig),
    Lof(LofConfig),
    Iforest(IForestConfig),
    Ocsvm(OcsvmConfig),
    ResidualNorm { fraction: f64 },
}

impl DetectorConfig {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorConfig::Knn(_) => DetectorKind::Knn,
            DetectorConfig::Lof(_) => DetectorKind::Lof,
            DetectorConfig::Iforest(_) => DetectorKind::Iforest,
            DetectorConfig::Ocsvm(_) => DetectorKind::Ocsvm,
            DetectorConfig::ResidualNorm { .. } => DetectorKind::ResidualNorm,
        }
    }

    /// Short label such as `knn(k=5)` for report columns.
    pub fn label(&self) -> String {
        match self {
            DetectorConfig::Knn(c) => format!("knn(k={})", c.k),
            DetectorConfig::Lof(c) => format!("lof(k={})", c.k),
            DetectorConfig::Iforest(c) => format!("iforest(t={},psi={})", c.n_trees, c.subsample),
            DetectorConfig::Ocsvm(c) => match c.gamma {
                Gamma::Scale => format!("ocsvm(nu={})", c.nu),
                Gamma::Value(g) => format!("ocsvm(nu={},gamma={g})", c.nu),
            },
            DetectorConfig::ResidualNorm { fraction } => format!("residual_norm(f={fraction})"),
        }
    }
}

/// Fitted state of one detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DetectorModel {
    Knn(KnnModel),
    Lof(LofModel),
    Iforest(IForestModel),
    Ocsvm(OcsvmModel),
    ResidualNorm(ResidualModel),
}

impl DetectorModel {
    pub fn fit(config: &DetectorConfig, train: ArrayView2<f64>) -> Result<Self> {
        Ok(match config {
            DetectorConfig::Knn(c) => DetectorModel::Knn(KnnModel::fit(train, c)?),
            DetectorConfig::Lof(c) => DetectorModel::Lof(LofModel::fit(train, c)?),
            DetectorConfig::Iforest(c) => DetectorModel::Iforest(IForestModel::fit(train, c)?),
            DetectorConfig::Ocsvm(c) => DetectorModel::Ocsvm(OcsvmModel::fit(train, c)?),
            DetectorConfig::ResidualNorm { fraction } => {
                DetectorModel::ResidualNorm(ResidualModel::fit(train, *fraction)?)
            }
        })
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorModel::Knn(_) => DetectorKind::Knn,
            DetectorModel::Lof(_) => DetectorKind::Lof,
            DetectorModel::Iforest(_) => DetectorKind::Iforest,
            DetectorModel::Ocsvm(_) => DetectorKind::Ocsvm,
            DetectorModel::ResidualNorm(_) => DetectorKind::ResidualNorm,
        }
    }

    pub fn score(&self, queries: ArrayView2<f64>) -> Result<Array1<f64>> {
        let s = match self {
            DetectorModel::Knn(m) => m.score(queries),
            DetectorModel::Lof(m) => m.score(queries),
            DetectorModel::Iforest(m) => m.score(queries),
            DetectorModel::Ocsvm(m) => m.score(queries),
            DetectorModel::ResidualNorm(m) => m.score(queries),
        }?;
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite score for query {i}",
                self.kind().name()
            )));
        }
        Ok(s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        bincode::serialize(self).map_err(|e| Error::Encoding(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        bincode::deserialize(bytes).map_err(|e| Error::Encoding(e.to_string()))
    }
}

/// Fits on `train` and scores `queries` in one call.
pub fn fit_score(
    config: &DetectorConfig,
    train: ArrayView2<f64>,
    queries: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    DetectorModel::fit(config, train)?.score(queries)
}

/// Writes `row_id,score`.
pub fn write_scores_csv(path: impl AsRef<Path>, row_ids: &[usize], scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row_id", "score"])?;
    for (id, s) in row_ids.iter().zip(scores) {
        w.write_record([id.to_string(), crate::data::format_f64(*s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `row_id,score` file.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut ids, mut scores) = (Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |column: &str| Error::Parse {
            row: row + 1,
            column: column.into(),
            message: "not a number".into(),
        };
        ids.push(rec.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(|| parse_err("row_id"))?);
        scores.push(rec.get(1).and_then(|v| v.trim().parse().ok()).ok_or_else(|| parse_err("score"))?);
    }
    Ok((ids, scores))
}
