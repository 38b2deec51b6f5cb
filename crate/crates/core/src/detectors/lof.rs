use ndarray::{Array1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{subsample_rows, DEFAULT_MAX_TRAIN};
use super::neighbors::NeighborIndex;
use crate::error::{ensure, Result};

/// Floor on mean reachability distance; duplicates would otherwise give an
/// infinite density.
pub const REACH_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofConfig {
    pub k: usize,
    #[serde(default)]
    pub max_train: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl LofConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_train: Some(DEFAULT_MAX_TRAIN),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LofModel {
    pub config: LofConfig,
    pub index: NeighborIndex,
    /// Distance from each training row to its k-th neighbour (self excluded).
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
    /// Set when any density hit [`REACH_FLOOR`].
    pub degenerate: bool,
    pub subsampled_from: Option<usize>,
}

impl LofModel {
    pub fn fit(train: ArrayView2<f64>, config: &LofConfig) -> Result<Self> {
        let (data, subsampled_from) = match subsample_rows(train.nrows(), config.max_train, config.seed) {
            Some(idx) => (train.select(Axis(0), &idx), Some(train.nrows())),
            None => (train.to_owned(), None),
        };
        let n = data.nrows();
        let k = config.k;
        ensure!(
            k >= 1 && k < n,
            "LOF needs 1 <= k < n_train, got k={k} with {n} rows"
        );
        let index = NeighborIndex::new(data);
        // neighbours of each training row, excluding the row itself
        let neigh: Vec<Vec<(f64, usize)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                index
                    .query(index.data().row(i), k + 1)
                    .into_iter()
                    .filter(|nb| nb.index != i)
                    .take(k)
                    .map(|nb| (nb.dist, nb.index))
                    .collect()
            })
            .collect();
        let k_distance: Vec<f64> = neigh.iter().map(|nb| nb[k - 1].0).collect();
        let mut degenerate = false;
        let lrd: Vec<f64> = neigh
            .iter()
            .map(|nb| {
                let (v, floored) = lrd_of(nb.iter().copied(), &k_distance);
                degenerate |= floored;
                v
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            index,
            k_distance,
            lrd,
            degenerate,
            subsampled_from,
        })
    }

    pub fn score(&self, queries: ArrayView2<f64>) -> Result<Array1<f64>> {
        ensure!(
            queries.ncols() == self.index.data().ncols(),
            "query width {} differs from train width {}",
            queries.ncols(),
            self.index.data().ncols()
        );
        let k = self.config.k;
        let scores: Vec<f64> = (0..queries.nrows())
            .into_par_iter()
            .map(|i| {
                let nb: Vec<(f64, usize)> = self
                    .index
                    .query(queries.row(i), k)
                    .into_iter()
                    .map(|n| (n.dist, n.index))
                    .collect();
                let (own, _) = lrd_of(nb.iter().copied(), &self.k_distance);
                let mean_nb = nb.iter().map(|&(_, j)| self.lrd[j]).sum::<f64>() / k as f64;
                mean_nb / own
            })
            .collect();
        Ok(Array1::from(scores))
    }
}

fn lrd_of(nb: impl Iterator<Item = (f64, usize)>, k_distance: &[f64]) -> (f64, bool) {
    let mut sum = 0.0;
    let mut count = 0;
    for (d, j) in nb {
        sum += d.max(k_distance[j]);
        count += 1;
    }
    let mean = sum / count as f64;
    if mean < REACH_FLOOR {
        (1.0 / REACH_FLOOR, true)
    } else {
        (1.0 / mean, false)
    }
}

/// Local outlier factor of each query relative to the training rows.
pub fn lof(train: ArrayView2<f64>, queries: ArrayView2<f64>, k: usize) -> Result<Array1<f64>> {
    LofModel::fit(train, &LofConfig::new(k))?.score(queries)
}
