use ndarray::{Array1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::neighbors::NeighborIndex;
use crate::error::{ensure, Result};
use crate::rng::Rng;

/// Default cap on training rows kept by neighbour-based detectors.
pub const DEFAULT_MAX_TRAIN: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnnAggregation {
    #[default]
    Mean,
    Kth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    #[serde(default)]
    pub aggregation: KnnAggregation,
    /// Drop one bit-identical training match per query.
    #[serde(default)]
    pub leave_one_out: bool,
    /// Training rows above this are subsampled with `seed`.
    #[serde(default)]
    pub max_train: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl KnnConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            aggregation: KnnAggregation::Mean,
            leave_one_out: false,
            max_train: Some(DEFAULT_MAX_TRAIN),
            seed: 0,
        }
    }
}

/// Keeps at most `cap` rows, chosen with `seed`; returns the kept row indices
/// in ascending order.
pub fn subsample_rows(n: usize, cap: Option<usize>, seed: u64) -> Option<Vec<usize>> {
    let cap = cap?;
    if n <= cap {
        return None;
    }
    let mut idx = Rng::new(seed).sample_indices(n, cap);
    idx.sort_unstable();
    Some(idx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    pub config: KnnConfig,
    pub index: NeighborIndex,
    /// Row count after any subsampling.
    pub n_train: usize,
    pub subsampled_from: Option<usize>,
}

impl KnnModel {
    pub fn fit(train: ArrayView2<f64>, config: &KnnConfig) -> Result<Self> {
        let (data, subsampled_from) = match subsample_rows(train.nrows(), config.max_train, config.seed) {
            Some(idx) => (train.select(Axis(0), &idx), Some(train.nrows())),
            None => (train.to_owned(), None),
        };
        let n = data.nrows();
        // external queries may use every training row; leave-one-out needs a spare
        let limit = if config.leave_one_out { n - 1 } else { n };
        ensure!(
            config.k >= 1 && config.k <= limit,
            "k-NN needs 1 <= k <= {limit}, got k={} with {n} rows",
            config.k
        );
        Ok(Self {
            config: config.clone(),
            index: NeighborIndex::new(data),
            n_train: n,
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
                let q = queries.row(i);
                let mut nb = self.index.query(q, k + self.config.leave_one_out as usize);
                if self.config.leave_one_out {
                    let train = self.index.data();
                    let hit = nb.iter().position(|n| {
                        n.dist == 0.0
                            && train
                                .row(n.index)
                                .iter()
                                .zip(q.iter())
                                .all(|(a, b)| a.to_bits() == b.to_bits())
                    });
                    match hit {
                        Some(p) => {
                            nb.remove(p);
                        }
                        None => {
                            nb.pop();
                        }
                    }
                }
                match self.config.aggregation {
                    KnnAggregation::Mean => nb.iter().map(|n| n.dist).sum::<f64>() / k as f64,
                    KnnAggregation::Kth => nb[k - 1].dist,
                }
            })
            .collect();
        Ok(Array1::from(scores))
    }
}

/// Mean distance to the `k` nearest training rows.
pub fn knn(train: ArrayView2<f64>, queries: ArrayView2<f64>, k: usize) -> Result<Array1<f64>> {
    KnnModel::fit(train, &KnnConfig::new(k))?.score(queries)
}
