use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{derive_seed, Rng};

const EULER_GAMMA: f64 = 0.5772156649;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;

/// Average path length of an unsuccessful search in a binary search tree of
/// `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IForestConfig {
    pub n_trees: usize,
    /// Requested ψ; clamped to the training size.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            subsample: DEFAULT_SUBSAMPLE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ITreeNode {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ITree {
    /// Root at index 0.
    pub nodes: Vec<ITreeNode>,
}

impl ITree {
    fn build(x: ArrayView2<f64>, rows: &[usize], max_depth: usize, rng: &mut Rng) -> Self {
        let mut tree = ITree { nodes: Vec::new() };
        let mut rows = rows.to_vec();
        tree.grow(x, &mut rows, 0, max_depth, rng);
        tree
    }

    fn grow(
        &mut self,
        x: ArrayView2<f64>,
        rows: &mut [usize],
        depth: usize,
        max_depth: usize,
        rng: &mut Rng,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(ITreeNode::Leaf { size: rows.len() });
        if depth >= max_depth || rows.len() <= 1 {
            return id;
        }
        // attributes that still vary inside this node
        let mut ranges = Vec::new();
        for j in 0..x.ncols() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &r in rows.iter() {
                lo = lo.min(x[[r, j]]);
                hi = hi.max(x[[r, j]]);
            }
            if hi > lo {
                ranges.push((j, lo, hi));
            }
        }
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.below(ranges.len())];
        let mut threshold = rng.uniform_range(lo, hi);
        if threshold <= lo {
            threshold = lo + (hi - lo) * 0.5;
        }
        // partition: left keeps x < threshold
        let mut split = 0;
        for i in 0..rows.len() {
            if x[[rows[i], feature]] < threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(x, l, depth + 1, max_depth, rng);
        let right = self.grow(x, r, depth + 1, max_depth, rng);
        self.nodes[id] = ITreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Edges to the leaf plus `c(leaf size)`.
    pub fn path_length(&self, q: ArrayView1<f64>) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                ITreeNode::Leaf { size } => return depth + average_path_length(size),
                ITreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if q[feature] < threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &ITree, n: usize) -> usize {
            match t.nodes[n] {
                ITreeNode::Leaf { .. } => 0,
                ITreeNode::Split { left, right, .. } => 1 + rec(t, left).max(rec(t, right)),
            }
        }
        rec(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IForestModel {
    pub config: IForestConfig,
    pub trees: Vec<ITree>,
    /// Effective ψ.
    pub psi: usize,
    pub c_psi: f64,
    /// Training-row indices each tree was grown on.
    pub subsamples: Vec<Vec<usize>>,
}

pub fn max_depth(psi: usize) -> usize {
    (psi as f64).log2().ceil() as usize
}

impl IForestModel {
    pub fn fit(train: ArrayView2<f64>, config: &IForestConfig) -> Result<Self> {
        ensure!(config.n_trees >= 1, "isolation forest needs at least one tree");
        ensure!(config.subsample >= 2, "isolation forest subsample must be >= 2");
        let n = train.nrows();
        ensure!(n >= 2, "isolation forest needs at least 2 training rows");
        let psi = config.subsample.min(n);
        let subsamples: Vec<Vec<usize>> = (0..config.n_trees)
            .map(|t| Rng::new(derive_seed(config.seed, 2 * t as u64)).sample_indices(n, psi))
            .collect();
        Self::fit_with_subsamples(train, config, subsamples)
    }

    /// Grows one tree per given subsample. Split randomness depends only on
    /// the seed and tree number, so reordering the training rows while
    /// remapping the subsamples reproduces the same forest.
    pub fn fit_with_subsamples(
        train: ArrayView2<f64>,
        config: &IForestConfig,
        subsamples: Vec<Vec<usize>>,
    ) -> Result<Self> {
        ensure!(!subsamples.is_empty(), "no subsamples given");
        let psi = subsamples[0].len();
        ensure!(psi >= 2, "isolation forest subsample must be >= 2");
        ensure!(
            subsamples.iter().all(|s| s.len() == psi && s.iter().all(|&i| i < train.nrows())),
            "subsamples must share one size and index the training rows"
        );
        let depth = max_depth(psi);
        let trees = subsamples
            .par_iter()
            .enumerate()
            .map(|(t, rows)| {
                let mut rng = Rng::new(derive_seed(config.seed, 2 * t as u64 + 1));
                ITree::build(train, rows, depth, &mut rng)
            })
            .collect();
        Ok(Self {
            config: IForestConfig {
                n_trees: subsamples.len(),
                ..config.clone()
            },
            trees,
            psi,
            c_psi: average_path_length(psi),
            subsamples,
        })
    }

    pub fn score(&self, queries: ArrayView2<f64>) -> Result<Array1<f64>> {
        let scores: Vec<f64> = (0..queries.nrows())
            .into_par_iter()
            .map(|i| {
                let q = queries.row(i);
                let mean = self.trees.iter().map(|t| t.path_length(q)).sum::<f64>()
                    / self.trees.len() as f64;
                2f64.powf(-mean / self.c_psi)
            })
            .collect();
        Ok(Array1::from(scores))
    }
}

pub fn iforest(
    train: ArrayView2<f64>,
    queries: ArrayView2<f64>,
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<Array1<f64>> {
    IForestModel::fit(
        train,
        &IForestConfig {
            n_trees,
            subsample,
            seed,
        },
    )?
    .score(queries)
}
