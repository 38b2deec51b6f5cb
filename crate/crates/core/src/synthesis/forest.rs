//! Bagged CART classifier used only for its Gini feature importances.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means ⌈√d⌉.
    pub features_per_split: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            features_per_split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    /// Non-negative, sums to 1.
    pub scores: Vec<f64>,
    /// Feature indices, most important first. Ties keep the lower index first.
    pub order: Vec<usize>,
}

impl ImportanceRanking {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self { scores, order }
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    max_depth: usize,
    mtry: usize,
    n_boot: f64,
    importance: Vec<f64>,
    rng: Rng,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) {
        let n = rows.len() as f64;
        let pos = rows.iter().filter(|&&r| self.y[r] == 1).count() as f64;
        if depth >= self.max_depth || rows.len() < 2 || pos == 0.0 || pos == n {
            return;
        }
        let parent = gini(pos, n);
        let d = self.x.ncols();
        let mut candidates: Vec<usize> = (0..d).collect();
        self.rng.shuffle(&mut candidates);
        // (weighted child impurity, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
        for &j in &candidates[..self.mtry] {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[[r, j]], self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0.0;
            for i in 1..pairs.len() {
                left_pos += pairs[i - 1].1 as f64;
                if pairs[i].0 <= pairs[i - 1].0 {
                    continue;
                }
                let nl = i as f64;
                let child = (nl * gini(left_pos, nl) + (n - nl) * gini(pos - left_pos, n - nl)) / n;
                if best.map_or(true, |b| child < b.0) {
                    best = Some((child, j, 0.5 * (pairs[i - 1].0 + pairs[i].0)));
                }
            }
        }
        let Some((child, j, t)) = best else { return };
        self.importance[j] += n / self.n_boot * (parent - child);
        let mut split = 0;
        for i in 0..rows.len() {
            if self.x[[rows[i], j]] <= t {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        self.grow(l, depth + 1);
        self.grow(r, depth + 1);
    }
}

/// Mean decrease in Gini impurity, normalized per tree and then overall.
pub fn forest_importance(x: ArrayView2<f64>, y: &[u8], config: &ForestConfig, seed: u64) -> Result<ImportanceRanking> {
    let (n, d) = x.dim();
    ensure!(y.len() == n, "{} labels for {n} rows", y.len());
    ensure!(d >= 1, "no features to rank");
    ensure!(y.contains(&0) && y.contains(&1), "feature importance needs both classes");
    ensure!(config.n_trees >= 1, "forest needs at least one tree");
    let mtry = config
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let per_tree: Vec<Vec<f64>> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut boot_rng = Rng::new(derive_seed(seed, 2 * t as u64));
            let mut rows: Vec<usize> = (0..n).map(|_| boot_rng.below(n)).collect();
            let mut g = Grower {
                x,
                y,
                max_depth: config.max_depth,
                mtry,
                n_boot: n as f64,
                importance: vec![0.0; d],
                rng: Rng::new(derive_seed(seed, 2 * t as u64 + 1)),
            };
            g.grow(&mut rows, 0);
            let s: f64 = g.importance.iter().sum();
            if s > 0.0 {
                g.importance.iter_mut().for_each(|v| *v /= s);
            }
            g.importance
        })
        .collect();
    let mut scores = vec![0.0; d];
    for imp in &per_tree {
        for (a, b) in scores.iter_mut().zip(imp) {
            *a += b;
        }
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter_mut().for_each(|v| *v /= total);
    } else {
        scores.fill(1.0 / d as f64);
    }
    Ok(ImportanceRanking::from_scores(scores))
}
