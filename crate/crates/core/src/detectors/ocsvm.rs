//! One-class SVM with an RBF kernel.
//!
//! The dual is solved in the libsvm scaling (`0 ≤ αᵢ ≤ 1`, `Σα = ν·n`) by
//! sequential minimal optimization with second-order working-set selection,
//! then divided by `ν·n` so that `Σα = 1` and `αᵢ ≤ 1/(ν·n)`.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

const TAU: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-3;
/// Kernel rows kept in memory (in f64 entries).
const CACHE_ENTRIES: usize = 32 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / (d · var(X))` over all training entries.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmConfig {
    pub nu: f64,
    pub gamma: Gamma,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            gamma: Gamma::Scale,
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

pub fn scale_gamma(x: ArrayView2<f64>) -> f64 {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

fn rbf(gamma: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let t = x - y;
        acc += t * t;
    }
    (-gamma * acc).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub config: OcsvmConfig,
    pub gamma: f64,
    /// Support vectors (rows with `α > 0`).
    pub support: Array2<f64>,
    /// Normalized coefficients, `Σα = 1`.
    pub alpha: Array1<f64>,
    /// Normalized offset.
    pub rho: f64,
    pub n_train: usize,
    pub iterations: usize,
}

struct KernelRows<'a> {
    x: ArrayView2<'a, f64>,
    gamma: f64,
    rows: HashMap<usize, Vec<f64>>,
    order: Vec<usize>,
    cap_rows: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: ArrayView2<'a, f64>, gamma: f64) -> Self {
        let n = x.nrows();
        Self {
            x,
            gamma,
            rows: HashMap::new(),
            order: Vec::new(),
            cap_rows: (CACHE_ENTRIES / n.max(1)).max(2),
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.cap_rows {
                let old = self.order.remove(0);
                self.rows.remove(&old);
            }
            let xi = self.x.row(i);
            let r: Vec<f64> = (0..self.x.nrows())
                .into_par_iter()
                .map(|j| rbf(self.gamma, xi, self.x.row(j)))
                .collect();
            self.rows.insert(i, r);
            self.order.push(i);
        }
        &self.rows[&i]
    }
}

impl OcsvmModel {
    pub fn fit(train: ArrayView2<f64>, config: &OcsvmConfig) -> Result<Self> {
        let n = train.nrows();
        let nu = config.nu;
        ensure!(nu > 0.0 && nu <= 1.0, "nu must lie in (0, 1], got {nu}");
        ensure!(n >= 2, "one-class SVM needs at least 2 training rows");
        ensure!(
            nu * n as f64 >= 1.0,
            "nu * n_train = {} < 1 leaves no feasible support",
            nu * n as f64
        );
        let gamma = match config.gamma {
            Gamma::Scale => scale_gamma(train),
            Gamma::Value(g) => {
                ensure!(g > 0.0 && g.is_finite(), "gamma must be positive, got {g}");
                g
            }
        };

        let total = nu * n as f64;
        let mut alpha = vec![0.0; n];
        let full = total.floor() as usize;
        for a in alpha.iter_mut().take(full) {
            *a = 1.0;
        }
        if full < n {
            alpha[full] = total - full as f64;
        }
        let mut k = KernelRows::new(train, gamma);
        // gradient of ½αᵀKα
        let mut grad = vec![0.0; n];
        for i in 0..n {
            if alpha[i] != 0.0 {
                let a = alpha[i];
                let row = k.row(i);
                for (g, kij) in grad.iter_mut().zip(row) {
                    *g += a * kij;
                }
            }
        }
        let max_iter = config.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
        let mut iter = 0;
        loop {
            // i: steepest ascent among rows that can still grow
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..n {
                if alpha[t] < 1.0 && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i = t;
                }
            }
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j = usize::MAX;
            let mut obj_min = f64::INFINITY;
            if i != usize::MAX {
                let ki = k.row(i).to_vec();
                for t in 0..n {
                    if alpha[t] > 0.0 {
                        let diff = gmax + grad[t];
                        if grad[t] >= gmax2 {
                            gmax2 = grad[t];
                        }
                        if diff > 0.0 {
                            let quad = 2.0 - 2.0 * ki[t];
                            let quad = if quad > 0.0 { quad } else { TAU };
                            let obj = -(diff * diff) / quad;
                            if obj <= obj_min {
                                obj_min = obj;
                                j = t;
                            }
                        }
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax + gmax2 < config.tol {
                break;
            }
            if iter >= max_iter {
                return Err(Error::Numeric(format!(
                    "SMO did not converge in {max_iter} iterations (violation {:e})",
                    gmax + gmax2
                )));
            }
            iter += 1;

            let kij = k.row(i)[j];
            let quad = 2.0 - 2.0 * kij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = old_i + old_j;
            let mut ai = old_i - delta;
            let mut aj = old_j + delta;
            if sum > 1.0 {
                if ai > 1.0 {
                    ai = 1.0;
                    aj = sum - 1.0;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > 1.0 {
                if aj > 1.0 {
                    aj = 1.0;
                    ai = sum - 1.0;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
            alpha[i] = ai;
            alpha[j] = aj;
            let (di, dj) = (ai - old_i, aj - old_j);
            let ri = k.row(i).to_vec();
            let rj = k.row(j);
            for t in 0..n {
                grad[t] += ri[t] * di + rj[t] * dj;
            }
        }

        // offset from free vectors, else the midpoint of the feasible interval
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..n {
            if alpha[t] >= 1.0 {
                lb = lb.max(grad[t]);
            } else if alpha[t] <= 0.0 {
                ub = ub.min(grad[t]);
            } else {
                sum_free += grad[t];
                n_free += 1;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else {
            0.5 * (ub + lb)
        };

        let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
        let support = train.select(ndarray::Axis(0), &sv);
        let alpha = Array1::from_iter(sv.iter().map(|&t| alpha[t] / total));
        Ok(Self {
            config: config.clone(),
            gamma,
            support,
            alpha,
            rho: rho / total,
            n_train: n,
            iterations: iter,
        })
    }

    /// `ρ − Σ αᵢ k(xᵢ, q)`; positive outside the learned region.
    pub fn score(&self, queries: ArrayView2<f64>) -> Result<Array1<f64>> {
        ensure!(
            queries.ncols() == self.support.ncols(),
            "query width {} differs from train width {}",
            queries.ncols(),
            self.support.ncols()
        );
        let scores: Vec<f64> = (0..queries.nrows())
            .into_par_iter()
            .map(|i| {
                let q = queries.row(i);
                let mut f = 0.0;
                for (a, sv) in self.alpha.iter().zip(self.support.outer_iter()) {
                    f += a * rbf(self.gamma, sv, q);
                }
                self.rho - f
            })
            .collect();
        Ok(Array1::from(scores))
    }
}

pub fn ocsvm(
    train: ArrayView2<f64>,
    queries: ArrayView2<f64>,
    nu: f64,
    gamma: Gamma,
) -> Result<Array1<f64>> {
    OcsvmModel::fit(
        train,
        &OcsvmConfig {
            nu,
            gamma,
            ..OcsvmConfig::default()
        },
    )?
    .score(queries)
}
