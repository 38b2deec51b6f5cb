//! Supervised logistic-regression probe on a fixed representation.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::metrics::auroc;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_epochs: usize,
    pub lr: f64,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_epochs: 5000,
            lr: 0.5,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub epochs: usize,
    pub grad_norm: f64,
}

impl Logistic {
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.bias
    }
}

/// Full-batch gradient descent on the mean log-loss plus `½λ‖w‖²`. The bias is
/// not penalized.
pub fn fit_logistic(x: ArrayView2<f64>, y: &[u8], cfg: &ProbeConfig) -> Result<Logistic> {
    let (n, d) = x.dim();
    ensure!(y.len() == n, "{} labels for {n} rows", y.len());
    ensure!(y.contains(&0) && y.contains(&1), "probe training data needs both classes");
    ensure!(cfg.lr > 0.0, "probe learning rate must be positive");
    let t = Array1::from_iter(y.iter().map(|&v| v as f64));
    // step bounded by the loss curvature, ¼·max row norm² + λ
    let curv = 0.25 * x.rows().into_iter().map(|r| r.dot(&r) + 1.0).fold(0.0, f64::max) + cfg.l2;
    let step = cfg.lr.min(1.0 / curv);
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let mut epochs = 0;
    let mut norm = f64::INFINITY;
    while epochs < cfg.max_epochs {
        let z = x.dot(&w) + b;
        let err = z.mapv(sigmoid) - &t;
        let gw = x.t().dot(&err) / n as f64 + &w * cfg.l2;
        let gb = err.sum() / n as f64;
        norm = (gw.dot(&gw) + gb * gb).sqrt();
        if norm < cfg.grad_tol {
            break;
        }
        w.scaled_add(-step, &gw);
        b -= step * gb;
        epochs += 1;
    }
    Ok(Logistic {
        weights: w,
        bias: b,
        epochs,
        grad_norm: norm,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Trains on one labelled set and returns the test AUROC of the predicted
/// anomaly probability.
pub fn linear_probe(
    train_x: ArrayView2<f64>,
    train_y: &[u8],
    test_x: ArrayView2<f64>,
    test_y: &[u8],
    cfg: &ProbeConfig,
) -> Result<f64> {
    ensure!(
        train_x.ncols() == test_x.ncols(),
        "probe train has {} columns, test has {}",
        train_x.ncols(),
        test_x.ncols()
    );
    let model = fit_logistic(train_x, train_y, cfg)?;
    // the logit is a monotone map of the probability and does not saturate
    let scores = model.logits(test_x);
    auroc(scores.as_slice().expect("contiguous"), test_y)
}

