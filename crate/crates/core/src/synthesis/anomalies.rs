use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::gmm::Gmm;
use crate::error::{ensure, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Local,
    Cluster,
    Global,
    Dependency,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [Self::Local, Self::Cluster, Self::Global, Self::Dependency];

    pub fn needs_gmm(self) -> bool {
        matches!(self, Self::Local | Self::Cluster)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// Covariance multiplier for local anomalies.
    pub alpha: f64,
    /// Mean multiplier for cluster anomalies.
    pub beta: f64,
    /// Range multiplier for global anomalies.
    pub delta: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 2.0,
            delta: 0.01,
        }
    }
}

/// Generates `n` anomalies of the given kind. Local and cluster anomalies
/// are drawn from the rescaled mixture, so `gmm` must be present for them.
pub fn synthesize_anomalies(
    kind: AnomalyKind,
    x_train: ArrayView2<f64>,
    gmm: Option<&Gmm>,
    n: usize,
    params: &SynthParams,
    seed: u64,
) -> Result<Array2<f64>> {
    ensure!(n >= 1, "asked for zero anomalies");
    ensure!(x_train.nrows() >= 2, "anomaly synthesis needs at least 2 training rows");
    let mut rng = Rng::new(seed);
    match kind {
        AnomalyKind::Local | AnomalyKind::Cluster => {
            let Some(g) = gmm else {
                return Err(crate::error::contract(format!("{kind:?} anomalies need a fitted mixture")));
            };
            ensure!(g.d() == x_train.ncols(), "mixture has {} columns, data has {}", g.d(), x_train.ncols());
            if kind == AnomalyKind::Local {
                g.sample(n, params.alpha, 1.0, &mut rng)
            } else {
                g.sample(n, 1.0, params.beta, &mut rng)
            }
        }
        AnomalyKind::Global => Ok(global(x_train, n, params.delta, &mut rng)),
        AnomalyKind::Dependency => Ok(dependency(x_train, n, &mut rng)),
    }
}

fn global(x: ArrayView2<f64>, n: usize, delta: f64, rng: &mut Rng) -> Array2<f64> {
    let bounds: Vec<(f64, f64)> = x
        .axis_iter(Axis(1))
        .map(|c| {
            let lo = c.fold(f64::INFINITY, |a, &b| a.min(b)) * delta;
            let hi = c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)) * delta;
            // a negative δ swaps the ends
            (lo.min(hi), lo.max(hi))
        })
        .collect();
    Array2::from_shape_fn((n, x.ncols()), |(_, j)| {
        let (lo, hi) = bounds[j];
        rng.uniform_range(lo, hi).clamp(lo, hi)
    })
}

/// Silverman's rule: 0.9·min(σ, IQR/1.34)·n^(−1/5), falling back to σ when
/// the IQR is zero.
pub fn silverman_bandwidth(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Each column is resampled from its own kernel density, independently of
/// every other column.
fn dependency(x: ArrayView2<f64>, n: usize, rng: &mut Rng) -> Array2<f64> {
    let (rows, d) = x.dim();
    let h: Vec<f64> = x.axis_iter(Axis(1)).map(|c| silverman_bandwidth(&c.to_vec())).collect();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            out[[i, j]] = x[[rng.below(rows), j]] + h[j] * rng.normal();
        }
    }
    out
}
