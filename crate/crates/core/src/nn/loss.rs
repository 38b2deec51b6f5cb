//! Loss primitives with exact gradients.
//!
//! Each function returns the batch-mean loss, gradients with respect to its
//! matrix inputs and a `kinks` vector recording every branch taken at a
//! non-differentiable point (hinges, absolute values, clamps). Gradient
//! checks compare kinks between the two perturbed evaluations and skip
//! coordinates where they differ.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Arpl,
    Aam,
    BceMultilabel,
    Mse,
    Mae,
    Infonce,
    Vicreg,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::CrossEntropy,
        LossKind::Arpl,
        LossKind::Aam,
        LossKind::BceMultilabel,
        LossKind::Mse,
        LossKind::Mae,
        LossKind::Infonce,
        LossKind::Vicreg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Arpl => "arpl",
            LossKind::Aam => "aam",
            LossKind::BceMultilabel => "bce_multilabel",
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Infonce => "infonce",
            LossKind::Vicreg => "vicreg",
        }
    }

    pub fn code(self) -> u8 {
        LossKind::ALL.iter().position(|&k| k == self).expect("listed") as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        LossKind::ALL.get(code as usize).copied()
    }

    /// Number of trainable scalars owned by the loss itself.
    pub fn n_loss_params(self) -> usize {
        match self {
            LossKind::Arpl => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "d_arpl_gamma")]
    pub arpl_gamma: f64,
    #[serde(default = "d_arpl_lambda")]
    pub arpl_lambda: f64,
    #[serde(default = "d_aam_scale")]
    pub aam_scale: f64,
    #[serde(default = "d_aam_margin")]
    pub aam_margin: f64,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default = "d_vicreg")]
    pub vicreg_weights: [f64; 3],
}

fn d_arpl_gamma() -> f64 {
    0.01
}
fn d_arpl_lambda() -> f64 {
    0.1
}
fn d_aam_scale() -> f64 {
    10.0
}
fn d_aam_margin() -> f64 {
    0.2
}
fn d_temperature() -> f64 {
    0.2
}
fn d_vicreg() -> [f64; 3] {
    [25.0, 25.0, 1.0]
}

pub const ARPL_RADIUS_INIT: f64 = 1.0;
const VICREG_EPS: f64 = 1e-8;
const COS_CLAMP: f64 = 1.0 - 1e-7;
const NORM_FLOOR: f64 = 1e-12;

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            arpl_gamma: d_arpl_gamma(),
            arpl_lambda: d_arpl_lambda(),
            aam_scale: d_aam_scale(),
            aam_margin: d_aam_margin(),
            temperature: d_temperature(),
            vicreg_weights: d_vicreg(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.arpl_gamma,
            self.arpl_lambda,
            self.aam_scale,
            self.temperature,
            self.vicreg_weights[0],
            self.vicreg_weights[1],
            self.vicreg_weights[2],
        ];
        ensure!(
            positive.iter().all(|v| *v > 0.0 && v.is_finite()),
            "loss hyperparameters must be strictly positive"
        );
        ensure!(
            (0.0..std::f64::consts::FRAC_PI_2).contains(&self.aam_margin),
            "AAM margin must lie in [0, pi/2)"
        );
        Ok(())
    }

    pub fn initial_loss_params(&self) -> Vec<f64> {
        match self.kind {
            LossKind::Arpl => vec![ARPL_RADIUS_INIT],
            _ => Vec::new(),
        }
    }
}

pub struct Grad1 {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub kinks: Vec<bool>,
}

pub struct Grad2 {
    pub loss: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
    pub kinks: Vec<bool>,
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_targets(targets: &[usize], n: usize, classes: usize) -> Result<()> {
    ensure!(targets.len() == n, "{} targets for {n} rows", targets.len());
    ensure!(
        targets.iter().all(|&t| t < classes),
        "class target out of range 0..{classes}"
    );
    Ok(())
}

/// Softmax negative log-likelihood.
pub fn cross_entropy(logits: ArrayView2<f64>, targets: &[usize]) -> Result<Grad1> {
    let (n, c) = logits.dim();
    ensure!(n >= 1, "empty batch");
    check_targets(targets, n, c)?;
    let lsm = log_softmax_rows(&logits.to_owned());
    let mut loss = 0.0;
    let mut grad = lsm.mapv(f64::exp);
    for (i, &t) in targets.iter().enumerate() {
        loss -= lsm[[i, t]];
        grad[[i, t]] -= 1.0;
    }
    grad /= n as f64;
    Ok(Grad1 {
        loss: loss / n as f64,
        grad,
        kinks: Vec::new(),
    })
}

pub struct ArplGrad {
    pub loss: f64,
    pub grad_emb: Array2<f64>,
    pub grad_points: Array2<f64>,
    pub grad_radius: f64,
    pub kinks: Vec<bool>,
}

/// Reciprocal-point loss. `points` is `h × C`; column `k` is `P_k`.
pub fn arpl(
    emb: ArrayView2<f64>,
    points: ArrayView2<f64>,
    radius: f64,
    targets: &[usize],
    gamma: f64,
    lambda: f64,
) -> Result<ArplGrad> {
    let (n, h) = emb.dim();
    ensure!(points.nrows() == h, "reciprocal points have width {}, embeddings {h}", points.nrows());
    let c = points.ncols();
    check_targets(targets, n, c)?;
    // ‖e‖² − 2 e·P + ‖P‖²
    let e2 = emb.map_axis(Axis(1), |r| r.dot(&r));
    let p2 = points.map_axis(Axis(0), |col| col.dot(&col));
    let mut dist = emb.dot(&points) * -2.0;
    for i in 0..n {
        for k in 0..c {
            dist[[i, k]] += e2[i] + p2[k];
        }
    }
    let ce = cross_entropy((&dist * gamma).view(), targets)?;
    let mut ddist = ce.grad * gamma;
    let nf = n as f64;
    let mut loss = ce.loss;
    let mut grad_radius = 0.0;
    let mut kinks = Vec::with_capacity(n);
    for (i, &y) in targets.iter().enumerate() {
        let gap = radius - dist[[i, y]];
        kinks.push(gap > 0.0);
        if gap > 0.0 {
            loss += lambda * gap * gap / nf;
            ddist[[i, y]] -= 2.0 * lambda * gap / nf;
            grad_radius += 2.0 * lambda * gap / nf;
        }
    }
    let row_sum = ddist.sum_axis(Axis(1));
    let col_sum = ddist.sum_axis(Axis(0));
    let grad_emb = (&emb * &row_sum.insert_axis(Axis(1)) - ddist.dot(&points.t())) * 2.0;
    let grad_points = (&points * &col_sum - emb.t().dot(&ddist)) * 2.0;
    Ok(ArplGrad {
        loss,
        grad_emb,
        grad_points,
        grad_radius,
        kinks,
    })
}

/// Row-normalize; returns the normalized rows and the norms.
fn normalize_rows(a: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = a.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_FLOOR));
    let out = &a / &norms.view().insert_axis(Axis(1));
    (out, norms)
}

/// Backward through row normalization `u = v / ‖v‖`.
fn normalize_rows_backward(u: &Array2<f64>, norms: &Array1<f64>, du: &Array2<f64>) -> Array2<f64> {
    let dots = (u * du).sum_axis(Axis(1));
    (du - &(u * &dots.insert_axis(Axis(1)))) / &norms.view().insert_axis(Axis(1))
}

pub struct AamGrad {
    pub loss: f64,
    pub grad_emb: Array2<f64>,
    pub grad_weights: Array2<f64>,
    pub kinks: Vec<bool>,
}

/// Additive angular margin softmax. `weights` is `h × C`.
pub fn aam(
    emb: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    targets: &[usize],
    scale: f64,
    margin: f64,
) -> Result<AamGrad> {
    let (n, h) = emb.dim();
    ensure!(weights.nrows() == h, "class weights have width {}, embeddings {h}", weights.nrows());
    check_targets(targets, n, weights.ncols())?;
    let (e_hat, e_norm) = normalize_rows(emb);
    let (w_hat_t, w_norm) = normalize_rows(weights.t());
    let cos = e_hat.dot(&w_hat_t.t());
    let (cm, sm) = (margin.cos(), margin.sin());
    let mut logits = &cos * scale;
    let mut dlogit_dcos = Vec::with_capacity(n);
    let mut kinks = Vec::with_capacity(n);
    for (i, &y) in targets.iter().enumerate() {
        let c = cos[[i, y]];
        let clamped = c.abs() > COS_CLAMP;
        kinks.push(clamped);
        let cc = c.clamp(-COS_CLAMP, COS_CLAMP);
        let sin = (1.0 - cc * cc).sqrt();
        logits[[i, y]] = scale * (cc * cm - sin * sm);
        dlogit_dcos.push(if clamped { 0.0 } else { scale * (cm + cc * sm / sin) });
    }
    let ce = cross_entropy(logits.view(), targets)?;
    let mut dcos = &ce.grad * scale;
    for (i, &y) in targets.iter().enumerate() {
        dcos[[i, y]] = ce.grad[[i, y]] * dlogit_dcos[i];
    }
    let de_hat = dcos.dot(&w_hat_t);
    let dw_hat_t = dcos.t().dot(&e_hat);
    let grad_emb = normalize_rows_backward(&e_hat, &e_norm, &de_hat);
    let grad_weights = normalize_rows_backward(&w_hat_t, &w_norm, &dw_hat_t)
        .t()
        .to_owned();
    Ok(AamGrad {
        loss: ce.loss,
        grad_emb,
        grad_weights,
        kinks,
    })
}

/// Mean per-element sigmoid binary cross-entropy on logits.
pub fn bce_multilabel(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<Grad1> {
    ensure!(logits.dim() == targets.dim(), "BCE target shape mismatch");
    let m = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((g, &l), &t) in grad.iter_mut().zip(logits.iter()).zip(targets.iter()) {
        // softplus(l) − t·l, computed stably
        loss += l.max(0.0) + (-l.abs()).exp().ln_1p() - t * l;
        let s = 1.0 / (1.0 + (-l).exp());
        *g = (s - t) / m;
    }
    Ok(Grad1 {
        loss: loss / m,
        grad,
        kinks: Vec::new(),
    })
}

pub fn mse(out: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Grad1> {
    ensure!(out.dim() == target.dim(), "reconstruction target shape mismatch");
    let m = out.len() as f64;
    let diff = &out - &target;
    Ok(Grad1 {
        loss: diff.iter().map(|d| d * d).sum::<f64>() / m,
        grad: diff * (2.0 / m),
        kinks: Vec::new(),
    })
}

pub fn mae(out: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Grad1> {
    ensure!(out.dim() == target.dim(), "reconstruction target shape mismatch");
    let m = out.len() as f64;
    let diff = &out - &target;
    let kinks = diff.iter().map(|&d| d > 0.0).collect();
    Ok(Grad1 {
        loss: diff.iter().map(|d| d.abs()).sum::<f64>() / m,
        grad: diff.mapv(|d| {
            let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
            sign / m
        }),
        kinks,
    })
}

/// NT-Xent over `2n` views: row `i` of `a` and row `i` of `b` are positives,
/// every other view in the batch is a negative.
pub fn infonce(a: ArrayView2<f64>, b: ArrayView2<f64>, temperature: f64) -> Result<Grad2> {
    let n = a.nrows();
    ensure!(n >= 2, "InfoNCE needs a batch of at least 2 pairs");
    ensure!(a.dim() == b.dim(), "view shapes differ");
    let z = ndarray::concatenate(Axis(0), &[a, b]).expect("same width");
    let (zh, norms) = normalize_rows(z.view());
    let m = 2 * n;
    let mut sim = zh.dot(&zh.t()) / temperature;
    for i in 0..m {
        sim[[i, i]] = f64::NEG_INFINITY;
    }
    let lsm = log_softmax_rows(&sim);
    let mut loss = 0.0;
    let mut dsim = lsm.mapv(|v| if v == f64::NEG_INFINITY { 0.0 } else { v.exp() });
    for i in 0..m {
        let pos = (i + n) % m;
        loss -= lsm[[i, pos]];
        dsim[[i, pos]] -= 1.0;
    }
    dsim /= m as f64;
    let dzh = (&dsim + &dsim.t()).dot(&zh) / temperature;
    let dz = normalize_rows_backward(&zh, &norms, &dzh);
    Ok(Grad2 {
        loss: loss / m as f64,
        grad_a: dz.slice(ndarray::s![..n, ..]).to_owned(),
        grad_b: dz.slice(ndarray::s![n.., ..]).to_owned(),
        kinks: Vec::new(),
    })
}

/// Variance and covariance terms of one view, averaged over columns.
fn vicreg_view(z: ArrayView2<f64>) -> (f64, f64, Array2<f64>, Array2<f64>, Vec<bool>) {
    let (n, p) = z.dim();
    let nm1 = (n - 1) as f64;
    let mean = z.mean_axis(Axis(0)).expect("rows");
    let zc = &z - &mean;
    let var = zc.map_axis(Axis(0), |c| c.dot(&c) / nm1);
    let std = var.mapv(|v| (v + VICREG_EPS).sqrt());
    let mut v_loss = 0.0;
    let mut dstd = Array1::zeros(p);
    let mut kinks = Vec::with_capacity(p);
    for j in 0..p {
        let active = std[j] < 1.0;
        kinks.push(active);
        if active {
            v_loss += (1.0 - std[j]) / p as f64;
            dstd[j] = -1.0 / p as f64;
        }
    }
    let d_var_grad = &zc * &(&dstd / &(&std * nm1));
    let cov = zc.t().dot(&zc) / nm1;
    let mut c_loss = 0.0;
    let mut dcov = cov.clone();
    for j in 0..p {
        for k in 0..p {
            if j == k {
                dcov[[j, k]] = 0.0;
            } else {
                c_loss += cov[[j, k]] * cov[[j, k]] / p as f64;
                dcov[[j, k]] *= 2.0 / p as f64;
            }
        }
    }
    let d_cov_grad = zc.dot(&(&dcov + &dcov.t())) / nm1;
    (v_loss, c_loss, d_var_grad, d_cov_grad, kinks)
}

/// Invariance, variance and covariance terms; the latter two are averaged
/// over both views.
pub fn vicreg(a: ArrayView2<f64>, b: ArrayView2<f64>, weights: [f64; 3]) -> Result<Grad2> {
    let (n, p) = a.dim();
    ensure!(n >= 2, "VICReg needs a batch of at least 2 pairs");
    ensure!(a.dim() == b.dim(), "view shapes differ");
    let [l_inv, l_var, l_cov] = weights;
    let m = (n * p) as f64;
    let diff = &a - &b;
    let inv = diff.iter().map(|d| d * d).sum::<f64>() / m;
    let (va, ca, dva, dca, mut kinks) = vicreg_view(a);
    let (vb, cb, dvb, dcb, kb) = vicreg_view(b);
    kinks.extend(kb);
    let loss = l_inv * inv + l_var * 0.5 * (va + vb) + l_cov * 0.5 * (ca + cb);
    let d_inv = &diff * (2.0 * l_inv / m);
    let grad_a = &d_inv + &(dva * (0.5 * l_var)) + &(dca * (0.5 * l_cov));
    let grad_b = -&d_inv + &(dvb * (0.5 * l_var)) + &(dcb * (0.5 * l_cov));
    Ok(Grad2 {
        loss,
        grad_a,
        grad_b,
        kinks,
    })
}

/// Window-contrastive loss: for row `i`, the complement embedding `b[i]`
/// should match window `starts[i]` among the row's `w` windows.
/// `a` holds the `n·w` window embeddings row-major by (row, window).
pub fn window_infonce(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    starts: &[usize],
    temperature: f64,
) -> Result<Grad2> {
    let n = b.nrows();
    ensure!(n >= 1, "empty batch");
    ensure!(starts.len() == n, "{} window starts for {n} rows", starts.len());
    ensure!(a.nrows() % n == 0, "window embeddings not a multiple of rows");
    let w = a.nrows() / n;
    ensure!(w >= 2, "window contrast needs at least two windows");
    ensure!(starts.iter().all(|&s| s < w), "window start out of range");
    let (ah, an) = normalize_rows(a);
    let (bh, bn) = normalize_rows(b);
    let mut logits = Array2::zeros((n, w));
    for i in 0..n {
        for j in 0..w {
            logits[[i, j]] = ah.row(i * w + j).dot(&bh.row(i)) / temperature;
        }
    }
    let ce = cross_entropy(logits.view(), starts)?;
    let mut dah = Array2::zeros(ah.dim());
    let mut dbh = Array2::zeros(bh.dim());
    for i in 0..n {
        for j in 0..w {
            let g = ce.grad[[i, j]] / temperature;
            dah.row_mut(i * w + j).scaled_add(g, &bh.row(i));
            dbh.row_mut(i).scaled_add(g, &ah.row(i * w + j));
        }
    }
    Ok(Grad2 {
        loss: ce.loss,
        grad_a: normalize_rows_backward(&ah, &an, &dah),
        grad_b: normalize_rows_backward(&bh, &bn, &dbh),
        kinks: Vec::new(),
    })
}
