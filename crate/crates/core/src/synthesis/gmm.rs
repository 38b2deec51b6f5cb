//! Full-covariance Gaussian mixtures fitted by EM, with BIC model selection.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::{cholesky, sym_eig};
use crate::rng::{derive_seed, Rng};

pub const EIG_FLOOR: f64 = 1e-6;
pub const EM_TOL: f64 = 1e-6;
pub const EM_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Array1<f64>,
    /// One mean per row.
    pub means: Array2<f64>,
    pub covariances: Vec<Array2<f64>>,
    /// Total log-likelihood of the fitting data.
    pub log_likelihood: f64,
    pub bic: f64,
    /// Total log-likelihood after each EM iteration.
    pub trace: Vec<f64>,
    /// Components whose eigenvalues were floored at some point.
    pub floored: bool,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.means.ncols()
    }

    /// Draws `n` rows. Each component's covariance is multiplied by
    /// `cov_scale` and its mean by `mean_scale`.
    pub fn sample(&self, n: usize, cov_scale: f64, mean_scale: f64, rng: &mut Rng) -> Result<Array2<f64>> {
        ensure!(cov_scale > 0.0, "covariance scale must be positive");
        let factors = self
            .covariances
            .iter()
            .map(|c| cholesky(c.view()))
            .collect::<Result<Vec<_>>>()?;
        let d = self.d();
        let mut out = Array2::zeros((n, d));
        let root = cov_scale.sqrt();
        for mut row in out.outer_iter_mut() {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut comp = self.k() - 1;
            for (c, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    comp = c;
                    break;
                }
            }
            let z = Array1::from_shape_fn(d, |_| rng.normal());
            let x = factors[comp].dot(&z) * root + &(&self.means.row(comp) * mean_scale);
            row.assign(&x);
        }
        Ok(out)
    }

    /// Per-row log density.
    pub fn log_density(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let comps = Components::new(self)?;
        Ok(comps.log_resp(x).0)
    }
}

/// Cached Cholesky factors and log normalisers.
struct Components<'a> {
    gmm: &'a Gmm,
    chol: Vec<Array2<f64>>,
    log_norm: Vec<f64>,
}

impl<'a> Components<'a> {
    fn new(gmm: &'a Gmm) -> Result<Self> {
        let d = gmm.d() as f64;
        let mut chol = Vec::new();
        let mut log_norm = Vec::new();
        for (c, w) in gmm.covariances.iter().zip(gmm.weights.iter()) {
            let l = cholesky(c.view())?;
            let log_det: f64 = 2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>();
            log_norm.push(w.ln() - 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det));
            chol.push(l);
        }
        Ok(Self { gmm, chol, log_norm })
    }

    /// Log-likelihood per row and normalized responsibilities.
    fn log_resp(&self, x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let (n, k) = (x.nrows(), self.gmm.k());
        let mut joint = Array2::zeros((n, k));
        for c in 0..k {
            let mu = self.gmm.means.row(c);
            for i in 0..n {
                let m = mahalanobis_sq(&self.chol[c], x.row(i), mu);
                joint[[i, c]] = self.log_norm[c] - 0.5 * m;
            }
        }
        let mut ll = Array1::zeros(n);
        for i in 0..n {
            let row = joint.row(i);
            let top = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            ll[i] = lse;
            joint.row_mut(i).mapv_inplace(|v| (v - lse).exp());
        }
        (ll, joint)
    }
}

/// `‖L⁻¹(x − μ)‖²` by forward substitution.
fn mahalanobis_sq(l: &Array2<f64>, x: ArrayView1<f64>, mu: ArrayView1<f64>) -> f64 {
    let d = x.len();
    let mut z = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..d {
        let mut s = x[i] - mu[i];
        for j in 0..i {
            s -= l[[i, j]] * z[j];
        }
        z[i] = s / l[[i, i]];
        total += z[i] * z[i];
    }
    total
}

/// Symmetrizes `c` and lifts eigenvalues below [`EIG_FLOOR`].
fn floor_covariance(c: &Array2<f64>) -> Result<(Array2<f64>, bool)> {
    let sym = (c + &c.t()) * 0.5;
    let e = sym_eig(sym.view())?;
    if e.values.iter().all(|&v| v >= EIG_FLOOR) {
        return Ok((sym, false));
    }
    let lifted = e.values.mapv(|v| v.max(EIG_FLOOR));
    let v = &e.vectors;
    let out = (v * &lifted).dot(&v.t());
    Ok(((&out + &out.t()) * 0.5, true))
}

fn weighted_cov(x: ArrayView2<f64>, w: ArrayView1<f64>, mean: ArrayView1<f64>) -> Array2<f64> {
    let total = w.sum();
    let xc = &x - &mean;
    let xw = &xc * &w.insert_axis(Axis(1));
    xw.t().dot(&xc) / total
}

/// k-means++ seeding: the first centre uniformly, the rest proportional to
/// squared distance from the nearest chosen centre.
fn kmeanspp(x: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centres = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(x.row(i), x.row(centres[0]))).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.below(n)
        } else {
            let mut u = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, v) in d2.iter().enumerate() {
                if u < *v {
                    pick = i;
                    break;
                }
                u -= v;
            }
            pick
        };
        centres.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq(x.row(i), x.row(next)));
        }
    }
    x.select(Axis(0), &centres)
}

fn sq(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn n_free_params(k: usize, d: usize) -> f64 {
    ((k - 1) + k * d + k * d * (d + 1) / 2) as f64
}

/// EM for a fixed component count.
pub fn fit_gmm_k(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<Gmm> {
    let (n, d) = x.dim();
    ensure!(k >= 1, "mixture needs at least one component");
    ensure!(n >= 2 * k, "EM with {k} components needs at least {} rows, got {n}", 2 * k);
    let mut rng = Rng::new(seed);
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let (global, mut floored) = floor_covariance(&weighted_cov(x, Array1::ones(n).view(), mean.view()))?;
    let mut gmm = Gmm {
        weights: Array1::from_elem(k, 1.0 / k as f64),
        means: kmeanspp(x, k, &mut rng),
        covariances: vec![global.clone(); k],
        log_likelihood: f64::NEG_INFINITY,
        bic: f64::INFINITY,
        trace: Vec::new(),
        floored,
    };
    let mut reseeded = vec![false; k];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITER {
        let (ll, resp) = Components::new(&gmm)?.log_resp(x);
        let total = ll.sum();
        gmm.trace.push(total);
        gmm.log_likelihood = total;
        if (total - prev) / n as f64 <= EM_TOL && prev.is_finite() {
            break;
        }
        prev = total;
        // M-step
        let nk = resp.sum_axis(Axis(0));
        for c in 0..k {
            if nk[c] < 1e-8 * n as f64 {
                if reseeded[c] {
                    return Err(Error::Numeric(format!(
                        "mixture component {c} emptied twice with K={k}"
                    )));
                }
                reseeded[c] = true;
                gmm.means.row_mut(c).assign(&x.row(rng.below(n)));
                gmm.covariances[c] = global.clone();
                gmm.weights[c] = 1.0 / k as f64;
                continue;
            }
            let w = resp.column(c);
            let mu = x.t().dot(&w) / nk[c];
            let (cov, f) = floor_covariance(&weighted_cov(x, w, mu.view()))?;
            floored |= f;
            gmm.means.row_mut(c).assign(&mu);
            gmm.covariances[c] = cov;
            gmm.weights[c] = nk[c] / n as f64;
        }
        let s = gmm.weights.sum();
        gmm.weights /= s;
        // a reseed restarts the monotone sequence
        if reseeded.iter().any(|&r| r) && gmm.trace.len() > 1 {
            prev = f64::NEG_INFINITY;
        }
    }
    gmm.floored = floored;
    gmm.bic = -2.0 * gmm.log_likelihood + n_free_params(k, d) * (n as f64).ln();
    Ok(gmm)
}

/// Fits every K in `k_range` and keeps the lowest BIC (first on ties).
pub fn fit_gmm(x: ArrayView2<f64>, k_range: &[usize], seed: u64) -> Result<Gmm> {
    ensure!(!k_range.is_empty(), "empty component range");
    let kmax = *k_range.iter().max().expect("non-empty");
    ensure!(
        x.nrows() >= 2 * kmax,
        "GMM selection up to K={kmax} needs at least {} rows, got {}",
        2 * kmax,
        x.nrows()
    );
    let mut best: Option<Gmm> = None;
    for &k in k_range {
        let g = fit_gmm_k(x, k, derive_seed(seed, k as u64))?;
        if best.as_ref().map_or(true, |b| g.bic < b.bic) {
            best = Some(g);
        }
    }
    Ok(best.expect("non-empty range"))
}
