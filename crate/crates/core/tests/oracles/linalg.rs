//! Reconstruction and orthogonality residuals of an eigendecomposition.

use ndarray::{Array2, ArrayView1, ArrayView2};
use tadlab_core::rng::Rng;

pub fn random_symmetric(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::new(seed);
    let a = Array2::from_shape_fn((d, d), |_| rng.normal());
    (&a + &a.t()) * 0.5
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max|S − V diag(λ) Vᵀ| / max|S|`, computed entry by entry.
pub fn reconstruction_error(s: ArrayView2<f64>, values: ArrayView1<f64>, vectors: ArrayView2<f64>) -> f64 {
    let d = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += vectors[[i, k]] * values[k] * vectors[[j, k]];
            }
            worst = worst.max((s[[i, j]] - acc).abs());
        }
    }
    worst / max_abs(&s.to_owned()).max(f64::MIN_POSITIVE)
}

/// `max|VᵀV − I|`.
pub fn orthogonality_error(v: ArrayView2<f64>) -> f64 {
    let g = v.t().dot(&v);
    let mut worst = 0.0f64;
    for ((i, j), x) in g.indexed_iter() {
        worst = worst.max((x - if i == j { 1.0 } else { 0.0 }).abs());
    }
    worst
}
