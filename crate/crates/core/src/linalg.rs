//! Symmetric eigendecomposition and principal/residual subspaces.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    /// Non-increasing.
    pub values: Array1<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi eigensolver.
///
/// Columns are sorted by descending eigenvalue (stable, so ties keep solver
/// order) and each is flipped so its largest-magnitude entry is positive.
pub fn sym_eig(s: ArrayView2<f64>) -> Result<EigenDecomposition> {
    let (r, c) = s.dim();
    ensure!(r == c, "sym_eig needs a square matrix, got {r}x{c}");
    ensure!(r >= 1, "sym_eig on an empty matrix");
    ensure!(s.iter().all(|v| v.is_finite()), "sym_eig input has non-finite entries");
    let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let asym = (0..r)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max((s[[i, j]] - s[[j, i]]).abs()));
    ensure!(
        asym <= 1e-9 * scale.max(f64::MIN_POSITIVE),
        "matrix is not symmetric (max asymmetry {asym:e})"
    );

    let d = r;
    // symmetrize exactly so rotations act on one triangle consistently
    let mut a = Array2::from_shape_fn((d, d), |(i, j)| 0.5 * (s[[i, j]] + s[[j, i]]));
    let mut v = Array2::<f64>::eye(d);
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = JACOBI_TOL * frob;

    let off = |a: &Array2<f64>| {
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    acc += a[[i, j]] * a[[i, j]];
                }
            }
        }
        acc.sqrt()
    };

    let mut converged = frob == 0.0 || off(&a) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..d {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = cs * akp - sn * akq;
                    a[[k, q]] = sn * akp + cs * akq;
                }
                for k in 0..d {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = cs * apk - sn * aqk;
                    a[[q, k]] = sn * apk + cs * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..d {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = cs * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + cs * vkq;
                }
            }
        }
        converged = off(&a) <= threshold;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps (off-diagonal {:e})",
            off(&a)
        )));
    }

    let diag: Vec<f64> = (0..d).map(|i| a[[i, i]]).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));
    let values = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let mut vectors = Array2::zeros((d, d));
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).to_owned();
        let mut best = 0;
        for k in 1..d {
            if col[k].abs() > col[best].abs() {
                best = k;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        vectors.column_mut(dst).assign(&col);
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Eigendecomposition of the uncentered Gram matrix `XᵀX` of training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalBasis {
    pub decomposition: EigenDecomposition,
    pub d: usize,
    pub source_rows: usize,
    pub centered: bool,
}

pub fn principal_basis(x: ArrayView2<f64>) -> Result<PrincipalBasis> {
    principal_basis_with(x, false)
}

/// As [`principal_basis`]; `centered` subtracts the column means first.
pub fn principal_basis_with(x: ArrayView2<f64>, centered: bool) -> Result<PrincipalBasis> {
    let (n, d) = x.dim();
    ensure!(n >= 1 && d >= 1, "principal basis needs n >= 1 and d >= 1");
    let gram = if centered {
        let mean = x.mean_axis(Axis(0)).expect("n >= 1");
        let xc = &x - &mean;
        xc.t().dot(&xc)
    } else {
        x.t().dot(&x)
    };
    Ok(PrincipalBasis {
        decomposition: sym_eig(gram.view())?,
        d,
        source_rows: n,
        centered,
    })
}

/// Number of smallest-eigenvalue directions kept for a fraction.
pub fn residual_width(d: usize, fraction: f64) -> Result<usize> {
    ensure!(
        fraction > 0.0 && fraction <= 1.0,
        "keep fraction must lie in (0, 1], got {fraction}"
    );
    // guard against fraction*d landing a hair above an integer
    let w = (fraction * d as f64 - 1e-9).ceil() as usize;
    Ok(w.clamp(1, d))
}

impl PrincipalBasis {
    /// `W⊥`: eigenvectors of the smallest eigenvalues, ordered as in the
    /// decomposition (descending).
    pub fn residual_vectors(&self, fraction: f64) -> Result<Array2<f64>> {
        let w = residual_width(self.d, fraction)?;
        Ok(self
            .decomposition
            .vectors
            .slice(s![.., self.d - w..])
            .to_owned())
    }

    /// Little-endian binary cache: `d`, `n` (u64), eigenvalues, then
    /// eigenvectors row-major, all f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.source_rows as u64).to_le_bytes())?;
        for v in &self.decomposition.values {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.decomposition.vectors.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let d = next_u64(&mut r)? as usize;
        let n = next_u64(&mut r)? as usize;
        if d == 0 || d > 1 << 16 {
            return Err(Error::Encoding(format!("implausible basis dimension {d}")));
        }
        let mut floats = vec![0.0; d + d * d];
        for f in floats.iter_mut() {
            *f = f64::from_bits(next_u64(&mut r)?);
        }
        let values = Array1::from(floats[..d].to_vec());
        let vectors = Array2::from_shape_vec((d, d), floats[d..].to_vec())
            .map_err(|e| Error::Encoding(e.to_string()))?;
        Ok(Self {
            decomposition: EigenDecomposition { values, vectors },
            d,
            source_rows: n,
            centered: false,
        })
    }
}

/// `X · W⊥` for the `⌈fraction·d⌉` smallest eigenvalues.
pub fn residual_project(
    basis: &PrincipalBasis,
    x: ArrayView2<f64>,
    keep_smallest_fraction: f64,
) -> Result<Array2<f64>> {
    ensure!(
        x.ncols() == basis.d,
        "projection input has {} columns, basis has {}",
        x.ncols(),
        basis.d
    );
    let w = basis.residual_vectors(keep_smallest_fraction)?;
    Ok(x.dot(&w))
}

/// Modified Gram-Schmidt on the columns of `a`, run twice for stability.
/// Columns come out with a positive diagonal of the implied `R`, which makes
/// the result a deterministic function of `a`.
pub fn orthonormalize(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, m) = a.dim();
    ensure!(m <= n, "cannot orthonormalize {m} columns in R^{n}");
    let mut q = a.to_owned();
    for j in 0..m {
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.column(i).to_owned();
                let proj = qi.dot(&q.column(j));
                q.column_mut(j).scaled_add(-proj, &qi);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm < 1e-12 {
            return Err(Error::Numeric(format!(
                "column {j} is linearly dependent on earlier columns"
            )));
        }
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(q)
}

/// Lower-triangular `L` with `L·Lᵀ = a`.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    ensure!(a.ncols() == d, "cholesky needs a square matrix");
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "matrix not positive definite at pivot {i} ({sum:e})"
                    )));
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_euclidean(a, b).sqrt()
}

pub fn sq_euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
