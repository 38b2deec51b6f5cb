//! Naive reimplementations of the shallow detectors. Nothing here shares
//! code with the library beyond the seeded RNG, which the isolation-forest
//! replay needs to reproduce the same random choices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use tadlab_core::rng::{derive_seed, Rng};

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All distances from `q` to the rows of `x`, sorted by (distance, index).
fn sorted_neighbors(x: ArrayView2<f64>, q: ArrayView1<f64>) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = x.outer_iter().enumerate().map(|(i, r)| (dist(r, q), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

pub fn knn(train: ArrayView2<f64>, queries: ArrayView2<f64>, k: usize) -> Array1<f64> {
    queries
        .outer_iter()
        .map(|q| sorted_neighbors(train, q)[..k].iter().map(|p| p.0).sum::<f64>() / k as f64)
        .collect()
}

/// Textbook LOF: k-distance, reachability distance, lrd and the lrd ratio.
pub fn lof(train: ArrayView2<f64>, queries: ArrayView2<f64>, k: usize) -> Array1<f64> {
    let n = train.nrows();
    let train_nb: Vec<Vec<(f64, usize)>> = (0..n)
        .map(|i| {
            sorted_neighbors(train, train.row(i))
                .into_iter()
                .filter(|p| p.1 != i)
                .take(k)
                .collect()
        })
        .collect();
    let kdist: Vec<f64> = train_nb.iter().map(|nb| nb[k - 1].0).collect();
    let lrd = |nb: &[(f64, usize)]| {
        let reach: f64 = nb.iter().map(|&(d, j)| d.max(kdist[j])).sum::<f64>() / nb.len() as f64;
        1.0 / reach.max(1e-12)
    };
    let train_lrd: Vec<f64> = train_nb.iter().map(|nb| lrd(nb)).collect();
    queries
        .outer_iter()
        .map(|q| {
            let nb: Vec<(f64, usize)> = sorted_neighbors(train, q).into_iter().take(k).collect();
            let own = lrd(&nb);
            nb.iter().map(|&(_, j)| train_lrd[j] / own).sum::<f64>() / k as f64
        })
        .collect()
}

/// Harmonic-number normaliser, written from its definition.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    if n == 2 {
        return 1.0;
    }
    let h = ((n - 1) as f64).ln() + 0.5772156649;
    2.0 * h - 2.0 * (n - 1) as f64 / n as f64
}

enum Node {
    Leaf(Vec<usize>),
    Split(usize, f64, Box<Node>, Box<Node>),
}

fn grow(x: ArrayView2<f64>, rows: Vec<usize>, depth: usize, limit: usize, rng: &mut Rng) -> Node {
    if depth >= limit || rows.len() <= 1 {
        return Node::Leaf(rows);
    }
    let varying: Vec<(usize, f64, f64)> = (0..x.ncols())
        .filter_map(|j| {
            let lo = rows.iter().map(|&r| x[[r, j]]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|&r| x[[r, j]]).fold(f64::NEG_INFINITY, f64::max);
            (hi > lo).then_some((j, lo, hi))
        })
        .collect();
    if varying.is_empty() {
        return Node::Leaf(rows);
    }
    let (j, lo, hi) = varying[rng.below(varying.len())];
    let mut t = rng.uniform_range(lo, hi);
    if t <= lo {
        t = (lo + hi) / 2.0;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, j]] < t);
    let left = grow(x, l, depth + 1, limit, rng);
    let right = grow(x, r, depth + 1, limit, rng);
    Node::Split(j, t, Box::new(left), Box::new(right))
}

fn path(node: &Node, q: ArrayView1<f64>, depth: usize) -> f64 {
    match node {
        Node::Leaf(rows) => depth as f64 + c_factor(rows.len()),
        Node::Split(j, t, l, r) => path(if q[*j] < *t { l } else { r }, q, depth + 1),
    }
}

/// Rebuilds the forest from scratch with the same subsample and split
/// streams, then scores by explicit recursion.
pub fn iforest(train: ArrayView2<f64>, queries: ArrayView2<f64>, n_trees: usize, psi: usize, seed: u64) -> Array1<f64> {
    let n = train.nrows();
    let psi = psi.min(n);
    let limit = (psi as f64).log2().ceil() as usize;
    let trees: Vec<Node> = (0..n_trees)
        .map(|t| {
            let rows = Rng::new(derive_seed(seed, 2 * t as u64)).sample_indices(n, psi);
            grow(train, rows, 0, limit, &mut Rng::new(derive_seed(seed, 2 * t as u64 + 1)))
        })
        .collect();
    let c = c_factor(psi);
    queries
        .outer_iter()
        .map(|q| {
            let mean = trees.iter().map(|t| path(t, q, 0)).sum::<f64>() / n_trees as f64;
            2f64.powf(-mean / c)
        })
        .collect()
}

pub fn rbf_gram(x: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d = dist(x.row(i), x.row(j));
        (-gamma * d * d).exp()
    })
}

/// Euclidean projection onto {0 ≤ a ≤ cap, Σa = 1} by bisection on the shift.
fn project_capped_simplex(v: &[f64], cap: f64) -> Vec<f64> {
    let clip = |s: f64| v.iter().map(|x| (x - s).clamp(0.0, cap)).collect::<Vec<_>>();
    let total = |s: f64| clip(s).iter().sum::<f64>();
    let (mut lo, mut hi) = (
        v.iter().cloned().fold(f64::INFINITY, f64::min) - cap - 1.0,
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0,
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

pub struct OcsvmOracle {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
}

/// Accelerated projected gradient on min ½αᵀKα over the capped simplex.
/// ρ is the mean of (Kα)ᵢ over free coefficients, or the midpoint of the
/// KKT interval when none are free.
pub fn ocsvm_dual(x: ArrayView2<f64>, nu: f64, gamma: f64, iters: usize) -> OcsvmOracle {
    let n = x.nrows();
    let k = rbf_gram(x, gamma);
    let cap = 1.0 / (nu * n as f64);
    // row sums bound the largest eigenvalue
    let lip = k.rows().into_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let mut a = project_capped_simplex(&vec![1.0 / n as f64; n], cap);
    let mut y = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = k.dot(&Array1::from(y.clone()));
        let step: Vec<f64> = y.iter().zip(g.iter()).map(|(yi, gi)| yi - gi / lip).collect();
        let next = project_capped_simplex(&step, cap);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = next
            .iter()
            .zip(a.iter())
            .map(|(n1, a0)| n1 + (t - 1.0) / t_next * (n1 - a0))
            .collect();
        a = next;
        t = t_next;
    }
    let f = k.dot(&Array1::from(a.clone()));
    let eps = 1e-9 * cap;
    let free: Vec<f64> = (0..n).filter(|&i| a[i] > eps && a[i] < cap - eps).map(|i| f[i]).collect();
    let rho = if free.is_empty() {
        let ub = (0..n).filter(|&i| a[i] <= eps).map(|i| f[i]).fold(f64::INFINITY, f64::min);
        let lb = (0..n).filter(|&i| a[i] >= cap - eps).map(|i| f[i]).fold(f64::NEG_INFINITY, f64::max);
        0.5 * (ub + lb)
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    OcsvmOracle { alpha: a, rho, gamma }
}

impl OcsvmOracle {
    pub fn score(&self, train: ArrayView2<f64>, queries: ArrayView2<f64>) -> Array1<f64> {
        queries
            .outer_iter()
            .map(|q| {
                let f: f64 = train
                    .outer_iter()
                    .zip(&self.alpha)
                    .map(|(r, a)| a * (-self.gamma * dist(r, q).powi(2)).exp())
                    .sum();
                self.rho - f
            })
            .collect()
    }
}

/// Eigenvectors of XᵀX by power iteration with deflation, largest first.
pub fn power_eigvecs(x: ArrayView2<f64>, iters: usize) -> Vec<Array1<f64>> {
    let d = x.ncols();
    let mut g = x.t().dot(&x);
    let mut out = Vec::new();
    for j in 0..d {
        let mut v = Array1::from_shape_fn(d, |i| 1.0 + 0.1 * ((i + j) % 7) as f64 + (i == j) as u8 as f64);
        for _ in 0..iters {
            // keep orthogonal to vectors already found
            for u in &out {
                let p = v.dot(u);
                v = &v - &(u * p);
            }
            let w = g.dot(&v);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                break;
            }
            v = w / norm;
        }
        let lambda = v.dot(&g.dot(&v));
        for a in 0..d {
            for b in 0..d {
                g[[a, b]] -= lambda * v[a] * v[b];
            }
        }
        out.push(v);
    }
    out
}

/// Norm of what is left of each query after removing its components along
/// the leading `d − width` directions.
pub fn residual_norm(train: ArrayView2<f64>, queries: ArrayView2<f64>, width: usize) -> Array1<f64> {
    let vecs = power_eigvecs(train, 20_000);
    let top = train.ncols() - width;
    queries
        .outer_iter()
        .map(|q| {
            let mut r = q.to_owned();
            for v in &vecs[..top] {
                r = &r - &(v * q.dot(v));
            }
            r.dot(&r).sqrt()
        })
        .collect()
}
