//! Two-dimensional toy datasets with known anomaly placement.

use std::f64::consts::PI;

use ndarray::Array2;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::rng::{derive_seed, Rng};

pub const TOY_NAMES: [&str; 8] = [
    "curve",
    "flower",
    "gaussians",
    "multi_gaussians",
    "moons",
    "ring",
    "pinched_ring",
    "spiral",
];

/// Ring radius.
pub const RING_R: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub name: String,
    pub n_normal: usize,
    /// Defaults to 5% of `n_normal`, at least one.
    #[serde(default)]
    pub n_anomaly: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.05
}

impl ToySpec {
    pub fn new(name: &str, n_normal: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            n_normal,
            n_anomaly: None,
            noise: default_noise(),
            seed,
        }
    }

    pub fn anomaly_count(&self) -> usize {
        self.n_anomaly.unwrap_or_else(|| (self.n_normal / 20).max(1))
    }
}

/// Normals first, then anomalies.
pub fn make_toy(spec: &ToySpec) -> Result<Dataset> {
    ensure!(TOY_NAMES.contains(&spec.name.as_str()), "unknown toy dataset `{}`", spec.name);
    ensure!(spec.n_normal >= 50, "toy datasets need at least 50 normal rows, got {}", spec.n_normal);
    ensure!(spec.noise >= 0.0, "noise scale must be non-negative");
    let (n, m) = (spec.n_normal, spec.anomaly_count());
    let mut normal_rng = Rng::new(derive_seed(spec.seed, 0));
    let mut anomaly_rng = Rng::new(derive_seed(spec.seed, 1));
    let s = spec.noise;
    let (normals, anomalies): (Vec<[f64; 2]>, Vec<[f64; 2]>) = match spec.name.as_str() {
        "gaussians" => {
            let nor = (0..n).map(|_| blob(&mut normal_rng, [0.0, 0.0], 0.5)).collect();
            let ano = (0..m).map(|_| blob(&mut anomaly_rng, [3.0, 3.0], 0.3)).collect();
            (nor, ano)
        }
        "multi_gaussians" => {
            let centres = [[0.0, 2.0], [-3f64.sqrt(), -1.0], [3f64.sqrt(), -1.0]];
            let nor: Vec<_> = (0..n).map(|i| blob(&mut normal_rng, centres[i % 3], 0.3)).collect();
            let ano = scattered(&mut anomaly_rng, m, 3.5, &nor, 0.6);
            (nor, ano)
        }
        "ring" | "pinched_ring" => {
            let pinched = spec.name == "pinched_ring";
            let profile = Beta::new(0.3, 0.3).expect("valid shape");
            let nor = (0..n)
                .map(|_| {
                    let theta = normal_rng.uniform_range(0.0, 2.0 * PI);
                    let mut r = RING_R * (0.8 + 0.4 * profile.sample(&mut normal_rng));
                    if pinched {
                        r *= 0.5 + 0.5 * theta.cos().abs();
                    }
                    polar(r, theta)
                })
                .collect();
            let ano = (0..m)
                .map(|_| {
                    let theta = anomaly_rng.uniform_range(0.0, 2.0 * PI);
                    // uniform over the disc of radius 0.25R
                    polar(0.25 * RING_R * anomaly_rng.uniform().sqrt(), theta)
                })
                .collect();
            (nor, ano)
        }
        "moons" => {
            let nor: Vec<_> = (0..n)
                .map(|i| {
                    let t = normal_rng.uniform_range(0.0, PI);
                    let p = if i % 2 == 0 {
                        [t.cos(), t.sin()]
                    } else {
                        [1.0 - t.cos(), 0.5 - t.sin()]
                    };
                    jitter(&mut normal_rng, p, s)
                })
                .collect();
            let ano = scattered(&mut anomaly_rng, m, 2.5, &nor, 0.3)
                .into_iter()
                .map(|[x, y]| [x + 0.5, y + 0.25])
                .collect();
            (nor, ano)
        }
        "curve" => curve_family(&mut normal_rng, &mut anomaly_rng, n, m, s, |t| {
            let x = 2.0 * t - 1.0;
            [2.0 * x, (PI * x).sin()]
        }),
        "flower" => curve_family(&mut normal_rng, &mut anomaly_rng, n, m, s, |t| {
            // five-petal rose
            let theta = PI * t;
            let r = 2.0 * (5.0 * theta).cos();
            polar(r, theta)
        }),
        "spiral" => curve_family(&mut normal_rng, &mut anomaly_rng, n, m, s, |t| {
            let u = 0.15 + 0.85 * t;
            polar(2.0 * u, 4.0 * PI * u)
        }),
        _ => unreachable!("name checked above"),
    };
    let mut x = Array2::zeros((n + m, 2));
    for (i, p) in normals.iter().chain(&anomalies).enumerate() {
        x[[i, 0]] = p[0];
        x[[i, 1]] = p[1];
    }
    let mut y = vec![0u8; n];
    y.extend(std::iter::repeat(1).take(m));
    let mut ds = Dataset::new(spec.name.clone(), x, y)?;
    ds.provenance.path = format!("toy:{}:{}", spec.name, spec.seed);
    Ok(ds)
}

fn polar(r: f64, theta: f64) -> [f64; 2] {
    [r * theta.cos(), r * theta.sin()]
}

fn blob(rng: &mut Rng, c: [f64; 2], sd: f64) -> [f64; 2] {
    [c[0] + sd * rng.normal(), c[1] + sd * rng.normal()]
}

fn jitter(rng: &mut Rng, p: [f64; 2], sd: f64) -> [f64; 2] {
    blob(rng, p, sd)
}

/// Uniform points in `[-half, half]²` kept only when every normal lies at
/// least `margin` away.
fn scattered(rng: &mut Rng, m: usize, half: f64, normals: &[[f64; 2]], margin: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let p = [rng.uniform_range(-half, half), rng.uniform_range(-half, half)];
        let clear = normals
            .iter()
            .all(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) >= margin * margin);
        if clear {
            out.push(p);
        }
    }
    out
}

/// Noisy samples along a parametric curve over `t ∈ [0, 1)`, with anomalies
/// scattered in the bounding square.
fn curve_family(
    normal_rng: &mut Rng,
    anomaly_rng: &mut Rng,
    n: usize,
    m: usize,
    noise: f64,
    f: impl Fn(f64) -> [f64; 2],
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let nor: Vec<_> = (0..n)
        .map(|_| {
            let t = normal_rng.uniform();
            jitter(normal_rng, f(t), noise)
        })
        .collect();
    let half = nor
        .iter()
        .flat_map(|p| [p[0].abs(), p[1].abs()])
        .fold(0.0, f64::max)
        * 1.1;
    let ano = scattered(anomaly_rng, m, half, &nor, 0.25);
    (nor, ano)
}
