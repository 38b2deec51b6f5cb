//! Self-supervised pretext tasks: frozen artifacts and batch construction.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::orthonormalize;
use crate::nn::LossKind;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Rotation,
    Shuffle,
    MaskClass,
    MaskColumns,
    Autoencoder,
    ContrastiveRotation,
    ContrastiveShuffle,
    ContrastiveMask,
    Eicl,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::Rotation,
        TaskKind::Shuffle,
        TaskKind::MaskClass,
        TaskKind::MaskColumns,
        TaskKind::Autoencoder,
        TaskKind::ContrastiveRotation,
        TaskKind::ContrastiveShuffle,
        TaskKind::ContrastiveMask,
        TaskKind::Eicl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Rotation => "rotation",
            TaskKind::Shuffle => "shuffle",
            TaskKind::MaskClass => "mask_class",
            TaskKind::MaskColumns => "mask_columns",
            TaskKind::Autoencoder => "autoencoder",
            TaskKind::ContrastiveRotation => "contrastive_rotation",
            TaskKind::ContrastiveShuffle => "contrastive_shuffle",
            TaskKind::ContrastiveMask => "contrastive_mask",
            TaskKind::Eicl => "eicl",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::Rotation | TaskKind::Shuffle | TaskKind::MaskClass)
    }

    pub fn is_contrastive(self) -> bool {
        matches!(
            self,
            TaskKind::ContrastiveRotation
                | TaskKind::ContrastiveShuffle
                | TaskKind::ContrastiveMask
                | TaskKind::Eicl
        )
    }

    /// Losses that make sense for this task.
    pub fn compatible_losses(self) -> &'static [LossKind] {
        use LossKind::*;
        match self {
            TaskKind::Rotation | TaskKind::Shuffle | TaskKind::MaskClass => {
                &[CrossEntropy, Arpl, Aam]
            }
            TaskKind::MaskColumns => &[BceMultilabel],
            TaskKind::Autoencoder => &[Mse, Mae],
            _ => &[Infonce, Vicreg],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Class count `C` for classification tasks and augmentation-set size
    /// for contrastive rotation/shuffle.
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_mask_rate")]
    pub mask_rate: f64,
    /// EICL window width; defaults to `max(2, ⌊d/4⌋)`.
    #[serde(default)]
    pub window: Option<usize>,
    /// Head width for contrastive tasks.
    #[serde(default = "d_contrastive_width")]
    pub contrastive_width: usize,
}

fn d_classes() -> usize {
    4
}
fn d_mask_rate() -> f64 {
    0.3
}
fn d_contrastive_width() -> usize {
    128
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            classes: d_classes(),
            mask_rate: d_mask_rate(),
            window: None,
            contrastive_width: d_contrastive_width(),
        }
    }
}

/// `⌈r·d⌉`, clamped to `1..=d`.
pub fn masked_count(d: usize, rate: f64) -> usize {
    ((rate * d as f64 - 1e-9).ceil() as usize).clamp(1, d)
}

pub fn default_window(d: usize) -> usize {
    (d / 4).max(2).min(d.saturating_sub(1)).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextTask {
    pub kind: TaskKind,
    pub d: usize,
    pub config: TaskConfig,
    pub seed: u64,
    pub rotations: Vec<Array2<f64>>,
    pub permutations: Vec<Vec<usize>>,
    pub masks: Vec<Vec<bool>>,
    /// EICL window width `k_w`.
    pub window: usize,
}

fn factorial_at_least(d: usize, c: usize) -> bool {
    let mut f: usize = 1;
    for i in 2..=d {
        f = f.saturating_mul(i);
        if f >= c {
            return true;
        }
    }
    f >= c
}

fn binomial_at_least(n: usize, k: usize, c: usize) -> bool {
    let mut acc: f64 = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round() >= c as f64
}

pub fn build_task(kind: TaskKind, d: usize, config: &TaskConfig, seed: u64) -> Result<PretextTask> {
    ensure!(d >= 1, "task needs d >= 1");
    let c = config.classes;
    ensure!(
        config.mask_rate > 0.0 && config.mask_rate < 1.0,
        "mask rate must lie in (0, 1), got {}",
        config.mask_rate
    );
    ensure!(config.contrastive_width >= 1, "contrastive head width must be >= 1");
    let mut rng = Rng::new(seed);
    let mut task = PretextTask {
        kind,
        d,
        config: config.clone(),
        seed,
        rotations: Vec::new(),
        permutations: Vec::new(),
        masks: Vec::new(),
        window: 0,
    };
    match kind {
        TaskKind::Rotation | TaskKind::ContrastiveRotation => {
            ensure!(c >= 2, "rotation needs at least 2 classes");
            ensure!(d >= 2, "rotation needs d >= 2 for distinct rotations");
            task.rotations.push(Array2::eye(d));
            while task.rotations.len() < c {
                let g = Array2::from_shape_fn((d, d), |_| rng.normal());
                task.rotations.push(orthonormalize(g.view())?);
            }
        }
        TaskKind::Shuffle | TaskKind::ContrastiveShuffle => {
            ensure!(c >= 2, "shuffle needs at least 2 classes");
            ensure!(
                factorial_at_least(d, c),
                "{c} distinct permutations of {d} columns do not exist"
            );
            let identity: Vec<usize> = (0..d).collect();
            let mut seen = HashSet::new();
            seen.insert(identity.clone());
            task.permutations.push(identity);
            while task.permutations.len() < c {
                let mut p: Vec<usize> = (0..d).collect();
                rng.shuffle(&mut p);
                if seen.insert(p.clone()) {
                    task.permutations.push(p);
                }
            }
        }
        TaskKind::MaskClass => {
            ensure!(c >= 2, "mask classification needs at least 2 classes");
            let m = masked_count(d, config.mask_rate);
            ensure!(
                binomial_at_least(d, m, c),
                "{c} distinct masks with {m} of {d} columns do not exist"
            );
            let mut seen = HashSet::new();
            while task.masks.len() < c {
                let mut mask = vec![false; d];
                for j in rng.sample_indices(d, m) {
                    mask[j] = true;
                }
                if seen.insert(mask.clone()) {
                    task.masks.push(mask);
                }
            }
        }
        TaskKind::Eicl => {
            ensure!(d >= 2, "EICL needs d >= 2");
            let w = config.window.unwrap_or_else(|| default_window(d));
            ensure!(w >= 1 && w < d, "EICL window must satisfy 1 <= k_w < d, got {w}");
            task.window = w;
        }
        TaskKind::MaskColumns | TaskKind::Autoencoder | TaskKind::ContrastiveMask => {}
    }
    Ok(task)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    MultiHot(Array2<f64>),
    Reconstruction(Array2<f64>),
    /// `inputs` and `views` are paired views of the same rows.
    Views,
    /// Index of the positive window for each row.
    Windows(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextBatch {
    /// Augmented rows; for EICL every window of every row, row-major.
    pub inputs: Array2<f64>,
    /// Second view (contrastive) or window complements (EICL).
    pub views: Option<Array2<f64>>,
    pub targets: Targets,
}

impl PretextTask {
    /// Head width implied by the task.
    pub fn d_out(&self) -> usize {
        match self.kind {
            TaskKind::Rotation | TaskKind::Shuffle | TaskKind::MaskClass => self.config.classes,
            TaskKind::MaskColumns | TaskKind::Autoencoder => self.d,
            _ => self.config.contrastive_width,
        }
    }

    /// Input widths of the primary and (EICL only) secondary network.
    pub fn input_widths(&self) -> (usize, Option<usize>) {
        match self.kind {
            TaskKind::Eicl => (self.window, Some(self.d - self.window)),
            _ => (self.d, None),
        }
    }

    pub fn n_windows(&self) -> usize {
        self.d - self.window + 1
    }

    /// Columns of window `start` and of its complement.
    pub fn window_columns(&self, start: usize) -> (Vec<usize>, Vec<usize>) {
        let a: Vec<usize> = (start..start + self.window).collect();
        let b: Vec<usize> = (0..self.d).filter(|j| *j < start || *j >= start + self.window).collect();
        (a, b)
    }

    /// Applies augmentation class `c` to one row.
    pub fn transform_row(&self, row: ndarray::ArrayView1<f64>, c: usize) -> ndarray::Array1<f64> {
        match self.kind {
            TaskKind::Rotation | TaskKind::ContrastiveRotation => row.dot(&self.rotations[c]),
            TaskKind::Shuffle | TaskKind::ContrastiveShuffle => {
                self.permutations[c].iter().map(|&j| row[j]).collect()
            }
            _ => row.to_owned(),
        }
    }

    pub fn rotations_bytes(&self) -> Vec<u8> {
        self.rotations
            .iter()
            .flat_map(|q| q.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>())
            .collect()
    }

    pub fn make_batch(
        &self,
        x: ArrayView2<f64>,
        train_pool: ArrayView2<f64>,
        rng: &mut Rng,
    ) -> Result<PretextBatch> {
        let (n, d) = x.dim();
        ensure!(n >= 1, "empty batch");
        ensure!(d == self.d, "batch width {d} differs from task width {}", self.d);
        ensure!(
            train_pool.nrows() >= 1 && train_pool.ncols() == d,
            "swap donors need a non-empty pool of width {d}"
        );
        let m = masked_count(d, self.config.mask_rate);
        let mut inputs = x.to_owned();
        let batch = match self.kind {
            TaskKind::Rotation | TaskKind::Shuffle => {
                let c = self.config.classes;
                let mut targets = Vec::with_capacity(n);
                for (i, mut row) in inputs.outer_iter_mut().enumerate() {
                    let cls = rng.below(c);
                    row.assign(&self.transform_row(x.row(i), cls));
                    targets.push(cls);
                }
                PretextBatch {
                    inputs,
                    views: None,
                    targets: Targets::Classes(targets),
                }
            }
            TaskKind::MaskClass => {
                let c = self.config.classes;
                let mut targets = Vec::with_capacity(n);
                for mut row in inputs.outer_iter_mut() {
                    let cls = rng.below(c);
                    let donor = train_pool.row(rng.below(train_pool.nrows()));
                    for j in 0..d {
                        if self.masks[cls][j] {
                            row[j] = donor[j];
                        }
                    }
                    targets.push(cls);
                }
                PretextBatch {
                    inputs,
                    views: None,
                    targets: Targets::Classes(targets),
                }
            }
            TaskKind::MaskColumns => {
                let mut target = Array2::zeros((n, d));
                for i in 0..n {
                    let cols = rng.sample_indices(d, m);
                    let donor = rng.below(train_pool.nrows());
                    for j in cols {
                        inputs[[i, j]] = train_pool[[donor, j]];
                        target[[i, j]] = 1.0;
                    }
                }
                PretextBatch {
                    inputs,
                    views: None,
                    targets: Targets::MultiHot(target),
                }
            }
            TaskKind::Autoencoder => {
                let rate = self.config.mask_rate;
                for i in 0..n {
                    let donor = rng.below(train_pool.nrows());
                    for j in 0..d {
                        if rng.bernoulli(rate) {
                            inputs[[i, j]] = train_pool[[donor, j]];
                        }
                    }
                }
                PretextBatch {
                    inputs,
                    views: None,
                    targets: Targets::Reconstruction(x.to_owned()),
                }
            }
            TaskKind::ContrastiveRotation | TaskKind::ContrastiveShuffle | TaskKind::ContrastiveMask => {
                let view = |rng: &mut Rng| -> Array2<f64> {
                    let mut out = x.to_owned();
                    for i in 0..n {
                        if self.kind == TaskKind::ContrastiveMask {
                            let cols = rng.sample_indices(d, m);
                            let donor = rng.below(train_pool.nrows());
                            for j in cols {
                                out[[i, j]] = train_pool[[donor, j]];
                            }
                        } else {
                            let cls = rng.below(self.config.classes);
                            out.row_mut(i).assign(&self.transform_row(x.row(i), cls));
                        }
                    }
                    out
                };
                let a = view(rng);
                let b = view(rng);
                PretextBatch {
                    inputs: a,
                    views: Some(b),
                    targets: Targets::Views,
                }
            }
            TaskKind::Eicl => {
                let w = self.n_windows();
                let k = self.window;
                let mut windows = Array2::zeros((n * w, k));
                let mut comps = Array2::zeros((n, d - k));
                let mut starts = Vec::with_capacity(n);
                for i in 0..n {
                    for s in 0..w {
                        for t in 0..k {
                            windows[[i * w + s, t]] = x[[i, s + t]];
                        }
                    }
                    let s = rng.below(w);
                    let (_, comp) = self.window_columns(s);
                    for (t, &j) in comp.iter().enumerate() {
                        comps[[i, t]] = x[[i, j]];
                    }
                    starts.push(s);
                }
                PretextBatch {
                    inputs: windows,
                    views: Some(comps),
                    targets: Targets::Windows(starts),
                }
            }
        };
        Ok(batch)
    }

    /// Window and complement matrices for a fixed start (inference helper).
    pub fn split_window(&self, x: ArrayView2<f64>, start: usize) -> (Array2<f64>, Array2<f64>) {
        let (a, b) = self.window_columns(start);
        (x.select(Axis(1), &a), x.select(Axis(1), &b))
    }
}
