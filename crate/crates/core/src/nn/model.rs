//! A pretext task, its loss and the networks trained on it.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::loss::{self, LossKind, LossSpec};
use super::network::{ForwardCache, Mode, Network};
use crate::error::{ensure, Result};
use crate::pretext::{PretextBatch, PretextTask, Targets, TaskKind};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub task: PretextTask,
    pub loss: LossSpec,
    /// Sees full rows, or EICL windows.
    pub primary: Network,
    /// EICL complement network.
    pub secondary: Option<Network>,
    /// Trainable loss scalars (the ARPL radius).
    pub loss_params: Vec<f64>,
}

/// Loss value, gradients over [`EncoderModel::flat_params`] and the kink
/// signature of the evaluation.
pub struct Objective {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub kinks: Vec<bool>,
}

impl EncoderModel {
    pub fn new(
        task: PretextTask,
        loss: LossSpec,
        hidden: usize,
        n_blocks: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        loss.validate()?;
        ensure!(
            task.kind.compatible_losses().contains(&loss.kind),
            "loss {} does not fit task {}",
            loss.kind.name(),
            task.kind.name()
        );
        let (d_a, d_b) = task.input_widths();
        let d_out = task.d_out();
        let primary = Network::new(d_a, d_out, hidden, n_blocks, dropout, derive_seed(seed, 0))?;
        let secondary = match d_b {
            Some(d) => Some(Network::new(d, d_out, hidden, n_blocks, dropout, derive_seed(seed, 1))?),
            None => None,
        };
        let loss_params = loss.initial_loss_params();
        Ok(Self {
            task,
            loss,
            primary,
            secondary,
            loss_params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.primary.n_params()
            + self.secondary.as_ref().map_or(0, |n| n.n_params())
            + self.loss_params.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.primary.params.clone();
        if let Some(s) = &self.secondary {
            out.extend_from_slice(&s.params);
        }
        out.extend_from_slice(&self.loss_params);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let a = self.primary.n_params();
        self.primary.params.copy_from_slice(&flat[..a]);
        let mut off = a;
        if let Some(s) = &mut self.secondary {
            let b = s.n_params();
            s.params.copy_from_slice(&flat[off..off + b]);
            off += b;
        }
        self.loss_params.copy_from_slice(&flat[off..]);
    }

    pub fn embedding_width(&self) -> usize {
        self.primary.hidden
    }

    /// Loss and gradients for one batch. `rng` drives dropout in train mode.
    pub fn objective(&self, batch: &PretextBatch, mode: Mode, rng: &mut Rng) -> Result<Objective> {
        self.objective_impl(batch, mode, rng, None)
    }

    /// As [`Self::objective`], also applying running-statistic updates to
    /// `update` (a copy of `self` being trained).
    pub(crate) fn objective_impl(
        &self,
        batch: &PretextBatch,
        mode: Mode,
        rng: &mut Rng,
        update: Option<&mut EncoderModel>,
    ) -> Result<Objective> {
        let spec = &self.loss;
        let np = self.primary.n_params();
        let mut grads = vec![0.0; self.n_params()];
        let mut kinks = Vec::new();
        let mut caches: Vec<ForwardCache> = Vec::new();
        let loss_value;

        match (&batch.targets, spec.kind) {
            (Targets::Classes(t), LossKind::CrossEntropy) => {
                let c = self.primary.forward(batch.inputs.view(), mode, Some(rng))?;
                let g = loss::cross_entropy(c.outputs.view(), t)?;
                add(&mut grads[..np], &self.primary.backward(&c, Some(&g.grad), None));
                loss_value = g.loss;
                caches.push(c);
            }
            (Targets::Classes(t), LossKind::Arpl) => {
                let c = self.primary.forward(batch.inputs.view(), mode, Some(rng))?;
                let g = loss::arpl(
                    c.embeddings.view(),
                    self.primary.head_weights(),
                    self.loss_params[0],
                    t,
                    spec.arpl_gamma,
                    spec.arpl_lambda,
                )?;
                add(&mut grads[..np], &self.primary.backward(&c, None, Some(&g.grad_emb)));
                let r = self.primary.head_weight_range();
                add_iter(&mut grads[r], g.grad_points.iter());
                grads[self.n_params() - 1] += g.grad_radius;
                loss_value = g.loss;
                kinks.extend(g.kinks);
                caches.push(c);
            }
            (Targets::Classes(t), LossKind::Aam) => {
                let c = self.primary.forward(batch.inputs.view(), mode, Some(rng))?;
                let g = loss::aam(
                    c.embeddings.view(),
                    self.primary.head_weights(),
                    t,
                    spec.aam_scale,
                    spec.aam_margin,
                )?;
                add(&mut grads[..np], &self.primary.backward(&c, None, Some(&g.grad_emb)));
                let r = self.primary.head_weight_range();
                add_iter(&mut grads[r], g.grad_weights.iter());
                loss_value = g.loss;
                kinks.extend(g.kinks);
                caches.push(c);
            }
            (Targets::MultiHot(t), LossKind::BceMultilabel) => {
                let c = self.primary.forward(batch.inputs.view(), mode, Some(rng))?;
                let g = loss::bce_multilabel(c.outputs.view(), t.view())?;
                add(&mut grads[..np], &self.primary.backward(&c, Some(&g.grad), None));
                loss_value = g.loss;
                caches.push(c);
            }
            (Targets::Reconstruction(t), LossKind::Mse | LossKind::Mae) => {
                let c = self.primary.forward(batch.inputs.view(), mode, Some(rng))?;
                let g = if spec.kind == LossKind::Mse {
                    loss::mse(c.outputs.view(), t.view())?
                } else {
                    loss::mae(c.outputs.view(), t.view())?
                };
                add(&mut grads[..np], &self.primary.backward(&c, Some(&g.grad), None));
                loss_value = g.loss;
                kinks.extend(g.kinks);
                caches.push(c);
            }
            (Targets::Views, LossKind::Infonce | LossKind::Vicreg) => {
                let b = batch.views.as_ref().expect("paired views");
                let n = batch.inputs.nrows();
                ensure!(n >= 2, "contrastive losses need a batch of at least 2 rows");
                let both = ndarray::concatenate(Axis(0), &[batch.inputs.view(), b.view()])
                    .expect("same width");
                let c = self.primary.forward(both.view(), mode, Some(rng))?;
                let za = c.outputs.slice(ndarray::s![..n, ..]);
                let zb = c.outputs.slice(ndarray::s![n.., ..]);
                let g = if spec.kind == LossKind::Infonce {
                    loss::infonce(za, zb, spec.temperature)?
                } else {
                    loss::vicreg(za, zb, spec.vicreg_weights)?
                };
                let d = ndarray::concatenate(Axis(0), &[g.grad_a.view(), g.grad_b.view()])
                    .expect("same width");
                add(&mut grads[..np], &self.primary.backward(&c, Some(&d), None));
                loss_value = g.loss;
                kinks.extend(g.kinks);
                caches.push(c);
            }
            (Targets::Windows(starts), LossKind::Infonce | LossKind::Vicreg) => {
                let sec = self.secondary.as_ref().expect("EICL secondary network");
                let comps = batch.views.as_ref().expect("window complements");
                let n = comps.nrows();
                ensure!(n >= 2, "contrastive losses need a batch of at least 2 rows");
                let w = batch.inputs.nrows() / n;
                let ca = self.primary.forward(batch.inputs.view(), mode, Some(rng))?;
                let cb = sec.forward(comps.view(), mode, Some(rng))?;
                let (ga, gb, value, k) = if spec.kind == LossKind::Infonce {
                    let g = loss::window_infonce(ca.outputs.view(), cb.outputs.view(), starts, spec.temperature)?;
                    (g.grad_a, g.grad_b, g.loss, g.kinks)
                } else {
                    let rows: Vec<usize> = starts.iter().enumerate().map(|(i, s)| i * w + s).collect();
                    let za = ca.outputs.select(Axis(0), &rows);
                    let g = loss::vicreg(za.view(), cb.outputs.view(), spec.vicreg_weights)?;
                    let mut full = Array2::zeros(ca.outputs.dim());
                    for (r, &row) in rows.iter().enumerate() {
                        full.row_mut(row).assign(&g.grad_a.row(r));
                    }
                    (full, g.grad_b, g.loss, g.kinks)
                };
                add(&mut grads[..np], &self.primary.backward(&ca, Some(&ga), None));
                let nb = sec.n_params();
                add(&mut grads[np..np + nb], &sec.backward(&cb, Some(&gb), None));
                loss_value = value;
                kinks.extend(k);
                caches.push(ca);
                caches.push(cb);
            }
            _ => {
                return Err(crate::error::contract(format!(
                    "batch targets do not match loss {}",
                    spec.kind.name()
                )))
            }
        }

        if let Some(model) = update {
            model.primary.update_running_stats(&caches[0]);
            if let (Some(s), Some(c)) = (model.secondary.as_mut(), caches.get(1)) {
                s.update_running_stats(c);
            }
        }
        let mut sig: Vec<bool> = caches.iter().flat_map(|c| c.relu_signature()).collect();
        sig.extend(kinks);
        Ok(Objective {
            loss: loss_value,
            grads,
            kinks: sig,
        })
    }

    /// Eval-mode penultimate embeddings without augmentation. EICL averages
    /// the window and complement embeddings over every window position.
    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure!(
            x.ncols() == self.task.d,
            "encoder expects width {}, got {}",
            self.task.d,
            x.ncols()
        );
        if self.task.kind != TaskKind::Eicl {
            return self.primary.embed(x);
        }
        let sec = self.secondary.as_ref().expect("EICL secondary network");
        let w = self.task.n_windows();
        let mut acc = Array2::<f64>::zeros((x.nrows(), self.embedding_width()));
        for s in 0..w {
            let (a, b) = self.task.split_window(x, s);
            acc = acc + self.primary.embed(a.view())? + sec.embed(b.view())?;
        }
        Ok(acc / (2.0 * w as f64))
    }

    /// Mean loss over `x` in eval mode, using augmentations drawn from `rng`.
    pub fn eval_loss(
        &self,
        x: ArrayView2<f64>,
        pool: ArrayView2<f64>,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        let n = x.nrows();
        ensure!(n >= 1, "no rows to evaluate");
        let mut total = 0.0;
        for (lo, hi) in eval_chunks(n, batch_size) {
            let xb = x.slice(ndarray::s![lo..hi, ..]);
            let batch = self.task.make_batch(xb, pool, rng)?;
            let o = self.objective(&batch, Mode::Eval, rng)?;
            total += o.loss * (hi - lo) as f64;
        }
        Ok(total / n as f64)
    }
}

/// Consecutive chunks of at most `size` rows; a final single row is merged
/// into the previous chunk so that every chunk has at least two rows.
pub fn eval_chunks(n: usize, size: usize) -> Vec<(usize, usize)> {
    let size = size.max(2);
    let mut out = Vec::new();
    let mut lo = 0;
    while lo < n {
        let hi = (lo + size).min(n);
        out.push((lo, hi));
        lo = hi;
    }
    if out.len() > 1 && out.last().map_or(false, |(a, b)| b - a < 2) {
        let (_, hi) = out.pop().expect("len > 1");
        out.last_mut().expect("len > 0").1 = hi;
    }
    out
}

fn add_iter<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
