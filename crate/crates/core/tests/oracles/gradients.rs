//! Central finite differences over every parameter of a small encoder.
//!
//! Batch-norm over a handful of rows is strongly curved, so the plain
//! central difference at `STEP` carries an O(h^2) truncation error above
//! the tolerance. The oracle therefore Richardson-extrapolates the central
//! differences at `STEP` and `STEP / 2`, which cancels the h^2 term.

use ndarray::Array2;
use tadlab_core::nn::{EncoderModel, LossKind, LossSpec, Mode};
use tadlab_core::pretext::{build_task, PretextBatch, TaskConfig, TaskKind};
use tadlab_core::rng::Rng;

pub const STEP: f64 = 1e-4;

pub struct CheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst: (usize, f64, f64),
}

/// Task that exercises `loss`.
pub fn task_for(loss: LossKind) -> TaskKind {
    match loss {
        LossKind::CrossEntropy | LossKind::Arpl | LossKind::Aam => TaskKind::Rotation,
        LossKind::BceMultilabel => TaskKind::MaskColumns,
        LossKind::Mse | LossKind::Mae => TaskKind::Autoencoder,
        LossKind::Infonce | LossKind::Vicreg => TaskKind::ContrastiveShuffle,
    }
}

/// A small two-block model plus one training batch for `loss`.
pub fn fixture(loss: LossKind, task: TaskKind, seed: u64) -> (EncoderModel, PretextBatch) {
    let d = 5;
    let cfg = TaskConfig {
        classes: 3,
        contrastive_width: 4,
        ..TaskConfig::default()
    };
    let task = build_task(task, d, &cfg, seed).unwrap();
    let mut spec = LossSpec::new(loss);
    // make the ARPL hinge active for small random nets
    spec.arpl_gamma = 0.5;
    let mut model = EncoderModel::new(task, spec, 8, 2, 0.1, seed).unwrap();
    if loss == LossKind::Arpl {
        model.loss_params[0] = 4.0;
    }
    let mut rng = Rng::new(seed ^ 0xfeed);
    let x = Array2::from_shape_fn((16, d), |_| rng.normal());
    let pool = Array2::from_shape_fn((9, d), |_| rng.normal());
    let batch = model.task.make_batch(x.view(), pool.view(), &mut rng).unwrap();
    (model, batch)
}

/// Compares analytic and numeric gradients over all parameters. A coordinate
/// is skipped when a ReLU, hinge, sign or clamp flips between the two
/// perturbed evaluations. Relative error uses `max(|a|, |n|, floor * max(1, |loss|))`;
/// the loss factor keeps roundoff on large losses from dominating exactly
/// zero gradients.
pub fn check(model: &EncoderModel, batch: &PretextBatch, seed: u64, floor: f64) -> CheckReport {
    let eval = |m: &EncoderModel| m.objective(batch, Mode::Train, &mut Rng::new(seed)).unwrap();
    let base = eval(model);
    let flat = model.flat_params();
    let mut probe = model.clone();
    let mut report = CheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: (0, 0.0, 0.0),
    };
    for i in 0..flat.len() {
        let mut diffs = [0.0; 2];
        let mut flipped = false;
        for (slot, h) in [STEP, STEP / 2.0].into_iter().enumerate() {
            let mut p = flat.clone();
            p[i] = flat[i] + h;
            probe.set_flat_params(&p);
            let plus = eval(&probe);
            p[i] = flat[i] - h;
            probe.set_flat_params(&p);
            let minus = eval(&probe);
            flipped |= plus.kinks != minus.kinks || plus.kinks != base.kinks;
            diffs[slot] = (plus.loss - minus.loss) / (2.0 * h);
        }
        if flipped {
            report.skipped += 1;
            continue;
        }
        let numeric = (4.0 * diffs[1] - diffs[0]) / 3.0;
        let analytic = base.grads[i];
        let denom = analytic.abs().max(numeric.abs()).max(floor * base.loss.abs().max(1.0));
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (i, analytic, numeric);
        }
        report.checked += 1;
    }
    report
}
