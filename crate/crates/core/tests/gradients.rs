mod oracles;

use oracles::gradients::{check, fixture, task_for};
use tadlab_core::nn::LossKind;
use tadlab_core::pretext::TaskKind;

fn run(loss: LossKind, task: TaskKind) {
    for seed in 0..20 {
        let (model, batch) = fixture(loss, task, seed);
        let r = check(&model, &batch, seed, 1e-6);
        assert!(r.checked > r.skipped, "{loss:?} seed {seed}: too many kinks");
        assert!(
            r.max_rel_error <= 1e-4,
            "{loss:?} seed {seed}: relative error {:e} at {:?} of {}",
            r.max_rel_error, r.worst, model.n_params()
        );
    }
}

#[test]
fn cross_entropy_gradients() {
    run(LossKind::CrossEntropy, task_for(LossKind::CrossEntropy));
}

#[test]
fn arpl_gradients() {
    run(LossKind::Arpl, task_for(LossKind::Arpl));
}

#[test]
fn aam_gradients() {
    run(LossKind::Aam, task_for(LossKind::Aam));
}

#[test]
fn bce_gradients() {
    run(LossKind::BceMultilabel, task_for(LossKind::BceMultilabel));
}

#[test]
fn mse_gradients() {
    run(LossKind::Mse, task_for(LossKind::Mse));
}

#[test]
fn mae_gradients() {
    run(LossKind::Mae, task_for(LossKind::Mae));
}

#[test]
fn infonce_gradients() {
    run(LossKind::Infonce, task_for(LossKind::Infonce));
}

#[test]
fn vicreg_gradients() {
    run(LossKind::Vicreg, task_for(LossKind::Vicreg));
}

#[test]
fn eicl_window_infonce_gradients() {
    run(LossKind::Infonce, TaskKind::Eicl);
}

#[test]
fn eicl_vicreg_gradients() {
    run(LossKind::Vicreg, TaskKind::Eicl);
}
