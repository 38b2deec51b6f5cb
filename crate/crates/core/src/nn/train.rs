//! Training with validation-loss model selection.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::loss::LossSpec;
use super::model::EncoderModel;
use super::network::{Mode, DEFAULT_DROPOUT, EMBED_DIM};
use super::optim::Adam;
use crate::error::{ensure, Error, Result};
use crate::pretext::{build_task, TaskConfig, TaskKind};
use crate::rng::{derive_seed, Rng};

/// Stream used for validation augmentations; fixed across epochs.
const VAL_STREAM: u64 = 0x7661_6c00;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    #[serde(default = "d_blocks")]
    pub n_blocks: usize,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
}

fn d_blocks() -> usize {
    2
}
fn d_hidden() -> usize {
    EMBED_DIM
}
fn d_dropout() -> f64 {
    DEFAULT_DROPOUT
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 200,
            batch_size: 256,
            patience: 10,
            seed: 0,
            n_blocks: d_blocks(),
            hidden: d_hidden(),
            dropout: d_dropout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// The model snapshot with the lowest validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEncoder {
    pub model: EncoderModel,
    pub config: TrainConfig,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

impl TrainedEncoder {
    pub fn task_kind(&self) -> TaskKind {
        self.model.task.kind
    }

    /// Writes `epoch,train_loss,val_loss`.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.curve {
            s.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }
}

/// Trains `model` on `train`, selecting the epoch with the lowest loss on
/// `val`. Stops after `patience` epochs without improvement.
pub fn train_pretext(
    model: EncoderModel,
    train: ArrayView2<f64>,
    val: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<TrainedEncoder> {
    ensure!(train.nrows() >= 2, "training needs at least 2 rows");
    ensure!(val.nrows() >= 1, "validation set is empty");
    ensure!(config.lr > 0.0, "learning rate must be positive");
    ensure!(config.batch_size >= 2, "batch size must be >= 2");
    ensure!(config.max_epochs >= 1, "max_epochs must be >= 1");
    let d = model.task.d;
    ensure!(
        train.ncols() == d && val.ncols() == d,
        "data width differs from task width {d}"
    );

    let mut model = model;
    let mut opt = Adam::new(model.n_params(), config.lr);
    let mut best: Option<(f64, usize, EncoderModel)> = None;
    let mut curve = Vec::new();
    let mut since_best = 0;
    let n = train.nrows();

    for epoch in 1..=config.max_epochs {
        let mut rng = Rng::new(derive_seed(config.seed, epoch as u64));
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let xb = train.select(Axis(0), chunk);
            let batch = model.task.make_batch(xb.view(), train, &mut rng)?;
            let mut next = model.clone();
            let obj = model.objective_impl(&batch, Mode::Train, &mut rng, Some(&mut next))?;
            if !obj.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {} at epoch {epoch}, batch {b}",
                    obj.loss
                )));
            }
            let mut flat = next.flat_params();
            opt.step(&mut flat, &obj.grads);
            next.set_flat_params(&flat);
            model = next;
            total += obj.loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = if seen > 0 { total / seen as f64 } else { f64::NAN };
        let mut val_rng = Rng::new(derive_seed(config.seed, VAL_STREAM));
        let val_loss = model.eval_loss(val, train, config.batch_size, &mut val_rng)?;
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, model) = best.ok_or_else(|| {
        Error::Numeric("validation loss was never finite".into())
    })?;
    Ok(TrainedEncoder {
        model,
        config: config.clone(),
        best_val_loss,
        best_epoch,
        curve,
    })
}

/// Search space for [`random_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    #[serde(default = "d_draws")]
    pub draws: usize,
    #[serde(default = "d_lr")]
    pub lr_range: [f64; 2],
    #[serde(default = "d_batches")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "d_block_choices")]
    pub block_choices: Vec<usize>,
    #[serde(default = "d_widths")]
    pub contrastive_widths: Vec<usize>,
}

fn d_draws() -> usize {
    8
}
fn d_lr() -> [f64; 2] {
    [1e-4, 1e-2]
}
fn d_batches() -> Vec<usize> {
    vec![64, 256]
}
fn d_block_choices() -> Vec<usize> {
    vec![2, 3]
}
fn d_widths() -> Vec<usize> {
    vec![128, 256, 512]
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            draws: d_draws(),
            lr_range: d_lr(),
            batch_sizes: d_batches(),
            block_choices: d_block_choices(),
            contrastive_widths: d_widths(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub config: TrainConfig,
    pub contrastive_width: Option<usize>,
    pub best_val_loss: f64,
}

pub struct SearchResult {
    pub best: TrainedEncoder,
    pub trials: Vec<SearchTrial>,
}

/// Draws hyperparameters, trains each draw and keeps the lowest validation
/// loss. The first strictly lowest draw wins ties.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    task_kind: TaskKind,
    task_config: &TaskConfig,
    loss: &LossSpec,
    train: ArrayView2<f64>,
    val: ArrayView2<f64>,
    base: &TrainConfig,
    space: &SearchSpace,
    seed: u64,
) -> Result<SearchResult> {
    ensure!(space.draws >= 1, "search needs at least one draw");
    ensure!(
        space.lr_range[0] > 0.0 && space.lr_range[0] <= space.lr_range[1],
        "invalid learning-rate range"
    );
    ensure!(
        !space.batch_sizes.is_empty() && !space.block_choices.is_empty(),
        "empty search choices"
    );
    let mut rng = Rng::new(seed);
    let (lo, hi) = (space.lr_range[0].ln(), space.lr_range[1].ln());
    let mut best: Option<TrainedEncoder> = None;
    let mut trials = Vec::new();
    for draw in 0..space.draws {
        let lr = rng.uniform_range(lo, hi).exp();
        let batch_size = space.batch_sizes[rng.below(space.batch_sizes.len())];
        let n_blocks = space.block_choices[rng.below(space.block_choices.len())];
        let width = (task_kind.is_contrastive() && !space.contrastive_widths.is_empty())
            .then(|| space.contrastive_widths[rng.below(space.contrastive_widths.len())]);
        let cfg = TrainConfig {
            lr,
            batch_size,
            n_blocks,
            seed: derive_seed(seed, 1000 + draw as u64),
            ..base.clone()
        };
        let mut tc = task_config.clone();
        if let Some(w) = width {
            tc.contrastive_width = w;
        }
        let task = build_task(task_kind, train.ncols(), &tc, derive_seed(cfg.seed, 1))?;
        let model = EncoderModel::new(task, loss.clone(), cfg.hidden, n_blocks, cfg.dropout, cfg.seed)?;
        let enc = train_pretext(model, train, val, &cfg)?;
        trials.push(SearchTrial {
            config: cfg,
            contrastive_width: width,
            best_val_loss: enc.best_val_loss,
        });
        if best.as_ref().map_or(true, |b| enc.best_val_loss < b.best_val_loss) {
            best = Some(enc);
        }
    }
    Ok(SearchResult {
        best: best.expect("draws >= 1"),
        trials,
    })
}

/// Eval-mode penultimate embeddings, no augmentation.
pub fn extract_embeddings(enc: &TrainedEncoder, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    enc.model.embed(x)
}
