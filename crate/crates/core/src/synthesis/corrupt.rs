use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::anomalies::quantile;
use super::forest::ImportanceRanking;
use crate::error::{ensure, Result};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    AddUninformative,
    MissingValues,
    RemoveImportant,
    SelectImportant,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        Self::AddUninformative,
        Self::MissingValues,
        Self::RemoveImportant,
        Self::SelectImportant,
    ];

    pub fn needs_ranking(self) -> bool {
        matches!(self, Self::RemoveImportant | Self::SelectImportant)
    }
}

/// Feature matrices of one split. All three share the column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub train: Array2<f64>,
    pub val: Array2<f64>,
    pub test: Array2<f64>,
}

impl Partitions {
    pub fn d(&self) -> usize {
        self.train.ncols()
    }

    fn map(&self, f: impl Fn(ArrayView2<f64>) -> Array2<f64>) -> Self {
        Self {
            train: f(self.train.view()),
            val: f(self.val.view()),
            test: f(self.test.view()),
        }
    }

    fn select_columns(&self, cols: &[usize]) -> Self {
        self.map(|m| m.select(Axis(1), cols))
    }
}

/// Columns kept by `remove_important`: ⌊p·d⌋ least important ones go.
pub fn removed_count(d: usize, proportion: f64) -> usize {
    ((proportion * d as f64) + 1e-9).floor() as usize
}

/// Columns kept by `select_important`: ⌈p·d⌉ most important ones.
pub fn selected_count(d: usize, proportion: f64) -> usize {
    ((proportion * d as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn corrupt(
    kind: CorruptionKind,
    parts: &Partitions,
    proportion: f64,
    ranking: Option<&ImportanceRanking>,
    seed: u64,
) -> Result<Partitions> {
    ensure!(
        proportion > 0.0 && proportion <= 1.0,
        "corruption proportion must lie in (0, 1], got {proportion}"
    );
    let d = parts.d();
    ensure!(
        parts.val.ncols() == d && parts.test.ncols() == d,
        "splits disagree on the column count"
    );
    ensure!(parts.train.nrows() >= 1, "corruption needs training rows");
    let ranking = if kind.needs_ranking() {
        let r = ranking.ok_or_else(|| crate::error::contract(format!("{kind:?} needs a feature ranking")))?;
        ensure!(r.order.len() == d, "ranking covers {} features, data has {d}", r.order.len());
        Some(r)
    } else {
        None
    };
    let out = match kind {
        CorruptionKind::AddUninformative => add_uninformative(parts, removed_count(d, proportion), seed),
        CorruptionKind::MissingValues => {
            let mut stream = 0;
            let masks = [&parts.train, &parts.val, &parts.test].map(|m| {
                stream += 1;
                random_mask(m.nrows(), d, proportion, &mut Rng::new(derive_seed(seed, stream)))
            });
            apply_missing(parts, &masks)?
        }
        CorruptionKind::RemoveImportant => {
            let drop = removed_count(d, proportion);
            let order = &ranking.expect("checked").order;
            let mut keep = order[..d - drop].to_vec();
            keep.sort_unstable();
            parts.select_columns(&keep)
        }
        CorruptionKind::SelectImportant => {
            let order = &ranking.expect("checked").order;
            parts.select_columns(&order[..selected_count(d, proportion)])
        }
    };
    ensure!(out.d() >= 1, "{kind:?} at proportion {proportion} leaves no columns");
    Ok(out)
}

/// Exactly ⌊p·n·d⌋ entries, drawn without replacement.
fn random_mask(n: usize, d: usize, proportion: f64, rng: &mut Rng) -> Array2<bool> {
    let total = n * d;
    let count = (((proportion * total as f64) + 1e-9).floor() as usize).min(total);
    let mut mask = Array2::from_elem((n, d), false);
    for flat in rng.sample_indices(total, count) {
        mask[[flat / d, flat % d]] = true;
    }
    mask
}

/// Replaces masked entries (`true` = missing) by the column mean of the
/// observed training entries. A column with no observed training entry is
/// imputed with 0.
pub fn apply_missing(parts: &Partitions, masks: &[Array2<bool>; 3]) -> Result<Partitions> {
    let mats = [&parts.train, &parts.val, &parts.test];
    for (m, mask) in mats.iter().zip(masks) {
        ensure!(m.dim() == mask.dim(), "mask shape {:?} does not match split {:?}", mask.dim(), m.dim());
    }
    let d = parts.d();
    let means: Vec<f64> = (0..d)
        .map(|j| {
            let (s, c) = parts
                .train
                .column(j)
                .iter()
                .zip(masks[0].column(j))
                .filter(|(_, &m)| !m)
                .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        })
        .collect();
    let fill = |m: &Array2<f64>, mask: &Array2<bool>| {
        let mut out = m.clone();
        for ((i, j), &miss) in mask.indexed_iter() {
            if miss {
                out[[i, j]] = means[j];
            }
        }
        out
    };
    Ok(Partitions {
        train: fill(&parts.train, &masks[0]),
        val: fill(&parts.val, &masks[1]),
        test: fill(&parts.test, &masks[2]),
    })
}

/// Appends `m` Gaussian columns. Column `i` copies the train mean and the
/// IQR-implied spread of a randomly chosen template column.
fn add_uninformative(parts: &Partitions, m: usize, seed: u64) -> Partitions {
    if m == 0 {
        return parts.clone();
    }
    let d = parts.d();
    let mut rng = Rng::new(seed);
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let mut col = parts.train.column(j).to_vec();
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let iqr = quantile(&col, 0.75) - quantile(&col, 0.25);
            (mean, iqr / 1.349)
        })
        .collect();
    let templates: Vec<usize> = (0..m).map(|_| rng.below(d)).collect();
    let mut extend = |base: &Array2<f64>| {
        let extra = Array2::from_shape_fn((base.nrows(), m), |(_, c)| {
            let (mu, sd) = stats[templates[c]];
            mu + sd * rng.normal()
        });
        concatenate(Axis(1), &[base.view(), extra.view()]).expect("row counts agree")
    };
    Partitions {
        train: extend(&parts.train),
        val: extend(&parts.val),
        test: extend(&parts.test),
    }
}
