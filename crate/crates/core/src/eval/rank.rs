//! Friedman test with the Nemenyi post-hoc critical difference.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::metrics::midranks;
use crate::error::{ensure, Result};

/// Studentized range quantiles divided by √2, for k = 2..=20 methods.
const Q_05: [f64; 19] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391,
    3.426, 3.458, 3.489, 3.517, 3.544,
];
const Q_10: [f64; 19] = [
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978, 3.030, 3.077, 3.120, 3.159,
    3.196, 3.230, 3.261, 3.291, 3.319,
];

pub fn nemenyi_q(k: usize, alpha: f64) -> Result<f64> {
    ensure!((2..=20).contains(&k), "Nemenyi table covers 2 to 20 methods, got {k}");
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_10
    } else {
        return Err(crate::error::contract(format!("no Nemenyi table for alpha = {alpha}")));
    };
    Ok(table[k - 2])
}

pub fn critical_difference(k: usize, n_rows: usize, alpha: f64) -> Result<f64> {
    Ok(nemenyi_q(k, alpha)? * ((k * (k + 1)) as f64 / (6.0 * n_rows as f64)).sqrt())
}

/// AUROC cells, rows are dataset × configuration, columns are methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub rows: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(methods: Vec<String>) -> Self {
        Self {
            methods,
            rows: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push_row(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<()> {
        ensure!(
            values.len() == self.methods.len(),
            "row has {} cells for {} methods",
            values.len(),
            self.methods.len()
        );
        for v in values.iter().flatten() {
            ensure!((0.0..=100.0).contains(v), "AUROC cell {v} outside [0, 100]");
        }
        self.rows.push(name.into());
        self.values.push(values);
        Ok(())
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|r| r[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub method: String,
    pub avg_rank: f64,
    /// Methods whose average rank differs from this one by more than the CD.
    pub significant_pairs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagram {
    pub entries: Vec<RankEntry>,
    pub n_rows: usize,
    /// Rows left out because a cell was missing.
    pub excluded_rows: Vec<String>,
    pub friedman_chi2: f64,
    pub friedman_p: f64,
    pub critical_difference: f64,
    pub alpha: f64,
}

/// Rank 1 is the highest AUROC in a row; ties share midranks.
pub fn rank_compare(table: &ScoreTable, alpha: f64) -> Result<RankDiagram> {
    let k = table.methods.len();
    ensure!(k >= 3, "rank comparison needs at least 3 methods, got {k}");
    let mut excluded = Vec::new();
    let mut sums = vec![0.0; k];
    let mut n = 0usize;
    for (name, row) in table.rows.iter().zip(&table.values) {
        if row.iter().any(Option::is_none) {
            excluded.push(name.clone());
            continue;
        }
        let negated: Vec<f64> = row.iter().map(|v| -v.expect("complete")).collect();
        for (s, r) in sums.iter_mut().zip(midranks(&negated)) {
            *s += r;
        }
        n += 1;
    }
    ensure!(n >= 5, "rank comparison needs at least 5 complete rows, got {n}");
    let avg: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let (kf, nf) = (k as f64, n as f64);
    let chi2 = 12.0 * nf / (kf * (kf + 1.0)) * (avg.iter().map(|r| r * r).sum::<f64>() - kf * (kf + 1.0).powi(2) / 4.0);
    let chi2 = chi2.max(0.0);
    let p = 1.0 - ChiSquared::new(kf - 1.0).expect("k >= 3").cdf(chi2);
    let cd = critical_difference(k, n, alpha)?;
    let entries = (0..k)
        .map(|i| RankEntry {
            method: table.methods[i].clone(),
            avg_rank: avg[i],
            significant_pairs: (0..k)
                .filter(|&j| j != i && (avg[i] - avg[j]).abs() > cd)
                .map(|j| table.methods[j].clone())
                .collect(),
        })
        .collect();
    Ok(RankDiagram {
        entries,
        n_rows: n,
        excluded_rows: excluded,
        friedman_chi2: chi2,
        friedman_p: p,
        critical_difference: cd,
        alpha,
    })
}
