use crate::error::{ensure, Error, Result};

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve on a 0–100 scale via the Mann–Whitney statistic.
/// Label 1 marks anomalies, which should score higher.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    ensure!(
        scores.len() == labels.len(),
        "{} scores for {} labels",
        scores.len(),
        labels.len()
    );
    ensure!(scores.iter().all(|s| !s.is_nan()), "NaN score");
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    ensure!(pos + neg == labels.len(), "labels must be 0 or 1");
    ensure!(pos > 0 && neg > 0, "AUROC needs both classes, got {pos} anomalies and {neg} normals");
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let (p, q) = (pos as f64, neg as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(100.0 * u / (p * q))
}

/// Pearson correlation of midranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(a.len() == b.len(), "lengths differ: {} and {}", a.len(), b.len());
    ensure!(a.len() >= 3, "rank correlation needs at least 3 pairs");
    pearson(&midranks(a), &midranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numeric("correlation of a constant vector is undefined".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
