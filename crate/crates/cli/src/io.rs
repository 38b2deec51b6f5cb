//! Table and artifact files shared by the subcommands and the pipeline.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use tadlab_core::data::{format_f64, LABEL_COLUMN};
use tadlab_core::{Error, Result};

/// A numeric CSV whose `label` column, if any, is split off.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub x: Array2<f64>,
    pub labels: Option<Vec<u8>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let bytes = fs::read(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&bytes[..]);
    let all: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let label_col = all.iter().position(|h| h == LABEL_COLUMN);
    let header: Vec<String> = all
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: all.get(c).cloned().unwrap_or_default(),
                message: format!("`{cell}` is not a number"),
            })?;
            if Some(c) == label_col {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: LABEL_COLUMN.into(),
                        message: format!("label must be 0 or 1, found `{cell}`"),
                    });
                }
                labels.push(v as u8);
            } else {
                values.push(v);
            }
        }
    }
    let n = values.len() / header.len().max(1);
    let x = Array2::from_shape_vec((n, header.len()), values).map_err(|e| Error::Schema(e.to_string()))?;
    Ok(Table {
        header,
        x,
        labels: label_col.map(|_| labels),
    })
}

pub fn write_table(path: &Path, header: &[String], x: &Array2<f64>, labels: Option<&[u8]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut h = header.to_vec();
    if labels.is_some() {
        h.push(LABEL_COLUMN.into());
    }
    w.write_record(&h)?;
    for (i, row) in x.outer_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn column_names(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

/// Reads `label` values, either positionally or joined by `row_id` when both
/// files carry one.
pub fn read_labels(path: &Path) -> Result<(Option<Vec<usize>>, Vec<u8>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let lc = header
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| Error::Schema(format!("{} has no `label` column", path.display())))?;
    let ic = header.iter().position(|h| h == "row_id");
    let (mut ids, mut labels) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::Parse {
            row: i + 1,
            column: String::new(),
            message: m,
        };
        let l: f64 = rec[lc].parse().map_err(|_| bad(format!("bad label `{}`", &rec[lc])))?;
        if l != 0.0 && l != 1.0 {
            return Err(bad(format!("label must be 0 or 1, found `{}`", &rec[lc])));
        }
        labels.push(l as u8);
        if let Some(c) = ic {
            ids.push(rec[c].parse().map_err(|_| bad(format!("bad row id `{}`", &rec[c])))?);
        }
    }
    Ok((ic.map(|_| ids), labels))
}

/// Writes to a sibling temp file and renames, so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let tmp = path.with_extension(format!(
        "tmp{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
