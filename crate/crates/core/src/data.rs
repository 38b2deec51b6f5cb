//! Labelled tables, one-class splits and standardization.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

/// Name of the label column in dataset CSV files.
pub const LABEL_COLUMN: &str = "label";

/// Floor applied to per-column standard deviations.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: String,
    /// Hex SHA-256 of the source bytes.
    pub checksum: String,
}

/// A labelled feature matrix. Label 0 is normal, 1 is anomalous.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Array2<f64>, y: Vec<u8>) -> Result<Self> {
        let feature_names = (0..x.ncols()).map(|i| format!("x{i}")).collect();
        let checksum = checksum_matrix(&x.view(), &y);
        let ds = Self {
            name: name.into(),
            x,
            y,
            feature_names,
            provenance: Provenance {
                path: String::new(),
                checksum,
            },
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.x.dim();
        if n < 2 || d < 1 {
            return Err(Error::Validation(format!(
                "dataset `{}` must have n >= 2 and d >= 1, got {n}x{d}",
                self.name
            )));
        }
        if self.y.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {n} rows",
                self.y.len()
            )));
        }
        if let Some(((r, c), v)) = self.x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {v} at row {r}, column {c}"
            )));
        }
        if let Some(bad) = self.y.iter().find(|&&l| l > 1) {
            return Err(Error::Validation(format!("label {bad} is not 0/1")));
        }
        if !self.y.contains(&0) {
            return Err(Error::Validation("no normal rows".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_anomalies(&self) -> usize {
        self.y.iter().filter(|&&l| l == 1).count()
    }

    pub fn normal_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.y[i] == 0).collect()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), idx)
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.y[i]).collect()
    }
}

fn checksum_matrix(x: &ArrayView2<f64>, y: &[u8]) -> String {
    let mut h = Sha256::new();
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    h.update(y);
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a comma-separated table with a header row and a `label` column.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut ds = parse_dataset(&bytes, &name)?;
    ds.provenance = Provenance {
        path: path.display().to_string(),
        checksum: sha256_hex(&bytes),
    };
    Ok(ds)
}

/// Parses CSV bytes; see [`load_dataset`].
pub fn parse_dataset(bytes: &[u8], name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_col = headers
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| Error::Schema(format!("missing `{LABEL_COLUMN}` column")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_col)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // data rows are numbered from 1, after the header
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_col {
                let label = match cell {
                    "0" | "0.0" => 0,
                    "1" | "1.0" => 1,
                    other => {
                        return Err(Error::Parse {
                            row,
                            column: headers[c].clone(),
                            message: format!("label must be 0 or 1, found `{other}`"),
                        })
                    }
                };
                y.push(label);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value `{cell}` at row {row}, column `{}`",
                    headers[c]
                )));
            }
            values.push(v);
        }
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, feature_names.len()), values)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let checksum = sha256_hex(bytes);
    let ds = Dataset {
        name: name.to_owned(),
        x,
        y,
        feature_names,
        provenance: Provenance {
            path: String::new(),
            checksum,
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `x` plus `label` in the same CSV schema that [`load_dataset`] reads.
pub fn write_dataset_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = ds.feature_names.clone();
    header.push(LABEL_COLUMN.into());
    w.write_record(&header)?;
    for (row, &label) in ds.x.outer_iter().zip(&ds.y) {
        let mut rec: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Row indices of the one-class train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Half of the normal rows (rounded down) go to training; a fifth of that half
/// (rounded down) is held out for validation. Everything else, including every
/// anomaly, is test data. Index lists are returned sorted.
pub fn one_class_split(ds: &Dataset, seed: u64) -> Result<SplitBundle> {
    let mut normals = ds.normal_indices();
    if normals.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "one-class split needs at least 4 normal rows, `{}` has {}",
            ds.name,
            normals.len()
        )));
    }
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut normals);
    let half = normals.len() / 2;
    let n_val = half / 5;
    let mut val = normals[..n_val].to_vec();
    let mut train = normals[n_val..half].to_vec();
    let mut test: Vec<usize> = normals[half..].to_vec();
    test.extend((0..ds.n()).filter(|&i| ds.y[i] == 1));
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitBundle {
        seed,
        train,
        val,
        test,
    })
}

/// Per-column affine map fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    /// Columns whose fitted standard deviation fell below [`STD_FLOOR`].
    pub constant_columns: Vec<usize>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        ensure!(x.nrows() > 0, "cannot fit a standardizer on zero rows");
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let mut std = x.std_axis(Axis(0), 0.0);
        let mut constant_columns = Vec::new();
        for (j, s) in std.iter_mut().enumerate() {
            if *s < STD_FLOOR || !s.is_finite() {
                // centre only; dividing by the floor would blow up unseen values
                *s = 1.0;
                constant_columns.push(j);
            }
        }
        Ok(Self {
            mean,
            std,
            constant_columns,
        })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure!(
            x.ncols() == self.mean.len(),
            "standardizer fitted on {} columns, got {}",
            self.mean.len(),
            x.ncols()
        );
        Ok((&x - &self.mean) / &self.std)
    }
}

/// Fits on `fit_on` and transforms `apply_to`.
pub fn standardize(
    fit_on: ArrayView2<f64>,
    apply_to: ArrayView2<f64>,
) -> Result<(Standardizer, Array2<f64>)> {
    let s = Standardizer::fit(fit_on)?;
    let out = s.transform(apply_to)?;
    Ok((s, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(normals: usize, anomalies: usize) -> Dataset {
        let n = normals + anomalies;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let mut y = vec![0u8; normals];
        y.extend(std::iter::repeat(1).take(anomalies));
        Dataset::new("toy", x, y).unwrap()
    }

    #[test]
    fn parses_three_row_csv() {
        let ds = parse_dataset(b"a,b,label\n1,2,0\n3,4,0\n5,6,1\n", "t").unwrap();
        assert_eq!((ds.n(), ds.d(), ds.n_anomalies()), (3, 2, 1));
        assert_eq!(ds.x, array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn label_column_may_be_anywhere() {
        let ds = parse_dataset(b"label,a\n0,1.5\n1,2.5\n", "t").unwrap();
        assert_eq!(ds.x, array![[1.5], [2.5]]);
        assert_eq!(ds.y, vec![0, 1]);
    }

    #[test]
    fn non_numeric_cell_names_coordinate() {
        let err = parse_dataset(b"a,b,label\n1,2,0\n3,abc,0\n", "t").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_label_is_schema_error() {
        assert!(matches!(
            parse_dataset(b"a,b\n1,2\n3,4\n", "t"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn nan_and_inf_rejected() {
        for cell in ["NaN", "inf", "-inf"] {
            let csv = format!("a,label\n1,0\n{cell},0\n");
            assert!(matches!(
                parse_dataset(csv.as_bytes(), "t"),
                Err(Error::Validation(_))
            ));
        }
    }

    #[test]
    fn split_sizes() {
        let ds = toy(100, 10);
        let s = one_class_split(&ds, 3).unwrap();
        assert_eq!(s.train.len(), 40);
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 60);
        assert_eq!(s.test.iter().filter(|&&i| ds.y[i] == 1).count(), 10);
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let ds = toy(37, 5);
        let a = one_class_split(&ds, 9).unwrap();
        let b = one_class_split(&ds, 9).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..42).collect::<Vec<_>>());
        assert!(a.train.iter().chain(&a.val).all(|&i| ds.y[i] == 0));
        assert_ne!(a, one_class_split(&ds, 10).unwrap());
    }

    #[test]
    fn split_needs_four_normals() {
        let ds = toy(3, 2);
        assert!(matches!(
            one_class_split(&ds, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn split_manifest_json_roundtrip() {
        let s = one_class_split(&toy(20, 2), 1).unwrap();
        let json = s.to_json().unwrap();
        assert!(json.starts_with("{\"seed\":1,\"train\":["));
        assert_eq!(SplitBundle::from_json(&json).unwrap(), s);
    }

    #[test]
    fn standardize_simple() {
        let (_, out) = standardize(array![[0.0], [2.0]].view(), array![[1.0]].view()).unwrap();
        assert_eq!(out, array![[0.0]]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let fit = array![[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]];
        let (s, out) = standardize(fit.view(), fit.view()).unwrap();
        assert_eq!(s.constant_columns, vec![1]);
        assert!(out.column(1).iter().all(|&v| v == 0.0));
        assert!(s.std.iter().all(|&v| v >= STD_FLOOR));
    }

    #[test]
    fn standardize_column_mismatch() {
        let fit = array![[1.0, 5.0], [3.0, 5.0]];
        assert!(standardize(fit.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn standardized_moments() {
        let mut rng = Rng::new(11);
        let fit = Array2::from_shape_fn((1000, 1), |_| 5.0 + 3.0 * rng.normal());
        let (_, out) = standardize(fit.view(), fit.view()).unwrap();
        let m = out.mean().unwrap();
        let sd = out.std(0.0);
        assert!(m.abs() < 1e-9, "mean {m}");
        assert!((sd - 1.0).abs() < 1e-6, "std {sd}");
    }

    #[test]
    fn standardizer_ignores_other_rows() {
        let train = array![[0.0, 1.0], [2.0, 3.0], [4.0, 7.0]];
        let s1 = Standardizer::fit(train.view()).unwrap();
        let s2 = Standardizer::fit(train.view()).unwrap();
        let test = array![[100.0, -4.0]];
        let _ = s1.transform(test.view()).unwrap();
        assert_eq!(s1, s2);
    }
}
