//! Manifest execution: ingest, split, variant, standardize, pretext-train,
//! embed, project, detect, evaluate, report.

use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use tadlab_core::data::{format_f64, load_dataset, one_class_split, Dataset, SplitBundle, Standardizer};
use tadlab_core::detectors::{fit_score, DetectorConfig};
use tadlab_core::eval::report::{
    box_plot_svg, cd_diagram_svg, line_plot_svg, mean, rank_json, write_aggregates, write_score_table,
};
use tadlab_core::eval::{auroc, rank_compare, ScoreTable};
use tadlab_core::linalg::{principal_basis, residual_project};
use tadlab_core::nn::{checkpoint, extract_embeddings, random_search, LossKind, TrainedEncoder};
use tadlab_core::pretext::TaskKind;
use tadlab_core::rng::derive_seed;
use tadlab_core::synthesis::{
    corrupt, fit_gmm, forest_importance, make_toy, synthesize_anomalies, AnomalyKind, CorruptionKind,
    ImportanceRanking, Partitions,
};
use tadlab_core::{Error, Result};

use crate::cache::{cache_dir, cache_key, Cache};
use crate::io::write_atomic;
use crate::log::JsonLog;
use crate::manifest::{DatasetEntry, ExperimentManifest, PretextGrid};

pub const RAW: &str = "raw";
/// Significance level of the rank comparison in the report.
pub const RANK_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// One (dataset, variant, representation, fraction, detector) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub dataset: String,
    pub variant: String,
    pub representation: String,
    pub fraction: f64,
    pub detector: String,
    pub auroc: Option<f64>,
    pub error: Option<String>,
}

impl Cell {
    pub fn row_name(&self) -> String {
        format!("{}/{}/{}/f={}", self.dataset, self.variant, self.representation, self.fraction)
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub cells: Vec<Cell>,
    /// Encoders and embeddings computed during this run.
    pub built: usize,
    /// Encoders and embeddings read back from the cache.
    pub cache_hits: usize,
}

impl RunReport {
    pub fn failed(&self) -> Vec<&Cell> {
        self.cells.iter().filter(|c| c.error.is_some()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Clean,
    Synthetic(AnomalyKind),
    Corrupted(CorruptionKind, f64),
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Clean => "clean".into(),
            Variant::Synthetic(k) => format!("synthetic_{}", snake(k)),
            Variant::Corrupted(k, p) => format!("{}_p{p}", snake(k)),
        }
    }
}

/// The serde name of a unit enum variant.
fn snake(v: &impl Serialize) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn variants(m: &ExperimentManifest) -> Vec<Variant> {
    let mut out = vec![Variant::Clean];
    if let Some(s) = &m.synthesis {
        out.extend(s.kinds.iter().map(|&k| Variant::Synthetic(k)));
    }
    if let Some(c) = &m.corruption {
        for &k in &c.kinds {
            out.extend(c.proportions.iter().map(|&p| Variant::Corrupted(k, p)));
        }
    }
    out
}

fn representations(m: &ExperimentManifest) -> Vec<String> {
    let mut out = vec![RAW.to_string()];
    if let Some(p) = &m.pretext {
        out.extend(p.pairs().into_iter().map(|(t, l)| rep_name(t, l)));
    }
    out
}

pub fn rep_name(task: TaskKind, loss: LossKind) -> String {
    format!("{}+{}", task.name(), loss.name())
}

pub fn load_entry(entry: &DatasetEntry) -> Result<Dataset> {
    match (&entry.path, &entry.toy) {
        (Some(p), _) => load_dataset(p),
        (None, Some(t)) => make_toy(t),
        _ => Err(Error::Validation("dataset entry has no source".into())),
    }
}

/// Little-endian bytes of every matrix, each preceded by its shape.
pub fn matrices_checksum(ms: &[ArrayView2<f64>]) -> String {
    let mut h = Sha256::new();
    for m in ms {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Raw (unstandardized) partitions of a split and the test labels.
pub fn split_partitions(ds: &Dataset, split: &SplitBundle) -> (Partitions, Vec<u8>) {
    (
        Partitions {
            train: ds.rows(&split.train),
            val: ds.rows(&split.val),
            test: ds.rows(&split.test),
        },
        ds.labels(&split.test),
    )
}

/// Applies a variant to raw partitions. Synthetic variants swap the real test
/// anomalies for as many generated ones.
pub fn apply_variant(
    m: &ExperimentManifest,
    variant: Variant,
    parts: Partitions,
    labels: Vec<u8>,
    ranking: Option<&ImportanceRanking>,
    seed: u64,
) -> Result<(Partitions, Vec<u8>)> {
    match variant {
        Variant::Clean => Ok((parts, labels)),
        Variant::Synthetic(kind) => {
            let block = m.synthesis.as_ref().expect("variant comes from the block");
            let gmm = if kind.needs_gmm() {
                Some(fit_gmm(parts.train.view(), &block.k_range, derive_seed(seed, 11))?)
            } else {
                None
            };
            let n_anom = labels.iter().filter(|&&l| l == 1).count().max(1);
            let fake = synthesize_anomalies(
                kind,
                parts.train.view(),
                gmm.as_ref(),
                n_anom,
                &block.params,
                derive_seed(seed, 12),
            )?;
            let normals: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
            let kept = parts.test.select(Axis(0), &normals);
            let test = concatenate(Axis(0), &[kept.view(), fake.view()]).expect("same width");
            let mut y = vec![0u8; normals.len()];
            y.extend(std::iter::repeat(1).take(n_anom));
            Ok((Partitions { test, ..parts }, y))
        }
        Variant::Corrupted(kind, p) => Ok((corrupt(kind, &parts, p, ranking, derive_seed(seed, 13))?, labels)),
    }
}

pub fn standardize_partitions(parts: &Partitions) -> Result<Partitions> {
    let s = Standardizer::fit(parts.train.view())?;
    Ok(Partitions {
        train: s.transform(parts.train.view())?,
        val: s.transform(parts.val.view())?,
        test: s.transform(parts.test.view())?,
    })
}

#[derive(Serialize)]
struct EncoderKeyConfig<'a> {
    task: TaskKind,
    loss: LossKind,
    grid_task_config: &'a tadlab_core::pretext::TaskConfig,
    train: tadlab_core::nn::TrainConfig,
    search: tadlab_core::nn::SearchSpace,
}

/// Best-of-search encoder for one (task, loss) on the given partitions, and
/// its train/test embeddings. Both artifacts go through the cache.
#[allow(clippy::too_many_arguments)]
pub fn embed_partitions(
    cache: &Cache,
    log: &JsonLog,
    grid: &PretextGrid,
    task: TaskKind,
    loss: LossKind,
    parts: &Partitions,
    seed: u64,
    context: &str,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let fit_sum = matrices_checksum(&[parts.train.view(), parts.val.view()]);
    let cfg = EncoderKeyConfig {
        task,
        loss,
        grid_task_config: &grid.task_config,
        train: grid.base_config(),
        search: grid.search_space(),
    };
    let enc_key = cache_key(&fit_sum, &cfg, seed)?;
    let name = rep_name(task, loss);
    let encoder: TrainedEncoder = cache.get_or_build("encoders", &enc_key, checkpoint::decode, checkpoint::encode, || {
        log.event("train", json!({"cell": context, "representation": name, "key": enc_key}));
        let res = random_search(
            task,
            &grid.task_config,
            &grid.loss_spec(loss),
            parts.train.view(),
            parts.val.view(),
            &cfg.train,
            &cfg.search,
            seed,
        )?;
        log.event(
            "trained",
            json!({"cell": context, "representation": name, "best_val_loss": res.best.best_val_loss,
                   "best_epoch": res.best.best_epoch, "draws": res.trials.len()}),
        );
        Ok(res.best)
    })?;
    let all_sum = matrices_checksum(&[parts.train.view(), parts.test.view()]);
    let emb_key = cache_key(&all_sum, &enc_key, seed)?;
    let decode = |b: &[u8]| bincode::deserialize::<(Array2<f64>, Array2<f64>)>(b).map_err(|e| Error::Encoding(e.to_string()));
    let encode = |v: &(Array2<f64>, Array2<f64>)| bincode::serialize(v).map_err(|e| Error::Encoding(e.to_string()));
    cache.get_or_build("embeddings", &emb_key, decode, encode, || {
        log.event("embed", json!({"cell": context, "representation": name}));
        Ok((
            extract_embeddings(&encoder, parts.train.view())?,
            extract_embeddings(&encoder, parts.test.view())?,
        ))
    })
}

/// Keeps the `fraction` smallest-eigenvalue directions of the training Gram
/// matrix; 1.0 returns the inputs unchanged.
pub fn project(train: &Array2<f64>, test: &Array2<f64>, fraction: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if fraction >= 1.0 {
        return Ok((train.clone(), test.clone()));
    }
    let basis = principal_basis(train.view())?;
    Ok((
        residual_project(&basis, train.view(), fraction)?,
        residual_project(&basis, test.view(), fraction)?,
    ))
}

struct Unit<'a> {
    dataset: usize,
    name: &'a str,
    variant: Variant,
}

struct Loaded {
    ds: Dataset,
    split: SplitBundle,
    ranking: Option<ImportanceRanking>,
}

struct Ctx<'a> {
    m: &'a ExperimentManifest,
    seed: u64,
    detectors: Vec<DetectorConfig>,
    reps: Vec<String>,
    cache: &'a Cache,
    log: &'a JsonLog,
}

impl Ctx<'_> {
    fn cell(&self, u: &Unit, rep: &str, fraction: f64, det: &str, r: std::result::Result<f64, String>) -> Cell {
        let (auroc, error) = match r {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e)),
        };
        Cell {
            dataset: u.name.to_string(),
            variant: u.variant.label(),
            representation: rep.to_string(),
            fraction,
            detector: det.to_string(),
            auroc,
            error,
        }
    }

    /// Every cell of a representation, all failing with `err`.
    fn fail_rep(&self, u: &Unit, rep: &str, err: &str) -> Vec<Cell> {
        let mut out = Vec::new();
        for &f in &self.m.subspace_fractions {
            for d in &self.detectors {
                out.push(self.cell(u, rep, f, &d.label(), Err(err.to_string())));
            }
        }
        out
    }

    fn run_unit(&self, u: &Unit, loaded: &std::result::Result<Loaded, String>) -> Vec<Cell> {
        let context = format!("{}/{}", u.name, u.variant.label());
        let prepared = loaded.as_ref().map_err(Clone::clone).and_then(|l| {
            let (parts, labels) = split_partitions(&l.ds, &l.split);
            let (parts, labels) = apply_variant(self.m, u.variant, parts, labels, l.ranking.as_ref(), self.seed)
                .map_err(|e| e.to_string())?;
            let parts = if self.m.standardize {
                standardize_partitions(&parts).map_err(|e| e.to_string())?
            } else {
                parts
            };
            Ok((parts, labels))
        });
        let (parts, labels) = match prepared {
            Ok(p) => p,
            Err(e) => {
                self.log.event("failed", json!({"cell": context, "error": e}));
                return self.reps.iter().flat_map(|r| self.fail_rep(u, r, &e)).collect();
            }
        };
        let mut cells = Vec::new();
        let mut reps: Vec<(String, std::result::Result<(Array2<f64>, Array2<f64>), String>)> =
            vec![(RAW.to_string(), Ok((parts.train.clone(), parts.test.clone())))];
        if let Some(grid) = &self.m.pretext {
            for (i, (task, loss)) in grid.pairs().into_iter().enumerate() {
                let seed = derive_seed(self.seed, 100 + i as u64);
                let r = embed_partitions(self.cache, self.log, grid, task, loss, &parts, seed, &context);
                reps.push((rep_name(task, loss), r.map_err(|e| e.to_string())));
            }
        }
        for (rep, data) in reps {
            let (train, test) = match data {
                Ok(d) => d,
                Err(e) => {
                    self.log.event("failed", json!({"cell": context, "representation": rep, "error": e}));
                    cells.extend(self.fail_rep(u, &rep, &e));
                    continue;
                }
            };
            for &f in &self.m.subspace_fractions {
                let projected = project(&train, &test, f);
                for d in &self.detectors {
                    let r = projected
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|(tr, te)| {
                            let s = fit_score(d, tr.view(), te.view()).map_err(|e| e.to_string())?;
                            auroc(s.as_slice().expect("contiguous"), &labels).map_err(|e| e.to_string())
                        });
                    if let Err(e) = &r {
                        self.log.event(
                            "failed",
                            json!({"cell": context, "representation": rep, "fraction": f, "detector": d.label(), "error": e}),
                        );
                    }
                    cells.push(self.cell(u, &rep, f, &d.label(), r));
                }
            }
        }
        self.log.event("done", json!({"cell": context, "cells": cells.len()}));
        cells
    }
}

fn load_all(m: &ExperimentManifest, seed: u64) -> Vec<std::result::Result<Loaded, String>> {
    let needs_ranking = m
        .corruption
        .as_ref()
        .is_some_and(|c| c.kinds.iter().any(|k| k.needs_ranking()));
    m.datasets
        .par_iter()
        .map(|e| {
            let ds = load_entry(e).map_err(|e| e.to_string())?;
            let split = one_class_split(&ds, seed).map_err(|e| e.to_string())?;
            let ranking = if needs_ranking {
                let forest = &m.corruption.as_ref().expect("checked").forest;
                Some(forest_importance(ds.x.view(), &ds.y, forest, derive_seed(seed, 30)).map_err(|e| e.to_string())?)
            } else {
                None
            };
            Ok(Loaded { ds, split, ranking })
        })
        .collect()
}

/// Resolves the output directory: the `--out` override, the manifest's
/// `output_dir` (relative to the manifest), or `out/` next to the manifest.
pub fn output_dir(manifest_path: &Path, m: &ExperimentManifest, opts: &RunOptions) -> PathBuf {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    match (&opts.out, &m.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_relative() => base.join(o),
        (None, Some(o)) => o.clone(),
        (None, None) => base.join("out"),
    }
}

/// Validates the manifest, then runs every cell. Cell failures are recorded
/// in the report; only validation and output I/O errors are returned.
pub fn run_manifest(path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let mut m = ExperimentManifest::load(path)?;
    if let Some(s) = opts.seed {
        m.seed = s;
    }
    let seed = m.seed;
    let out = output_dir(path, &m, opts);
    std::fs::create_dir_all(&out)?;
    let log = JsonLog::create(&out.join("logs.jsonl"))?;
    let cache = Cache::new(cache_dir(&out), opts.resume);
    log.event(
        "start",
        json!({"manifest": path.display().to_string(), "seed": seed, "resume": opts.resume,
               "cache": cache.dir().display().to_string()}),
    );
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Validation(format!("worker pool: {e}")))?;

    let ctx = Ctx {
        m: &m,
        seed,
        detectors: m.detectors.expand(seed),
        reps: representations(&m),
        cache: &cache,
        log: &log,
    };
    let names: Vec<String> = m.datasets.iter().map(DatasetEntry::label).collect();
    let cells: Vec<Cell> = pool.install(|| {
        let loaded = load_all(&m, seed);
        for (n, l) in names.iter().zip(&loaded) {
            match l {
                Ok(l) => log.event(
                    "split",
                    json!({"dataset": n, "checksum": l.ds.provenance.checksum, "train": l.split.train.len(),
                           "val": l.split.val.len(), "test": l.split.test.len()}),
                ),
                Err(e) => log.event("failed", json!({"dataset": n, "error": e})),
            }
        }
        let units: Vec<Unit> = names
            .iter()
            .enumerate()
            .flat_map(|(i, n)| {
                variants(&m).into_iter().map(move |v| Unit {
                    dataset: i,
                    name: n.as_str(),
                    variant: v,
                })
            })
            .collect();
        units
            .par_iter()
            .map(|u| ctx.run_unit(u, &loaded[u.dataset]))
            .collect::<Vec<_>>()
            .concat()
    });

    write_outputs(&out, seed, &cells)?;
    let report = RunReport {
        out_dir: out,
        cells,
        built: cache.builds(),
        cache_hits: cache.hits(),
    };
    log.event(
        "finish",
        json!({"cells": report.cells.len(), "failed": report.failed().len(),
               "built": report.built, "cache_hits": report.cache_hits}),
    );
    Ok(report)
}

/// Score table with one row per (dataset, variant, representation, fraction)
/// and one column per detector, both in order of first appearance.
pub fn score_table(cells: &[Cell]) -> Result<ScoreTable> {
    let mut methods: Vec<String> = Vec::new();
    let mut rows: Vec<String> = Vec::new();
    for c in cells {
        if !methods.contains(&c.detector) {
            methods.push(c.detector.clone());
        }
        let r = c.row_name();
        if !rows.contains(&r) {
            rows.push(r);
        }
    }
    let mut values = vec![vec![None; methods.len()]; rows.len()];
    for c in cells {
        let i = rows.iter().position(|r| *r == c.row_name()).expect("collected above");
        let j = methods.iter().position(|m| *m == c.detector).expect("collected above");
        values[i][j] = c.auroc;
    }
    let mut table = ScoreTable::new(methods);
    for (r, v) in rows.into_iter().zip(values) {
        table.push_row(r, v)?;
    }
    Ok(table)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub const CELLS_HEADER: [&str; 8] = ["dataset", "variant", "representation", "fraction", "detector", "seed", "auroc", "status"];

pub fn write_cells_csv(path: &Path, seed: u64, cells: &[Cell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CELLS_HEADER)?;
    for c in cells {
        w.write_record([
            c.dataset.clone(),
            c.variant.clone(),
            c.representation.clone(),
            c.fraction.to_string(),
            c.detector.clone(),
            seed.to_string(),
            c.auroc.map(format_f64).unwrap_or_default(),
            c.error.clone().map_or_else(|| "ok".into(), |e| format!("failed: {e}")),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_cells_csv(path: &Path) -> Result<Vec<Cell>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CELLS_HEADER {
        return Err(Error::Schema(format!("{} is not a cells table", path.display())));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |column: &str| Error::Parse {
            row: i + 1,
            column: column.into(),
            message: "not a number".into(),
        };
        let auroc = match &rec[6] {
            "" => None,
            v => Some(v.parse().map_err(|_| bad("auroc"))?),
        };
        let status = &rec[7];
        out.push(Cell {
            dataset: rec[0].to_string(),
            variant: rec[1].to_string(),
            representation: rec[2].to_string(),
            fraction: rec[3].parse().map_err(|_| bad("fraction"))?,
            detector: rec[4].to_string(),
            auroc,
            error: (status != "ok").then(|| status.trim_start_matches("failed: ").to_string()),
        });
    }
    Ok(out)
}

/// Score table, aggregates, plots and, when the table supports it, the rank
/// comparison. Returns whether ranks were written.
pub fn write_report(out: &Path, cells: &[Cell]) -> Result<bool> {
    std::fs::create_dir_all(out)?;
    let table = score_table(cells)?;
    write_atomic(&out.join("scores.csv"), &csv_bytes(|b| write_score_table(&table, b))?)?;
    write_atomic(&out.join("aggregates.csv"), &csv_bytes(|b| write_aggregates(&table, b))?)?;

    let groups: Vec<(String, Vec<f64>)> = (0..table.methods.len())
        .map(|j| (table.methods[j].clone(), table.column(j).into_iter().flatten().collect()))
        .collect();
    write_atomic(&out.join("auroc_by_detector.svg"), box_plot_svg("AUROC by detector", &groups).as_bytes())?;

    let mut fr: Vec<f64> = Vec::new();
    for c in cells {
        if !fr.contains(&c.fraction) {
            fr.push(c.fraction);
        }
    }
    fr.sort_by(f64::total_cmp);
    if fr.len() > 1 {
        let series: Vec<(String, Vec<f64>)> = table
            .methods
            .iter()
            .map(|label| {
                let ys = fr
                    .iter()
                    .map(|&f| {
                        let v: Vec<f64> = cells
                            .iter()
                            .filter(|c| c.detector == *label && c.fraction == f)
                            .filter_map(|c| c.auroc)
                            .collect();
                        if v.is_empty() {
                            f64::NAN
                        } else {
                            mean(&v)
                        }
                    })
                    .collect();
                (label.clone(), ys)
            })
            .collect();
        write_atomic(
            &out.join("subspace.svg"),
            line_plot_svg("Mean AUROC by kept fraction", &fr, &series).as_bytes(),
        )?;
    }

    let ranks = rank_compare(&table, RANK_ALPHA).ok();
    if let Some(r) = &ranks {
        write_atomic(&out.join("ranks.json"), rank_json(r)?.as_bytes())?;
        write_atomic(&out.join("cd_diagram.svg"), cd_diagram_svg("Average rank", r).as_bytes())?;
    } else {
        let _ = std::fs::remove_file(out.join("ranks.json"));
        let _ = std::fs::remove_file(out.join("cd_diagram.svg"));
    }
    Ok(ranks.is_some())
}

fn write_outputs(out: &Path, seed: u64, cells: &[Cell]) -> Result<()> {
    write_cells_csv(&out.join("cells.csv"), seed, cells)?;
    let ranked = write_report(out, cells)?;
    let failed: Vec<_> = cells
        .iter()
        .filter(|c| c.error.is_some())
        .map(|c| json!({"row": c.row_name(), "detector": c.detector, "error": c.error}))
        .collect();
    let summary = json!({
        "seed": seed,
        "cells": cells.len(),
        "succeeded": cells.len() - failed.len(),
        "failed": failed,
        "ranked": ranked,
    });
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(())
}
