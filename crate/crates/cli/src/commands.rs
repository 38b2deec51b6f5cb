//! Command-line interface. Each subcommand wraps one library operation with
//! file I/O so stages compose through on-disk artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tadlab_core::data::{format_f64, load_dataset, one_class_split, write_dataset_csv};
use tadlab_core::detectors::{
    fit_score, DetectorConfig, Gamma, IForestConfig, KnnConfig, LofConfig, OcsvmConfig,
};
use tadlab_core::eval::auroc;
use tadlab_core::nn::{checkpoint, extract_embeddings, random_search, LossKind, LossSpec, SearchSpace, TrainConfig};
use tadlab_core::pretext::{TaskConfig, TaskKind};
use tadlab_core::synthesis::{
    corrupt, fit_gmm, forest_importance, make_toy, synthesize_anomalies, AnomalyKind, CorruptionKind,
    ForestConfig, GenerationRecord, Partitions, SynthParams, ToySpec,
};
use tadlab_core::{Error, Result};

use crate::io::{column_names, read_labels, read_table, write_atomic, write_table};
use crate::pipeline::{read_cells_csv, run_manifest, write_report, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "tadlab", version, about = "One-class tabular anomaly detection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every cell of an experiment manifest.
    Run(RunArgs),
    /// Validate a labelled CSV and rewrite it in canonical form.
    Ingest(IngestArgs),
    /// One-class train/validation/test split.
    Split(SplitArgs),
    /// Generate a 2-D toy dataset.
    Toy(ToyArgs),
    /// Generate synthetic anomalies from training rows.
    Synth(SynthArgs),
    /// Corrupt the features of a split.
    Corrupt(CorruptArgs),
    /// Train a pretext encoder by random search.
    Train(TrainArgs),
    /// Extract embeddings with a trained encoder.
    Embed(EmbedArgs),
    /// Fit a detector and score test rows.
    Detect(DetectArgs),
    /// AUROC of a score file against labels.
    Eval(EvalArgs),
    /// Rebuild report tables and plots from a cells table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Reuse cached encoders and embeddings.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split indices as JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write train.csv, val.csv and test.csv here.
    #[arg(long)]
    pub partitions: Option<PathBuf>,
    /// Standardize the written partitions with training statistics.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n_normal: usize,
    #[arg(long)]
    pub n_anomaly: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnomalyArg {
    Local,
    Cluster,
    Global,
    Dependency,
}

impl From<AnomalyArg> for AnomalyKind {
    fn from(a: AnomalyArg) -> Self {
        match a {
            AnomalyArg::Local => AnomalyKind::Local,
            AnomalyArg::Cluster => AnomalyKind::Cluster,
            AnomalyArg::Global => AnomalyKind::Global,
            AnomalyArg::Dependency => AnomalyKind::Dependency,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: AnomalyArg,
    /// Normal training rows; a label column, if present, is ignored.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// Mixture sizes tried for local and cluster anomalies.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub k_range: Vec<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorruptionArg {
    AddUninformative,
    MissingValues,
    RemoveImportant,
    SelectImportant,
}

impl From<CorruptionArg> for CorruptionKind {
    fn from(a: CorruptionArg) -> Self {
        match a {
            CorruptionArg::AddUninformative => CorruptionKind::AddUninformative,
            CorruptionArg::MissingValues => CorruptionKind::MissingValues,
            CorruptionArg::RemoveImportant => CorruptionKind::RemoveImportant,
            CorruptionArg::SelectImportant => CorruptionKind::SelectImportant,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long, value_enum)]
    pub kind: CorruptionArg,
    #[arg(long)]
    pub proportion: f64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Labelled table the feature ranking is fitted on; needed by the
    /// importance-based kinds.
    #[arg(long)]
    pub ranking_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives train.csv, val.csv and test.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub loss: String,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub draws: usize,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Encoder checkpoint; the loss curve goes next to it as `.curve.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DetectorArg {
    Knn,
    Lof,
    Iforest,
    Ocsvm,
    ResidualNorm,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_enum)]
    pub kind: DetectorArg,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    /// RBF width; `scale` when absent.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 256)]
    pub subsample: usize,
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// `row_id,score` CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl DetectArgs {
    pub fn config(&self) -> DetectorConfig {
        match self.kind {
            DetectorArg::Knn => DetectorConfig::Knn(KnnConfig {
                seed: self.seed,
                ..KnnConfig::new(self.k)
            }),
            DetectorArg::Lof => DetectorConfig::Lof(LofConfig {
                seed: self.seed,
                ..LofConfig::new(self.k)
            }),
            DetectorArg::Iforest => DetectorConfig::Iforest(IForestConfig {
                n_trees: self.trees,
                subsample: self.subsample,
                seed: self.seed,
            }),
            DetectorArg::Ocsvm => DetectorConfig::Ocsvm(OcsvmConfig {
                nu: self.nu,
                gamma: self.gamma.map_or(Gamma::Scale, Gamma::Value),
                ..OcsvmConfig::default()
            }),
            DetectorArg::ResidualNorm => DetectorConfig::ResidualNorm {
                fraction: self.fraction,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV with a `label` column, joined on `row_id` when it has one.
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub cells: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli, stdout: &mut impl Write) -> Result<i32> {
    match cli.command {
        Command::Run(a) => run(a, stdout),
        Command::Ingest(a) => ingest(a, stdout),
        Command::Split(a) => split(a, stdout),
        Command::Toy(a) => toy(a),
        Command::Synth(a) => synth(a),
        Command::Corrupt(a) => corrupt_cmd(a),
        Command::Train(a) => train(a, stdout),
        Command::Embed(a) => embed(a),
        Command::Detect(a) => detect(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::Report(a) => report(a),
    }
    .map(|ok| if ok { 0 } else { 1 })
}

fn run(a: RunArgs, stdout: &mut impl Write) -> Result<bool> {
    let opts = RunOptions {
        resume: a.resume,
        workers: a.workers,
        out: a.out,
        seed: a.seed,
    };
    let report = run_manifest(&a.manifest, &opts)?;
    let failed = report.failed();
    writeln!(
        stdout,
        "{} cells, {} failed, {} artifacts built, {} cache hits; results in {}",
        report.cells.len(),
        failed.len(),
        report.built,
        report.cache_hits,
        report.out_dir.display()
    )?;
    for c in &failed {
        writeln!(
            stdout,
            "FAILED {} {}: {}",
            c.row_name(),
            c.detector,
            c.error.as_deref().unwrap_or("")
        )?;
    }
    Ok(failed.is_empty())
}

fn ingest(a: IngestArgs, stdout: &mut impl Write) -> Result<bool> {
    let ds = load_dataset(&a.input)?;
    write_dataset_csv(&a.out, &ds)?;
    let summary = json!({
        "name": ds.name, "rows": ds.n(), "columns": ds.d(),
        "anomalies": ds.n_anomalies(), "checksum": ds.provenance.checksum,
    });
    writeln!(stdout, "{summary}")?;
    Ok(true)
}

fn split(a: SplitArgs, stdout: &mut impl Write) -> Result<bool> {
    let ds = load_dataset(&a.data)?;
    let s = one_class_split(&ds, a.seed)?;
    write_atomic(&a.out, s.to_json()?.as_bytes())?;
    if let Some(dir) = &a.partitions {
        std::fs::create_dir_all(dir)?;
        let mut parts = Partitions {
            train: ds.rows(&s.train),
            val: ds.rows(&s.val),
            test: ds.rows(&s.test),
        };
        if a.standardize {
            parts = crate::pipeline::standardize_partitions(&parts)?;
        }
        let names = &ds.feature_names;
        write_table(&dir.join("train.csv"), names, &parts.train, None)?;
        write_table(&dir.join("val.csv"), names, &parts.val, None)?;
        write_table(&dir.join("test.csv"), names, &parts.test, Some(&ds.labels(&s.test)))?;
    }
    writeln!(
        stdout,
        "{}",
        json!({"train": s.train.len(), "val": s.val.len(), "test": s.test.len()})
    )?;
    Ok(true)
}

fn toy(a: ToyArgs) -> Result<bool> {
    let spec = ToySpec {
        n_anomaly: a.n_anomaly,
        noise: a.noise,
        ..ToySpec::new(&a.name, a.n_normal, a.seed)
    };
    let ds = make_toy(&spec)?;
    write_dataset_csv(&a.out, &ds)?;
    Ok(true)
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".gen.json");
    PathBuf::from(s)
}

fn synth(a: SynthArgs) -> Result<bool> {
    let t = read_table(&a.train)?;
    let kind: AnomalyKind = a.kind.into();
    let params = SynthParams {
        alpha: a.alpha,
        beta: a.beta,
        delta: a.delta,
    };
    let gmm = if kind.needs_gmm() {
        Some(fit_gmm(t.x.view(), &a.k_range, a.seed)?)
    } else {
        None
    };
    let fake = synthesize_anomalies(kind, t.x.view(), gmm.as_ref(), a.n, &params, a.seed)?;
    write_table(&a.out, &t.header, &fake, Some(&vec![1; a.n]))?;
    let source = tadlab_core::data::sha256_hex(&std::fs::read(&a.train)?);
    let rec = GenerationRecord::new(
        format!("{kind:?}").to_lowercase(),
        &json!({"params": params, "k_range": a.k_range, "n": a.n, "mixture_k": gmm.as_ref().map(|g| g.k())}),
        a.seed,
        source,
    )?;
    write_atomic(&sidecar(&a.out), rec.to_json()?.as_bytes())?;
    Ok(true)
}

fn corrupt_cmd(a: CorruptArgs) -> Result<bool> {
    let kind: CorruptionKind = a.kind.into();
    let (tr, va, te) = (read_table(&a.train)?, read_table(&a.val)?, read_table(&a.test)?);
    let ranking = match &a.ranking_data {
        Some(p) => {
            let ds = load_dataset(p)?;
            Some(forest_importance(ds.x.view(), &ds.y, &ForestConfig::default(), a.seed)?)
        }
        None if kind.needs_ranking() => {
            return Err(Error::Validation(format!("{kind:?} needs --ranking-data")));
        }
        None => None,
    };
    let parts = Partitions {
        train: tr.x,
        val: va.x,
        test: te.x,
    };
    let out = corrupt(kind, &parts, a.proportion, ranking.as_ref(), a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let names = column_names("f", out.d());
    write_table(&a.out_dir.join("train.csv"), &names, &out.train, tr.labels.as_deref())?;
    write_table(&a.out_dir.join("val.csv"), &names, &out.val, va.labels.as_deref())?;
    write_table(&a.out_dir.join("test.csv"), &names, &out.test, te.labels.as_deref())?;
    Ok(true)
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Validation(format!("unknown {what} `{s}`")))
}

fn train(a: TrainArgs, stdout: &mut impl Write) -> Result<bool> {
    let task: TaskKind = parse_enum("task", &a.task)?;
    let loss: LossKind = parse_enum("loss", &a.loss)?;
    let (tr, va) = (read_table(&a.train)?, read_table(&a.val)?);
    let mut base = TrainConfig::default();
    if let Some(e) = a.max_epochs {
        base.max_epochs = e;
    }
    if let Some(p) = a.patience {
        base.patience = p;
    }
    let space = SearchSpace {
        draws: a.draws,
        ..SearchSpace::default()
    };
    let res = random_search(
        task,
        &TaskConfig::default(),
        &LossSpec::new(loss),
        tr.x.view(),
        va.x.view(),
        &base,
        &space,
        a.seed,
    )?;
    write_atomic(&a.out, &checkpoint::encode(&res.best)?)?;
    let mut curve = a.out.as_os_str().to_owned();
    curve.push(".curve.csv");
    write_atomic(Path::new(&curve), res.best.curve_csv().as_bytes())?;
    writeln!(
        stdout,
        "{}",
        json!({"best_val_loss": res.best.best_val_loss, "best_epoch": res.best.best_epoch, "draws": res.trials.len()})
    )?;
    Ok(true)
}

fn embed(a: EmbedArgs) -> Result<bool> {
    let enc = checkpoint::decode(&std::fs::read(&a.encoder)?)?;
    let t = read_table(&a.input)?;
    let z = extract_embeddings(&enc, t.x.view())?;
    write_table(&a.out, &column_names("z", z.ncols()), &z, t.labels.as_deref())?;
    Ok(true)
}

fn detect(a: DetectArgs, stdout: &mut impl Write) -> Result<bool> {
    let (tr, te) = (read_table(&a.train)?, read_table(&a.test)?);
    if tr.x.ncols() != te.x.ncols() {
        return Err(Error::Schema(format!(
            "train has {} feature columns, test has {}",
            tr.x.ncols(),
            te.x.ncols()
        )));
    }
    let scores = fit_score(&a.config(), tr.x.view(), te.x.view())?;
    let ids: Vec<usize> = (0..scores.len()).collect();
    match &a.out {
        Some(p) => tadlab_core::detectors::write_scores_csv(p, &ids, scores.as_slice().expect("contiguous"))?,
        None => {
            writeln!(stdout, "row_id,score")?;
            for (i, s) in scores.iter().enumerate() {
                writeln!(stdout, "{i},{}", format_f64(*s))?;
            }
        }
    }
    Ok(true)
}

/// Scores aligned to labels: by `row_id` when the label file has one,
/// positionally otherwise.
pub fn aligned_auroc(scores_path: &Path, labels_path: &Path) -> Result<f64> {
    let (ids, scores) = tadlab_core::detectors::read_scores_csv(scores_path)?;
    let (label_ids, labels) = read_labels(labels_path)?;
    let labels = match label_ids {
        Some(lids) => {
            let mut by_id = std::collections::HashMap::new();
            for (id, l) in lids.into_iter().zip(labels) {
                by_id.insert(id, l);
            }
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::Schema(format!("no label for row_id {id}")))
                })
                .collect::<Result<Vec<u8>>>()?
        }
        None => labels,
    };
    auroc(&scores, &labels)
}

fn eval(a: EvalArgs, stdout: &mut impl Write) -> Result<bool> {
    writeln!(stdout, "{}", format_f64(aligned_auroc(&a.scores, &a.labels)?))?;
    Ok(true)
}

fn report(a: ReportArgs) -> Result<bool> {
    let cells = read_cells_csv(&a.cells)?;
    write_report(&a.out, &cells)?;
    Ok(true)
}
