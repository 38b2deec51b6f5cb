//! Experiment manifests: a JSON description of every dataset, pretext task,
//! detector and ablation in a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tadlab_core::detectors::{DetectorConfig, Gamma, IForestConfig, KnnConfig, LofConfig, OcsvmConfig};
use tadlab_core::nn::{LossKind, LossSpec, SearchSpace, TrainConfig};
use tadlab_core::pretext::{TaskConfig, TaskKind};
use tadlab_core::synthesis::{AnomalyKind, CorruptionKind, ForestConfig, SynthParams, ToySpec, TOY_NAMES};
use tadlab_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub standardize: bool,
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub pretext: Option<PretextGrid>,
    pub detectors: DetectorGrid,
    /// Keep-fractions of the smallest-eigenvalue directions; 1.0 is the
    /// unprojected space.
    #[serde(default = "full_space")]
    pub subspace_fractions: Vec<f64>,
    #[serde(default)]
    pub synthesis: Option<SynthesisBlock>,
    #[serde(default)]
    pub corruption: Option<CorruptionBlock>,
}

fn yes() -> bool {
    true
}

fn full_space() -> Vec<f64> {
    vec![1.0]
}

/// Exactly one of `path` and `toy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub toy: Option<ToySpec>,
}

impl DatasetEntry {
    pub fn label(&self) -> String {
        match (&self.path, &self.toy) {
            (Some(p), _) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            (None, Some(t)) => format!("{}_s{}", t.name, t.seed),
            _ => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretextGrid {
    pub tasks: Vec<TaskKind>,
    /// Defaults to every loss compatible with each task.
    #[serde(default)]
    pub losses: Option<Vec<LossKind>>,
    #[serde(default = "default_draws")]
    pub search_draws: usize,
    #[serde(default)]
    pub task_config: TaskConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub search: Option<SearchSpace>,
}

fn default_draws() -> usize {
    8
}

impl PretextGrid {
    /// Every (task, loss) pair to train, in manifest order.
    pub fn pairs(&self) -> Vec<(TaskKind, LossKind)> {
        let mut out = Vec::new();
        for &t in &self.tasks {
            for &l in t.compatible_losses() {
                if self.losses.as_ref().map_or(true, |ls| ls.contains(&l)) {
                    out.push((t, l));
                }
            }
        }
        out
    }

    pub fn base_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_default()
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            draws: self.search_draws,
            ..self.search.clone().unwrap_or_default()
        }
    }

    pub fn loss_spec(&self, kind: LossKind) -> LossSpec {
        LossSpec::new(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighbourGrid {
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IForestGrid {
    #[serde(default = "default_trees")]
    pub n_trees: Vec<usize>,
    #[serde(default = "default_subsample")]
    pub subsample: Vec<usize>,
}

fn default_trees() -> Vec<usize> {
    vec![100]
}

fn default_subsample() -> Vec<usize> {
    vec![256]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcsvmGrid {
    #[serde(default = "default_nu")]
    pub nu: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: Vec<Gamma>,
}

fn default_nu() -> Vec<f64> {
    vec![0.5]
}

fn default_gamma() -> Vec<Gamma> {
    vec![Gamma::Scale]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionGrid {
    pub fraction: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorGrid {
    #[serde(default)]
    pub knn: Option<NeighbourGrid>,
    #[serde(default)]
    pub lof: Option<NeighbourGrid>,
    #[serde(default)]
    pub iforest: Option<IForestGrid>,
    #[serde(default)]
    pub ocsvm: Option<OcsvmGrid>,
    #[serde(default)]
    pub residual_norm: Option<FractionGrid>,
}

impl DetectorGrid {
    /// All configurations in a fixed order. Stochastic detectors get seeds
    /// derived from `seed`.
    pub fn expand(&self, seed: u64) -> Vec<DetectorConfig> {
        let mut out = Vec::new();
        if let Some(g) = &self.knn {
            out.extend(g.k.iter().map(|&k| DetectorConfig::Knn(KnnConfig { seed, ..KnnConfig::new(k) })));
        }
        if let Some(g) = &self.lof {
            out.extend(g.k.iter().map(|&k| DetectorConfig::Lof(LofConfig { seed, ..LofConfig::new(k) })));
        }
        if let Some(g) = &self.iforest {
            for &n_trees in &g.n_trees {
                for &subsample in &g.subsample {
                    out.push(DetectorConfig::Iforest(IForestConfig {
                        n_trees,
                        subsample,
                        seed,
                    }));
                }
            }
        }
        if let Some(g) = &self.ocsvm {
            for &nu in &g.nu {
                for &gamma in &g.gamma {
                    out.push(DetectorConfig::Ocsvm(OcsvmConfig {
                        nu,
                        gamma,
                        ..OcsvmConfig::default()
                    }));
                }
            }
        }
        if let Some(g) = &self.residual_norm {
            out.extend(g.fraction.iter().map(|&fraction| DetectorConfig::ResidualNorm { fraction }));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisBlock {
    pub kinds: Vec<AnomalyKind>,
    #[serde(default)]
    pub params: SynthParams,
    #[serde(default = "default_k_range")]
    pub k_range: Vec<usize>,
}

fn default_k_range() -> Vec<usize> {
    (1..=5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionBlock {
    pub kinds: Vec<CorruptionKind>,
    pub proportions: Vec<f64>,
    #[serde(default)]
    pub forest: ForestConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl ExperimentManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("manifest: {e}")))
    }

    /// Parses and validates; relative dataset paths are resolved against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut m.datasets {
            if let Some(p) = &d.path {
                if p.is_relative() {
                    d.path = Some(base.join(p));
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Every check that can fail without touching data beyond existence.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.datasets.is_empty() {
            return Err(invalid("no datasets"));
        }
        let mut labels = Vec::new();
        for (i, d) in self.datasets.iter().enumerate() {
            match (&d.path, &d.toy) {
                (Some(p), None) => {
                    if !p.is_file() {
                        return Err(invalid(format!("dataset {i}: {} does not exist", p.display())));
                    }
                }
                (None, Some(t)) => {
                    if !TOY_NAMES.contains(&t.name.as_str()) {
                        return Err(invalid(format!("dataset {i}: unknown toy `{}`", t.name)));
                    }
                    if t.n_normal < 50 {
                        return Err(invalid(format!("dataset {i}: toys need n_normal >= 50")));
                    }
                }
                _ => return Err(invalid(format!("dataset {i}: give exactly one of `path` and `toy`"))),
            }
            let l = d.label();
            if labels.contains(&l) {
                return Err(invalid(format!("dataset label `{l}` appears twice")));
            }
            labels.push(l);
        }
        let dets = self.detectors.expand(self.seed);
        if dets.is_empty() {
            return Err(invalid("detector grid is empty"));
        }
        for c in &dets {
            let ok = match c {
                DetectorConfig::Knn(k) => k.k >= 1,
                DetectorConfig::Lof(k) => k.k >= 1,
                DetectorConfig::Iforest(f) => f.n_trees >= 1 && f.subsample >= 1,
                DetectorConfig::Ocsvm(o) => o.nu > 0.0 && o.nu <= 1.0,
                DetectorConfig::ResidualNorm { fraction } => *fraction > 0.0 && *fraction <= 1.0,
            };
            if !ok {
                return Err(invalid(format!("invalid detector setting {}", c.label())));
            }
        }
        let labels: Vec<String> = dets.iter().map(DetectorConfig::label).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(invalid(format!("detector `{l}` listed twice")));
            }
        }
        if self.subspace_fractions.is_empty() {
            return Err(invalid("subspace_fractions is empty"));
        }
        if let Some(f) = self.subspace_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(invalid(format!("subspace fraction {f} outside (0, 1]")));
        }
        if let Some(p) = &self.pretext {
            if p.tasks.is_empty() {
                return Err(invalid("pretext grid lists no tasks"));
            }
            if p.search_draws == 0 {
                return Err(invalid("search_draws must be at least 1"));
            }
            if p.pairs().is_empty() {
                return Err(invalid("no listed loss is compatible with any listed task"));
            }
        }
        if let Some(s) = &self.synthesis {
            if s.kinds.is_empty() || s.k_range.is_empty() || s.k_range.contains(&0) {
                return Err(invalid("synthesis block needs kinds and a non-empty k_range of positive K"));
            }
        }
        if let Some(c) = &self.corruption {
            if c.kinds.is_empty() || c.proportions.is_empty() {
                return Err(invalid("corruption block needs kinds and proportions"));
            }
            if let Some(p) = c.proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                return Err(invalid(format!("corruption proportion {p} outside (0, 1]")));
            }
        }
        Ok(())
    }
}
