use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bpgnn::bp::{BpConfig, SplitFractions};
use bpgnn::gnn::Architecture;
use bpgnn::pgm::{BiasSchedule, PrecisionSpec, DEFAULT_EPSILON};
use bpgnn::search::SearchSpace;
use bpgnn::train::TrainConfig;
use bpgnn::translator::RegressorConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmSection {
    pub count: usize,
    /// Graph `g` gets `sizes[g % sizes.len()]` vertices.
    pub sizes: Vec<usize>,
    pub density: f64,
    pub rcond: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl PgmSection {
    pub fn spec(&self, graph: usize) -> PrecisionSpec {
        PrecisionSpec {
            epsilon: self.epsilon,
            ..PrecisionSpec::new(self.sizes[graph % self.sizes.len()], self.density, self.rcond)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracesSection {
    pub trials: usize,
    pub splits: SplitFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Point cap per cloud before PCA.
    pub cap: usize,
    /// Test trials rolled out per graph.
    pub rollout_trials: usize,
    /// Graph and vertex used for the canonical-function grids.
    pub grid_graph: usize,
    pub grid_vertex: usize,
    pub grid_size: (usize, usize),
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            cap: 200_000,
            rollout_trials: 5,
            grid_graph: 0,
            grid_vertex: 0,
            grid_size: (21, 21),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorSection {
    /// Graph counts for train, validation and test.
    pub split: (usize, usize, usize),
    /// Fraction of each training graph's vertices or edges used.
    pub fraction: f64,
    pub regressor: RegressorConfig,
    /// Adjacency threshold on recovered couplings; defaults to the generation ε.
    pub threshold: Option<f64>,
    pub allow_extrapolation: bool,
}

/// Everything one experiment directory is produced from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub pgm: PgmSection,
    pub schedule: BiasSchedule,
    pub bp: BpConfig,
    pub traces: TracesSection,
    pub architecture: Architecture,
    /// `train.seed` is replaced by the root seed.
    pub train: TrainConfig,
    pub search: SearchSpace,
    #[serde(default)]
    pub analysis: AnalysisSection,
    pub translator: TranslatorSection,
}

impl ExperimentConfig {
    /// The desk-scale experiment: six models with 8 or 10 vertices, 100
    /// trials of 60 steps each.
    pub fn desk(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            output_dir: output_dir.into(),
            seed: 0,
            pgm: PgmSection {
                count: 6,
                sizes: vec![8, 10],
                density: 0.6,
                rcond: 0.2,
                epsilon: DEFAULT_EPSILON,
            },
            schedule: BiasSchedule {
                duration: 60,
                ..BiasSchedule::default()
            },
            bp: BpConfig::default(),
            traces: TracesSection {
                trials: 100,
                splits: SplitFractions::default(),
            },
            architecture: Architecture::default(),
            train: TrainConfig {
                learning_rate: 3e-3,
                max_steps: 4000,
                ..TrainConfig::default()
            },
            search: SearchSpace::default(),
            analysis: AnalysisSection::default(),
            translator: TranslatorSection {
                split: (4, 1, 1),
                fraction: 0.8,
                regressor: RegressorConfig::default(),
                threshold: None,
                allow_extrapolation: false,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let config: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            anyhow::anyhow!("config {}: field `{field}`: {}", path.display(), e.inner())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, r: std::result::Result<(), String>| r.map_err(|e| anyhow::anyhow!("config field `{name}`: {e}"));
        field("pgm.count", if self.pgm.count == 0 { Err("must be at least 1".into()) } else { Ok(()) })?;
        field(
            "pgm.sizes",
            if self.pgm.sizes.is_empty() || self.pgm.sizes.contains(&0) {
                Err("must list positive vertex counts".into())
            } else {
                Ok(())
            },
        )?;
        field("schedule", self.schedule.validate().map_err(|e| e.to_string()))?;
        field("bp", self.bp.validate().map_err(|e| e.to_string()))?;
        field("traces.splits", self.traces.splits.validate().map_err(|e| e.to_string()))?;
        field("traces.trials", if self.traces.trials == 0 { Err("must be at least 1".into()) } else { Ok(()) })?;
        field("architecture", self.architecture.validate().map_err(|e| e.to_string()))?;
        field("train", self.train.validate().map_err(|e| e.to_string()))?;
        field("search", self.search.validate().map_err(|e| e.to_string()))?;
        let (a, b, c) = self.translator.split;
        if a + b + c != self.pgm.count {
            bail!("config field `translator.split`: {a}+{b}+{c} does not equal pgm.count = {}", self.pgm.count);
        }
        if !(self.translator.fraction > 0.0 && self.translator.fraction <= 1.0) {
            bail!("config field `translator.fraction`: must lie in (0, 1]");
        }
        if self.analysis.grid_graph >= self.pgm.count {
            bail!("config field `analysis.grid_graph`: no graph {}", self.analysis.grid_graph);
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn threshold(&self) -> f64 {
        self.translator.threshold.unwrap_or(self.pgm.epsilon)
    }

    /// Hash identifying what a stage's artifacts were produced from; each
    /// stage folds in its upstream stages.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        let mut feed = |v: serde_json::Value| h.update(serde_json::to_vec(&v).expect("serializable"));
        // Model draws are screened for BP stability over one trial.
        feed(serde_json::json!({ "seed": self.seed, "pgm": self.pgm, "schedule": self.schedule, "bp": self.bp }));
        if stage >= Stage::Traces {
            feed(serde_json::json!({ "traces": self.traces }));
        }
        if stage >= Stage::Ensemble {
            feed(serde_json::json!({ "architecture": self.architecture, "train": self.train }));
        }
        if stage >= Stage::Translator {
            feed(serde_json::json!({ "translator": self.translator }));
        }
        hex::encode(&h.finalize()[..12])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Pgm,
    Traces,
    Ensemble,
    Translator,
}
