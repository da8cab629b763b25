use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nt_core::objectives::{Mode, ObjectiveConfig};
use nt_core::synthgen::{MulticlassConfig, MultilabelConfig, SequenceConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    MulticlassToy,
    MultilabelToy,
    SequenceToy,
    /// Precomputed features read from `dataset_path`.
    Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden widths of the task MLP.
    pub hidden: Vec<usize>,
    pub projection_hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Decoder token-embedding width.
    pub token_embed: usize,
    /// Decoder recurrent state width.
    pub state: usize,
    /// Decoder attention width.
    pub attention: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64],
            projection_hidden: vec![512, 512],
            embedding_dim: 32,
            token_embed: 16,
            state: 32,
            attention: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub task_lr: f64,
    /// Defaults to a tenth of `task_lr`.
    pub projection_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            task_lr: 1e-3,
            projection_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeighborhoodConfig {
    pub n: usize,
    pub refresh_period: u64,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            n: 5,
            refresh_period: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Cut-offs for precision@k.
    pub k_values: Vec<usize>,
    /// Ground-truth sequences per input for recall_m@k.
    pub m: usize,
    pub recall_k: usize,
    /// Other inputs whose references join each retrieval pool.
    pub pool_others: usize,
    pub beam_size: usize,
    pub max_len: usize,
    pub ngram_n: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k_values: vec![1, 5, 10],
            m: 5,
            recall_k: 100,
            pool_others: 199,
            beam_size: 20,
            max_len: 8,
            ngram_n: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    /// Generator parameters for the toy task; defaults filled on load.
    #[serde(default)]
    pub generator: serde_json::Value,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub neighborhood: NeighborhoodConfig,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub eval: EvalSettings,
}

fn default_batch() -> usize {
    64
}
fn default_max_steps() -> u64 {
    20_000
}
fn default_eval_every() -> u64 {
    200
}
fn default_patience() -> usize {
    10
}

/// The typed generator configuration of a toy task.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorConfig {
    Multiclass(MulticlassConfig),
    Multilabel(MultilabelConfig),
    Sequence(SequenceConfig),
}

fn parse_section<T: serde::de::DeserializeOwned + Default>(v: &serde_json::Value) -> Result<T> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).context("in `generator`")
}

impl ExperimentConfig {
    /// Defaults-only configuration for a task.
    pub fn new(task: Task, seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "task": task, "seed": seed }))
            .expect("minimal config parses")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).context("invalid config")?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Fills generator defaults, the projection learning rate, and checks
    /// ranges.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(g) = self.generator_config()? {
            self.generator = match g {
                GeneratorConfig::Multiclass(c) => serde_json::to_value(c)?,
                GeneratorConfig::Multilabel(c) => serde_json::to_value(c)?,
                GeneratorConfig::Sequence(c) => serde_json::to_value(c)?,
            };
        }
        if self.optimizer.projection_lr.is_none() {
            self.optimizer.projection_lr = Some(self.optimizer.task_lr / 10.0);
        }
        self.validate()
    }

    pub fn generator_config(&self) -> Result<Option<GeneratorConfig>> {
        Ok(match self.task {
            Task::MulticlassToy => Some(GeneratorConfig::Multiclass(parse_section(&self.generator)?)),
            Task::MultilabelToy => Some(GeneratorConfig::Multilabel(parse_section(&self.generator)?)),
            Task::SequenceToy => Some(GeneratorConfig::Sequence(parse_section(&self.generator)?)),
            Task::Dataset => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.objective
            .validate()
            .map_err(|e| anyhow::anyhow!("objective: {e}"))?;
        if self.task == Task::Dataset && self.dataset_path.is_none() {
            bail!("dataset_path is required for task `dataset`");
        }
        let positive_lr = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                bail!("optimizer.{name} must be positive, got {v}");
            }
            Ok(())
        };
        positive_lr("task_lr", self.optimizer.task_lr)?;
        if let Some(p) = self.optimizer.projection_lr {
            positive_lr("projection_lr", p)?;
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            bail!("optimizer.beta1/beta2 must lie in [0, 1) and eps must be positive");
        }
        let checks: [(&str, bool); 9] = [
            ("batch_size", self.batch_size >= 1),
            ("neighborhood.refresh_period", self.neighborhood.refresh_period >= 1),
            ("max_steps", self.max_steps >= 1),
            ("eval_every", self.eval_every >= 1),
            ("patience", self.patience >= 1),
            ("model.embedding_dim", self.model.embedding_dim >= 1),
            ("eval.beam_size", self.eval.beam_size >= 1),
            ("eval.max_len", self.eval.max_len >= 1),
            ("eval.ngram_n", self.eval.ngram_n >= 1),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            bail!("{name} is out of range");
        }
        if self.objective.mode.uses_neighbors() && self.neighborhood.n == 0 && self.objective.lambda > 0.0 {
            log::warn!("neighborhood.n = 0: mode {} reduces to plain MLE", self.objective.mode.name());
        }
        Ok(())
    }

    pub fn projection_lr(&self) -> f64 {
        self.optimizer
            .projection_lr
            .unwrap_or(self.optimizer.task_lr / 10.0)
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.objective.mode = mode;
        self
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    ExperimentConfig::from_json_str(&text).with_context(|| format!("config {}", path.display()))
}
