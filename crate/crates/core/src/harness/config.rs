use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::features::FbankConfig;
use crate::models::{Modality, Topology, TrainConfig, ENCODER_PREFIX};
use crate::pruning::{schedule, PruneConfig, PruneScope, Ranking, SequentialConfig};

/// Optional overrides applied on top of [`TrainConfig::for_modality`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Iterative pruning, one fine-tuning epoch per event.
    #[default]
    LthIf,
    /// Prune once, rewind survivors, retrain.
    OneShot,
    /// Encoder first, then the fusion back end with the encoder frozen.
    Sequential,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::LthIf => "lth-if",
            Regime::OneShot => "one-shot",
            Regime::Sequential => "sequential",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSettings {
    pub regime: Regime,
    /// T for `lth-if` and for the back-end phase of `sequential`.
    pub iterations: usize,
    pub rate: f64,
    pub initial_epochs: usize,
    /// Scope for `lth-if` and `one-shot`.
    pub scope: PruneScope,
    pub ranking: Ranking,
    /// T of the encoder phase of `sequential`.
    pub encoder_iterations: usize,
    /// Target of `one-shot`; defaults to the sparsity `lth-if` reaches.
    pub oneshot_sparsity: Option<f64>,
}

impl Default for PruneSettings {
    fn default() -> Self {
        let seq = SequentialConfig::default();
        let base = PruneConfig::default();
        PruneSettings {
            regime: Regime::LthIf,
            iterations: base.iterations,
            rate: base.rate,
            initial_epochs: base.initial_epochs,
            scope: base.scope,
            ranking: base.ranking,
            encoder_iterations: seq.encoder.iterations,
            oneshot_sparsity: None,
        }
    }
}

impl PruneSettings {
    pub fn lth(&self) -> PruneConfig {
        PruneConfig {
            iterations: self.iterations,
            rate: self.rate,
            initial_epochs: self.initial_epochs,
            scope: self.scope.clone(),
            ranking: self.ranking,
        }
    }

    pub fn sequential(&self, backend_prefix: &str) -> SequentialConfig {
        SequentialConfig {
            encoder: PruneConfig {
                iterations: self.encoder_iterations,
                scope: PruneScope::prefix(ENCODER_PREFIX),
                ..self.lth()
            },
            backend: PruneConfig {
                scope: PruneScope::prefix(backend_prefix),
                ..self.lth()
            },
        }
    }

    /// Sparsity reached by `iterations - 1` events on `total` weights.
    pub fn schedule_sparsity(&self, total: usize) -> f64 {
        let counts = schedule(total, self.rate, self.iterations.saturating_sub(1));
        *counts.last().unwrap_or(&0) as f64 / total.max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    /// Calibrate on dev positives to reach this 1 - FRR.
    Calibrate {
        target: f64,
    },
    Fixed {
        value: f64,
    },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Calibrate { target: 0.97 }
    }
}

/// One experiment: a model, its data and every training, pruning and
/// evaluation setting. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Artifact stem; defaults to the modality.
    #[serde(default)]
    pub name: Option<String>,
    pub modality: Modality,
    /// Seeds model initialisation, shuffling and, when generated, the corpus.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Directory written by `synth`. Relative paths resolve against the
    /// config file. Without it the corpus is generated in memory.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub fbank: Option<FbankConfig>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub prune: PruneSettings,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
}

fn default_seed() -> u64 {
    42
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::new(Modality::Audio)
    }
}

impl ExperimentConfig {
    pub fn new(modality: Modality) -> Self {
        ExperimentConfig {
            name: None,
            modality,
            seed: default_seed(),
            corpus_dir: None,
            corpus: CorpusConfig::default(),
            topology: Topology::default(),
            fbank: None,
            train: TrainSettings::default(),
            prune: PruneSettings::default(),
            threshold: ThresholdPolicy::default(),
        }
    }

    /// Parses and validates; `corpus_dir` is resolved against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        if let (Some(dir), Some(base)) = (cfg.corpus_dir.as_mut(), base) {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, path.parent())
    }

    /// Replaces the experiment seed and the corpus seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = seed;
        self
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.modality.as_str())
    }

    pub fn fbank_config(&self) -> FbankConfig {
        self.fbank.clone().unwrap_or_else(|| FbankConfig {
            n_mels: self.topology.n_mels,
            ..FbankConfig::default()
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::for_modality(self.modality);
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            epochs: t.epochs.unwrap_or(base.epochs),
            beta1: t.beta1.unwrap_or(base.beta1),
            beta2: t.beta2.unwrap_or(base.beta2),
            epsilon: t.epsilon.unwrap_or(base.epsilon),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.name();
        let name_ok = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !name_ok {
            return Err(Error::Config(format!(
                "name {name:?} must be non-empty ASCII letters, digits, '-' or '_'"
            )));
        }
        self.corpus.validate().map_err(as_config)?;
        self.topology.repeat_factor().map_err(as_config)?;
        let fbank = self.fbank_config();
        if fbank.n_mels != self.topology.n_mels {
            return Err(Error::Config(format!(
                "fbank.n_mels {} differs from topology.n_mels {}",
                fbank.n_mels, self.topology.n_mels
            )));
        }
        self.train_config().validate()?;
        self.prune.lth().validate()?;
        if self.prune.encoder_iterations < 2 {
            return Err(Error::Config(
                "prune.encoder_iterations must be at least 2".into(),
            ));
        }
        if let Some(s) = self.prune.oneshot_sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Config(format!(
                    "prune.oneshot_sparsity {s} outside [0, 1)"
                )));
            }
        }
        if self.prune.regime == Regime::Sequential && !self.modality.uses_video() {
            return Err(Error::Config(
                "sequential pruning needs a model with a lip encoder".into(),
            ));
        }
        match self.threshold {
            ThresholdPolicy::Calibrate { target } if !(0.0..=1.0).contains(&target) => Err(
                Error::Config(format!("calibration target {target} outside [0, 1]")),
            ),
            ThresholdPolicy::Fixed { value } if !(value > 0.0 && value < 1.0) => Err(
                Error::Config(format!("fixed threshold {value} outside (0, 1)")),
            ),
            _ => Ok(()),
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
