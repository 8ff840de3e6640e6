//! Run configuration: a TOML file with `[model]`, `[train]`, `[context]`
//! and `[paths]` sections. Every key has a default except the dataset
//! paths, and unknown keys are rejected so typos fail loudly.

use crate::error::CliError;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use toxbuster_core::chat::TeamSize;
use toxbuster_core::context::{ContextSettings, MetadataMode, Scope};
use toxbuster_core::model::{LabelSpace, ModelConfig, TrainConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub context: ContextSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub label_space: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::default();
        ModelSection {
            d_model: base.d_model,
            n_layers: base.n_layers,
            n_heads: base.n_heads,
            d_ff: base.d_ff,
            dropout: base.dropout,
            label_space: base.label_space.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub split: [f64; 3],
    /// One full training run per seed; the seed drives the split, the
    /// shuffle order, dropout and the weight initialization.
    pub seeds: Vec<u64>,
    pub weight_decay: f64,
    pub max_vocab: usize,
    pub lowercase: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSection {
            learning_rate: base.learning_rate,
            warmup_ratio: base.warmup_ratio,
            max_epochs: base.max_epochs,
            patience: base.patience,
            batch_size: base.batch_size,
            split: base.split,
            seeds: vec![base.seed],
            weight_decay: base.weight_decay,
            max_vocab: base.max_vocab,
            lowercase: base.lowercase,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextSection {
    pub scope: String,
    pub metadata_mode: String,
    pub max_tokens: usize,
    pub team_slots: usize,
    pub player_slots: usize,
    /// Shape of the sessions in the corpus file; `team_size = 0` means
    /// unbounded (thread-style documents with a single team).
    pub num_teams: usize,
    pub team_size: usize,
}

impl Default for ContextSection {
    fn default() -> Self {
        let base = ContextSettings::default();
        ContextSection {
            scope: base.scope.as_str().to_string(),
            metadata_mode: base.metadata_mode.as_str().to_string(),
            max_tokens: base.max_tokens,
            team_slots: base.team_slots,
            player_slots: base.player_slots,
            num_teams: 2,
            team_size: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Training corpus (JSONL chat lines). No default: every run must
    /// say what data it trains on.
    pub corpus: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            corpus: None,
            checkpoint: PathBuf::from("model.ckpt"),
            metrics: PathBuf::from("metrics.json"),
        }
    }
}

impl RunConfig {
    /// Reads and parses a config file. Parse failures carry the TOML
    /// line/column diagnostics.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Model settings with the seed left at zero; each training run
    /// stamps its own seed in.
    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let label_space: LabelSpace = self
            .model
            .label_space
            .parse()
            .map_err(|e| CliError::Config(format!("config key model.label_space: {e}")))?;
        Ok(ModelConfig {
            d_model: self.model.d_model,
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            d_ff: self.model.d_ff,
            dropout: self.model.dropout,
            label_space,
            seed: 0,
        })
    }

    pub fn context_settings(&self) -> Result<ContextSettings, CliError> {
        let scope: Scope = self
            .context
            .scope
            .parse()
            .map_err(|e| CliError::Config(format!("config key context.scope: {e}")))?;
        let metadata_mode: MetadataMode = self
            .context
            .metadata_mode
            .parse()
            .map_err(|e| CliError::Config(format!("config key context.metadata_mode: {e}")))?;
        Ok(ContextSettings {
            scope,
            metadata_mode,
            max_tokens: self.context.max_tokens,
            team_slots: self.context.team_slots,
            player_slots: self.context.player_slots,
        })
    }

    /// Trainer settings with the seed left at zero; each run stamps its
    /// own seed in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            warmup_ratio: self.train.warmup_ratio,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            batch_size: self.train.batch_size,
            split: self.train.split,
            seed: 0,
            weight_decay: self.train.weight_decay,
            max_vocab: self.train.max_vocab,
            lowercase: self.train.lowercase,
            init_checkpoint: None,
        }
    }

    pub fn team_size(&self) -> TeamSize {
        team_size_from_count(self.context.team_size)
    }

    pub fn corpus_path(&self) -> Result<&Path, CliError> {
        self.paths
            .corpus
            .as_deref()
            .ok_or_else(|| CliError::Config("config key paths.corpus is required".into()))
    }
}

/// Shared flag convention: `0` players per team means unbounded.
pub fn team_size_from_count(count: usize) -> TeamSize {
    if count == 0 {
        TeamSize::Unbounded
    } else {
        TeamSize::Bounded(count)
    }
}
