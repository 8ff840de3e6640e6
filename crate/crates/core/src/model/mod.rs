//! The token classifier: a small transformer encoder whose input
//! embedding is the sum of five tables (token, position, team, chat
//! type, player), trained with cross-entropy on the current line's
//! tokens only, plus checkpointing, training, and per-line prediction.

mod checkpoint;
mod encoder;
mod params;
mod predict;
mod tensor;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use encoder::{batch_loss, embed_sequence, forward, loss_and_grad, Example};
pub use params::{
    map_tree, widen_tree, zeros_like, BlockTree, Gradients, NormTree, ParamSet, ParamTree,
    INIT_STD,
};
pub use predict::{line_toxic_score, token_toxic_score, LinePrediction, PredictError, Predictor};
pub use tensor::{Mat, Tensor2, TensorBase};
pub use trainer::{train, EpochMetrics, TrainConfig, TrainError, TrainOutcome};

use crate::chat::ToxicClass;
use serde::{Deserialize, Serialize};

/// Output head layout. The non-toxic class is always the last index so
/// the line toxic-score `1 − P(non-toxic)` reads the same slot in every
/// space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    /// All nine classes, ordered by severity.
    Full,
    /// toxic / non_toxic.
    Binary,
    /// explicitly_toxic / implicitly_toxic / other, as produced by the
    /// merged-sentence adapter.
    Dota,
}

impl LabelSpace {
    pub fn n_classes(self) -> usize {
        match self {
            LabelSpace::Full => ToxicClass::ALL.len(),
            LabelSpace::Binary => 2,
            LabelSpace::Dota => 3,
        }
    }

    pub fn non_toxic_index(self) -> usize {
        self.n_classes() - 1
    }

    /// Head index a gold class trains toward.
    pub fn project(self, class: ToxicClass) -> usize {
        match self {
            LabelSpace::Full => class.severity_rank(),
            LabelSpace::Binary => usize::from(!class.is_toxic()),
            LabelSpace::Dota => match class {
                ToxicClass::NonToxic => 2,
                ToxicClass::OtherOffensive => 1,
                _ => 0,
            },
        }
    }

    /// Representative chat class for a predicted head index, used when
    /// a prediction flows back into nine-class structures.
    pub fn representative(self, index: usize) -> ToxicClass {
        match self {
            LabelSpace::Full => ToxicClass::ALL[index],
            LabelSpace::Binary => {
                if index == 0 {
                    ToxicClass::OtherOffensive
                } else {
                    ToxicClass::NonToxic
                }
            }
            LabelSpace::Dota => match index {
                0 => ToxicClass::InsultsFlaming,
                1 => ToxicClass::OtherOffensive,
                _ => ToxicClass::NonToxic,
            },
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            LabelSpace::Full => ToxicClass::ALL.iter().map(|c| c.as_str()).collect(),
            LabelSpace::Binary => vec!["toxic", "non_toxic"],
            LabelSpace::Dota => vec!["explicitly_toxic", "implicitly_toxic", "other"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelSpace::Full => "full",
            LabelSpace::Binary => "binary",
            LabelSpace::Dota => "dota",
        }
    }
}

impl std::str::FromStr for LabelSpace {
    type Err = UnknownLabelSpace;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(LabelSpace::Full),
            "binary" => Ok(LabelSpace::Binary),
            "dota" => Ok(LabelSpace::Dota),
            other => Err(UnknownLabelSpace(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label space: {0:?} (expected full, binary, or dota)")]
pub struct UnknownLabelSpace(pub String);

/// Architecture hyperparameters. Defaults are desk-scale: small enough
/// to train on one CPU core in seconds while exercising every
/// mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub label_space: LabelSpace,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 256,
            dropout: 0.1,
            label_space: LabelSpace::Full,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn n_classes(&self) -> usize {
        self.label_space.n_classes()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{track} id {index} out of range for table with {rows} rows")]
    TrackOutOfRange { track: &'static str, index: usize, rows: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty supervision: no position in the batch is marked for loss")]
    EmptySupervision,
}
