//! Tiny encoders, the three training objectives, and the training loop.

mod encoders;
mod loss;
mod params;
mod train;
mod vocab;

pub use encoders::{ClassifierModel, ClipModel, ImageEncoder, ModelDims, TextEncoder};
pub use loss::{clip_loss, flat_ce_loss, hier_ce_loss};
pub use params::{ParamId, ParamSet};
pub use train::{train, LogEntry, TrainConfig, TrainOutcome};
pub use vocab::Vocab;

use thiserror::Error;

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Clip,
    FlatCe,
    HierCe,
}

impl Objective {
    pub fn id(self) -> &'static str {
        match self {
            Objective::Clip => "clip",
            Objective::FlatCe => "ce",
            Objective::HierCe => "hce",
        }
    }

    pub fn from_id(id: &str) -> Option<Objective> {
        match id {
            "clip" => Some(Objective::Clip),
            "ce" => Some(Objective::FlatCe),
            "hce" => Some(Objective::HierCe),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    TextType(#[from] crate::texttypes::TextTypeError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: u32, value: f32 },
    #[error("hierarchical loss expects {expected} rank blocks, found {found}")]
    RankCount { expected: usize, found: usize },
    #[error("label {label} out of range for width {width}")]
    LabelRange { label: usize, width: usize },
    #[error("checkpoint tensor {name} has shape {found:?}, expected {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("taxon {0} is absent from the label maps")]
    UnknownTaxonLabel(String),
    #[error("{0}")]
    Invalid(String),
}
