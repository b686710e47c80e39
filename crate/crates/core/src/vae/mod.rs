//! Recurrent melody VAE: parameters, hand-written forward/reverse passes,
//! ELBO training, the reconstruction-accuracy metric and prior sampling.

mod checkpoint;
mod gradcheck;
mod loss;
mod network;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use loss::{elbo_loss, LossBreakdown};
pub use network::{
    argmax, decode_sample, decode_teacher_forced, encode, reparameterize, softmax, ARGMAX_TEMPERATURE, LOGVAR_MAX,
    LOGVAR_MIN,
};
pub(crate) use network::{decoder_pass, project_outputs, Tokens};
pub(crate) use train::count_correct;
pub use params::{expected_shapes, Dims, GruCell, Linear, ModelParams, Tensor, TrainMask, TENSOR_COUNT, TENSOR_NAMES};
pub use train::{
    accuracy_given_latents, posterior_means, reconstruction_accuracy, train, train_with, Distillation, EpochLog,
    TrainConfig, TrainLog, EVAL_CHUNK,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite parameter in {0}")]
    NonFiniteParameter(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
