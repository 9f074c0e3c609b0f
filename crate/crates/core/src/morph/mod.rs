//! Latent-space morph generation: average two subjects' latent codes, then
//! refine the average with Adam against the composite loss, using pluggable
//! generator / embedder / perceptual models.

mod engine;
mod latent;
mod models;
mod optim;
mod toy;
mod weights;

pub use engine::{optimize_morph, optimize_morph_from_latents, MorphResult, TraceRow};
pub use latent::{average_latents, LatentCode};
pub use models::{Embedder, Generator, LatentPredictor, ModelBundle, PerceptualNet};
pub use optim::{lr_at, Adam, OptimizerConfig};
pub use engine::write_trace_csv;
pub use toy::{make_toy_models, toy_subject, ToyEmbedder, ToyModels, ToyGenerator, ToyPerceptual, ToyPredictor, ToySpec};
pub use weights::{load_model_weights, read_model_weights, save_model_weights, write_model_weights, WeightsError};

use thiserror::Error;

use crate::loss::LossError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum MorphError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("latent shape mismatch: {left:?} vs {right:?}")]
    LatentShape {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("latent code contains non-finite values")]
    NonFiniteLatent,
    #[error("model contract violated: {0}")]
    ModelContract(String),
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Vec<TraceRow>,
    },
    #[error("learning-rate query for iteration {iteration} outside 0..{iterations}")]
    IterationOutOfRange { iteration: usize, iterations: usize },
}
