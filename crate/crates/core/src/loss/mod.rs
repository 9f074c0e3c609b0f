//! Loss terms driving the morph optimisation: multi-layer perceptual loss,
//! cosine identity loss, identity-difference loss, MS-SSIM loss and their
//! weighted composite.

mod composite;
mod identity;
mod perceptual;
mod ssim;

pub use composite::{composite_loss, LossParts, LossWeights};
pub use identity::{
    cosine_similarity, id_diff_loss, identity_loss, identity_loss_grad_autodiff,
    identity_loss_grad_exact, identity_loss_grad_paper, Embedding,
};
pub use perceptual::{perceptual_loss, FeatureLayer, FeatureMaps, FeatureStack};
pub use ssim::{
    gaussian_window, ms_ssim, ms_ssim_loss, ms_ssim_value, ssim_components, ssim_global,
    MsSsimParams, SsimMaps, MS_SSIM_WEIGHTS,
};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("zero-norm embedding ({0})")]
    ZeroNorm(&'static str),
    #[error("embedding must be finite")]
    NonFiniteEmbedding,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("feature stacks disagree at layer ids {0:?}")]
    LayerMismatch(Vec<usize>),
    #[error("feature layer ids must be strictly increasing, got {0:?}")]
    UnorderedLayers(Vec<usize>),
    #[error("image {shape:?} too small: need side >= {required} for {scales} scale(s)")]
    ImageTooSmall {
        shape: Vec<usize>,
        required: usize,
        scales: usize,
    },
    #[error("invalid MS-SSIM parameters: {0}")]
    InvalidParams(String),
    #[error("loss weight {name} = {value} must be finite and non-negative")]
    InvalidWeight { name: &'static str, value: f64 },
}
