use std::fmt;
use std::sync::Arc;

use crate::loss::FeatureStack;
use crate::tensor::{Graph, Tensor, Var};

use super::{LatentCode, MorphError};

/// Differentiable latent → image synthesis.
pub trait Generator: Send + Sync {
    /// `(layers, dims)` of the accepted latent code.
    fn latent_shape(&self) -> (usize, usize);
    /// `[channels, height, width]` of the produced image.
    fn image_shape(&self) -> [usize; 3];
    fn generate<'g>(&self, graph: &'g Graph, latent: Var<'g>) -> Result<Var<'g>, MorphError>;
}

/// Differentiable face-recognition embedding.
pub trait Embedder: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn embed<'g>(&self, graph: &'g Graph, image: Var<'g>) -> Result<Var<'g>, MorphError>;
}

/// Differentiable multi-layer feature extractor.
pub trait PerceptualNet: Send + Sync {
    fn features<'g>(&self, graph: &'g Graph, image: Var<'g>)
        -> Result<FeatureStack<'g>, MorphError>;
}

/// Image → latent code estimate used to initialise a morph.
pub trait LatentPredictor: Send + Sync {
    fn predict(&self, image: &Tensor) -> Result<LatentCode, MorphError>;
}

/// The models one morph optimisation runs against. Immutable once built;
/// clones share the underlying weights.
#[derive(Clone)]
pub struct ModelBundle {
    pub generator: Arc<dyn Generator>,
    pub embedder: Arc<dyn Embedder>,
    pub perceptual: Arc<dyn PerceptualNet>,
    pub predictor: Option<Arc<dyn LatentPredictor>>,
}

impl fmt::Debug for ModelBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelBundle")
            .field("latent_shape", &self.latent_shape())
            .field("image_shape", &self.image_shape())
            .field("embed_dim", &self.embedder.embed_dim())
            .field("predictor", &self.predictor.is_some())
            .finish()
    }
}

impl ModelBundle {
    pub fn latent_shape(&self) -> (usize, usize) {
        self.generator.latent_shape()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.generator.image_shape()
    }

    pub fn check_image(&self, image: &Tensor) -> Result<(), MorphError> {
        if image.shape() != self.image_shape() {
            return Err(MorphError::ModelContract(format!(
                "image shape {:?} does not match model image shape {:?}",
                image.shape(),
                self.image_shape()
            )));
        }
        Ok(())
    }

    pub fn check_latent(&self, latent: &LatentCode) -> Result<(), MorphError> {
        if latent.shape() != self.latent_shape() {
            return Err(MorphError::LatentShape {
                left: latent.shape(),
                right: self.latent_shape(),
            });
        }
        Ok(())
    }

    /// Generates an image from a latent code outside any optimisation.
    pub fn render(&self, latent: &LatentCode) -> Result<Tensor, MorphError> {
        self.check_latent(latent)?;
        let g = Graph::new();
        let img = self.generator.generate(&g, g.constant(latent.tensor().clone()))?;
        let shape = img.shape();
        if shape != self.image_shape() {
            return Err(MorphError::ModelContract(format!(
                "generator produced {shape:?}, declared {:?}",
                self.image_shape()
            )));
        }
        Ok((*img.value()).clone())
    }

    /// Embedding of an image outside any optimisation.
    pub fn embed(&self, image: &Tensor) -> Result<Vec<f64>, MorphError> {
        self.check_image(image)?;
        let g = Graph::new();
        let v = self.embedder.embed(&g, g.constant(image.clone()))?;
        if v.numel() != self.embedder.embed_dim() {
            return Err(MorphError::ModelContract(format!(
                "embedder produced {} values, declared {}",
                v.numel(),
                self.embedder.embed_dim()
            )));
        }
        Ok(v.value().data().to_vec())
    }

    pub fn predict_latent(&self, image: &Tensor) -> Result<LatentCode, MorphError> {
        self.check_image(image)?;
        let predictor = self
            .predictor
            .as_ref()
            .ok_or_else(|| MorphError::ModelContract("bundle has no latent predictor".into()))?;
        let code = predictor.predict(image)?;
        self.check_latent(&code)?;
        Ok(code)
    }
}
