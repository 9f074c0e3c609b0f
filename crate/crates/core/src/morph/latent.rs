use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

use super::MorphError;

/// Generator input of shape `(layers, dims)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    values: Tensor,
}

impl LatentCode {
    pub fn new(layers: usize, dims: usize, values: Vec<f64>) -> Result<Self, MorphError> {
        let t = Tensor::new(vec![layers, dims], values)?;
        Self::from_tensor(t)
    }

    pub fn from_tensor(values: Tensor) -> Result<Self, MorphError> {
        if values.shape().len() != 2 {
            return Err(MorphError::ModelContract(format!(
                "latent must be 2-D, got {:?}",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(MorphError::NonFiniteLatent);
        }
        Ok(Self { values })
    }

    pub fn zeros(layers: usize, dims: usize) -> Result<Self, MorphError> {
        Self::from_tensor(Tensor::zeros(vec![layers, dims])?)
    }

    /// Standard-normal code drawn from a seeded ChaCha8 stream.
    pub fn random_normal(layers: usize, dims: usize, seed: u64) -> Result<Self, MorphError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..layers * dims).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self::new(layers, dims, data)
    }

    pub fn layers(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dims(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers(), self.dims())
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }
}

/// (w1·l1 + w2·l2) / 2
pub fn average_latents(
    l1: &LatentCode,
    l2: &LatentCode,
    w1: f64,
    w2: f64,
) -> Result<LatentCode, MorphError> {
    if l1.shape() != l2.shape() {
        return Err(MorphError::LatentShape {
            left: l1.shape(),
            right: l2.shape(),
        });
    }
    if !w1.is_finite() || !w2.is_finite() {
        return Err(MorphError::Config(format!("latent weights must be finite: {w1}, {w2}")));
    }
    let data = l1
        .tensor()
        .data()
        .iter()
        .zip(l2.tensor().data())
        .map(|(a, b)| (w1 * a + w2 * b) / 2.0)
        .collect();
    LatentCode::new(l1.layers(), l1.dims(), data)
}
