use serde::{Deserialize, Serialize};

use crate::tensor::Var;

use super::LossError;

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.0002,
            lambda2: 10.0,
            lambda3: 1.0,
            lambda4: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self, LossError> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in self.named() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ]
    }
}

/// The four scalar loss terms of one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<'g> {
    pub perceptual: Var<'g>,
    pub identity: Var<'g>,
    pub ms_ssim: Var<'g>,
    pub id_diff: Var<'g>,
}

/// λ₁·L_perceptual + λ₂·L_identity + λ₃·L_MS-SSIM + λ₄·L_ID-diff
pub fn composite_loss<'g>(parts: &LossParts<'g>, w: &LossWeights) -> Result<Var<'g>, LossError> {
    w.validate()?;
    let terms = [
        (parts.perceptual, w.lambda1),
        (parts.identity, w.lambda2),
        (parts.ms_ssim, w.lambda3),
        (parts.id_diff, w.lambda4),
    ];
    let mut total: Option<Var<'g>> = None;
    for (part, lambda) in terms {
        if part.numel() != 1 {
            return Err(crate::tensor::TensorError::NonScalarLoss(part.shape()).into());
        }
        let weighted = part.mul_scalar(lambda);
        total = Some(match total {
            Some(t) => t.add(weighted)?,
            None => weighted,
        });
    }
    Ok(total.expect("four terms"))
}
