use crate::tensor::{Graph, Tensor, Var};

use super::LossError;

/// Face embedding with finite, strictly positive norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, LossError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFiniteEmbedding);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LossError::ZeroNorm("embedding"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.0.clone()).expect("embedding is non-empty")
    }
}

/// Differentiable cosine similarity of two equally sized nodes.
pub fn cosine_similarity<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>, LossError> {
    if a.numel() != b.numel() {
        return Err(LossError::DimensionMismatch(a.numel(), b.numel()));
    }
    let na = a.dot(a)?;
    let nb = b.dot(b)?;
    if na.item() == Some(0.0) {
        return Err(LossError::ZeroNorm("first argument"));
    }
    if nb.item() == Some(0.0) {
        return Err(LossError::ZeroNorm("second argument"));
    }
    let denom = na.sqrt()?.mul(nb.sqrt()?)?;
    Ok(a.dot(b)?.div(denom)?)
}

fn cosine_distances<'g>(
    v1: Var<'g>,
    v2: Var<'g>,
    vm: Var<'g>,
) -> Result<(Var<'g>, Var<'g>), LossError> {
    let d1 = cosine_similarity(v1, vm)?.neg().add_scalar(1.0);
    let d2 = cosine_similarity(v2, vm)?.neg().add_scalar(1.0);
    Ok((d1, d2))
}

/// Mean cosine distance of the morph embedding to both subjects, in [0, 2].
pub fn identity_loss<'g>(v1: Var<'g>, v2: Var<'g>, vm: Var<'g>) -> Result<Var<'g>, LossError> {
    let (d1, d2) = cosine_distances(v1, v2, vm)?;
    Ok(d1.add(d2)?.mul_scalar(0.5))
}

/// L1 gap between the two cosine distances, in [0, 2].
pub fn id_diff_loss<'g>(v1: Var<'g>, v2: Var<'g>, vm: Var<'g>) -> Result<Var<'g>, LossError> {
    let (d1, d2) = cosine_distances(v1, v2, vm)?;
    Ok(d1.sub(d2)?.abs())
}

fn check_triple(v1: &Embedding, v2: &Embedding, vm: &Embedding) -> Result<(), LossError> {
    if v1.dim() != vm.dim() {
        return Err(LossError::DimensionMismatch(v1.dim(), vm.dim()));
    }
    if v2.dim() != vm.dim() {
        return Err(LossError::DimensionMismatch(v2.dim(), vm.dim()));
    }
    Ok(())
}

/// ∂L_identity/∂z_d obtained by running the tape on the identity loss.
pub fn identity_loss_grad_autodiff(
    v1: &Embedding,
    v2: &Embedding,
    vm: &Embedding,
) -> Result<Vec<f64>, LossError> {
    check_triple(v1, v2, vm)?;
    let g = Graph::new();
    let a = g.constant(v1.to_tensor());
    let b = g.constant(v2.to_tensor());
    let z = g.param(vm.to_tensor());
    let loss = identity_loss(a, b, z)?;
    g.backward(loss)?;
    Ok(z.grad().map(Tensor::into_data).unwrap_or_else(|| vec![0.0; vm.dim()]))
}

/// Closed-form derivative of the identity loss:
///
/// ∂L/∂z_d = −½ Σ_k [ u_d / (‖u‖‖z‖) − (u·z) z_d / (‖u‖‖z‖³) ],  u ∈ {v1, v2}
pub fn identity_loss_grad_exact(
    v1: &Embedding,
    v2: &Embedding,
    vm: &Embedding,
) -> Result<Vec<f64>, LossError> {
    check_triple(v1, v2, vm)?;
    let z = vm.values();
    let zn = vm.norm();
    let term = |u: &Embedding| -> Vec<f64> {
        let un = u.norm();
        let uz: f64 = u.values().iter().zip(z).map(|(a, b)| a * b).sum();
        u.values()
            .iter()
            .zip(z)
            .map(|(&ud, &zd)| ud / (un * zn) - uz * zd / (un * zn.powi(3)))
            .collect()
    };
    let (t1, t2) = (term(v1), term(v2));
    Ok(t1.iter().zip(&t2).map(|(a, b)| -0.5 * (a + b)).collect())
}

/// The closed form as commonly printed for this loss:
///
/// ∂L/∂z_d = 1 − (x_d/(2‖v1‖) + y_d/(2‖v2‖)) · Σ_{d'≠d} z_{d'}² / (z_d² + Σ_{d'≠d} z_{d'}²)^{3/2}
///
/// It is kept verbatim as a cross-check target. It differs from the true
/// derivative ([`identity_loss_grad_exact`]) by the constant 1 plus the
/// omitted cross-dimension terms ½ Σ_u z_d Σ_{d'≠d} u_{d'} z_{d'} / (‖u‖‖z‖³);
/// it is not used for optimisation.
pub fn identity_loss_grad_paper(
    v1: &Embedding,
    v2: &Embedding,
    vm: &Embedding,
) -> Result<Vec<f64>, LossError> {
    check_triple(v1, v2, vm)?;
    let z = vm.values();
    let total_sq: f64 = z.iter().map(|v| v * v).sum();
    let (n1, n2) = (v1.norm(), v2.norm());
    Ok(z.iter()
        .enumerate()
        .map(|(d, &zd)| {
            let others = total_sq - zd * zd;
            let coeff = v1.values()[d] / (2.0 * n1) + v2.values()[d] / (2.0 * n2);
            1.0 - coeff * others / (zd * zd + others).powf(1.5)
        })
        .collect())
}
