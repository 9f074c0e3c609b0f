use serde::{Deserialize, Serialize};

use crate::loss::LossWeights;

use super::MorphError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub lr0: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` steps.
    pub decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            lr0: 0.03,
            decay: 0.95,
            decay_every: 6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), MorphError> {
        let fail = |m: String| Err(MorphError::Config(m));
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if self.decay_every == 0 {
            return fail("decay_every must be >= 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// Step-wise exponential decay: `lr0 · decay^⌊iter / decay_every⌋`.
pub fn lr_at(iter: usize, cfg: &OptimizerConfig) -> Result<f64, MorphError> {
    if iter >= cfg.iterations {
        return Err(MorphError::IterationOutOfRange {
            iteration: iter,
            iterations: cfg.iterations,
        });
    }
    // repeated multiplication, not powi: powi results differ between const-folded and runtime calls
    let mut lr = cfg.lr0;
    for _ in 0..iter / cfg.decay_every {
        lr *= cfg.decay;
    }
    Ok(lr)
}

/// Bias-corrected Adam over a flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn from_config(len: usize, cfg: &OptimizerConfig) -> Self {
        Self::new(len, cfg.beta1, cfg.beta2, cfg.eps)
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Applies one update in place. Parameters are left untouched if any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), MorphError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(MorphError::Config(format!(
                "Adam state sized {} but got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(MorphError::NonFiniteGradient {
                iteration: self.step as usize,
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
