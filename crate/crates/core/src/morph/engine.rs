use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::loss::{
    composite_loss, cosine_similarity, id_diff_loss, identity_loss, ms_ssim_loss,
    perceptual_loss, Embedding, FeatureMaps, LossParts, MsSsimParams,
};
use crate::tensor::{Graph, Tensor, Var};

use super::{average_latents, lr_at, Adam, LatentCode, ModelBundle, MorphError, OptimizerConfig};

/// Loss state at the start of one iteration, before its Adam update. Term
/// columns hold weighted contributions λᵢ·Lᵢ, so a disabled term reads 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    pub total: f64,
    pub perceptual: f64,
    pub identity: f64,
    pub ms_ssim: f64,
    pub id_diff: f64,
    /// cos(v_M, v_1)
    pub cos1: f64,
    /// cos(v_M, v_2)
    pub cos2: f64,
}

#[derive(Debug, Clone)]
pub struct MorphResult {
    pub initial_latent: LatentCode,
    pub latent: LatentCode,
    pub image: Tensor,
    pub trace: Vec<TraceRow>,
    pub wall_time: Duration,
}

impl MorphResult {
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_trace_csv(&self.trace, out)
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Predicts both subjects' latents, averages them with w1 = w2 = 1 and
/// optimises the average.
pub fn optimize_morph(
    i1: &Tensor,
    i2: &Tensor,
    models: &ModelBundle,
    cfg: &OptimizerConfig,
) -> Result<MorphResult, MorphError> {
    let l1 = models.predict_latent(i1)?;
    let l2 = models.predict_latent(i2)?;
    optimize_morph_from_latents(i1, i2, &l1, &l2, models, cfg)
}

pub fn optimize_morph_from_latents(
    i1: &Tensor,
    i2: &Tensor,
    l1: &LatentCode,
    l2: &LatentCode,
    models: &ModelBundle,
    cfg: &OptimizerConfig,
) -> Result<MorphResult, MorphError> {
    let start = Instant::now();
    cfg.validate()?;
    models.check_image(i1)?;
    models.check_image(i2)?;
    models.check_latent(l1)?;
    models.check_latent(l2)?;
    let init = average_latents(l1, l2, 1.0, 1.0)?;
    if !init.tensor().all_finite() {
        return Err(MorphError::NonFiniteLatent);
    }

    let refs = References::new(i1, i2, models)?;
    let ssim_params = MsSsimParams::default();
    let w = &cfg.weights;
    let (layers, dims) = init.shape();

    let mut params = init.tensor().data().to_vec();
    let mut adam = Adam::from_config(params.len(), cfg);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let lr = lr_at(iteration, cfg)?;
        let g = Graph::new();
        let latent = g.param(Tensor::new(vec![layers, dims], params.clone())?);
        let image = models.generator.generate(&g, latent)?;
        if image.shape() != models.image_shape() {
            return Err(MorphError::ModelContract(format!(
                "generator produced {:?}, declared {:?}",
                image.shape(),
                models.image_shape()
            )));
        }

        let zero = g.scalar(0.0);
        let vm = models.embedder.embed(&g, image)?;
        let v1 = g.constant(refs.v1.to_tensor());
        let v2 = g.constant(refs.v2.to_tensor());
        if vm.shape() != [refs.v1.dim()] {
            return Err(MorphError::ModelContract(format!(
                "embedder produced {:?} during optimisation, expected [{}]",
                vm.shape(),
                refs.v1.dim()
            )));
        }
        let cos1 = cosine_similarity(vm, v1)?.item().expect("scalar");
        let cos2 = cosine_similarity(vm, v2)?.item().expect("scalar");

        let perceptual = if w.lambda1 > 0.0 {
            let fm = models.perceptual.features(&g, image)?;
            perceptual_loss(&refs.f1.attach(&g), &refs.f2.attach(&g), &fm)?
        } else {
            zero
        };
        let identity = if w.lambda2 > 0.0 { identity_loss(v1, v2, vm)? } else { zero };
        let ms_ssim = if w.lambda3 > 0.0 {
            let a = g.constant(i1.clone());
            let b = g.constant(i2.clone());
            ms_ssim_loss(a, b, image, &ssim_params)?
        } else {
            zero
        };
        let id_diff = if w.lambda4 > 0.0 { id_diff_loss(v1, v2, vm)? } else { zero };

        let parts = LossParts {
            perceptual,
            identity,
            ms_ssim,
            id_diff,
        };
        let total = composite_loss(&parts, w)?;
        let value = |v: Var<'_>, lambda: f64| lambda * v.item().expect("scalar");
        let row = TraceRow {
            iteration,
            lr,
            total: total.item().expect("scalar"),
            perceptual: value(perceptual, w.lambda1),
            identity: value(identity, w.lambda2),
            ms_ssim: value(ms_ssim, w.lambda3),
            id_diff: value(id_diff, w.lambda4),
            cos1,
            cos2,
        };
        let finite = row.total.is_finite();
        trace.push(row);
        if !finite {
            return Err(MorphError::Diverged { iteration, trace });
        }
        log::debug!("iteration {iteration}: loss {:.6e}", trace[iteration].total);

        g.backward(total)?;
        let grad = latent.grad().expect("latent requires grad");
        match adam.step(&mut params, grad.data(), lr) {
            Err(MorphError::NonFiniteGradient { .. }) => {
                return Err(MorphError::NonFiniteGradient { iteration })
            }
            other => other?,
        }
    }

    let latent = LatentCode::new(layers, dims, params)?;
    let image = models.render(&latent)?;
    Ok(MorphResult {
        initial_latent: init,
        latent,
        image,
        trace,
        wall_time: start.elapsed(),
    })
}

/// Features and embeddings of the two subject images, computed once.
struct References {
    f1: FeatureMaps,
    f2: FeatureMaps,
    v1: Embedding,
    v2: Embedding,
}

impl References {
    fn new(i1: &Tensor, i2: &Tensor, models: &ModelBundle) -> Result<Self, MorphError> {
        let features = |img: &Tensor| -> Result<FeatureMaps, MorphError> {
            let g = Graph::new();
            Ok(models.perceptual.features(&g, g.constant(img.clone()))?.detach())
        };
        Ok(Self {
            f1: features(i1)?,
            f2: features(i2)?,
            v1: Embedding::new(models.embed(i1)?)?,
            v2: Embedding::new(models.embed(i2)?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossWeights;
    use crate::morph::make_toy_models;

    fn setup() -> (ModelBundle, Tensor, Tensor) {
        let models = make_toy_models(3, 32, (2, 16), 16).unwrap();
        let l1 = LatentCode::new(2, 16, (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let l2 = LatentCode::new(2, 16, (0..32).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let i1 = models.render(&l1).unwrap();
        let i2 = models.render(&l2).unwrap();
        (models, i1, i2)
    }

    fn short() -> OptimizerConfig {
        OptimizerConfig {
            iterations: 12,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn trace_follows_schedule() {
        let (models, i1, i2) = setup();
        let cfg = short();
        let r = optimize_morph(&i1, &i2, &models, &cfg).unwrap();
        assert_eq!(r.trace.len(), cfg.iterations);
        for row in &r.trace {
            assert_eq!(row.lr, lr_at(row.iteration, &cfg).unwrap());
            let sum = row.perceptual + row.identity + row.ms_ssim + row.id_diff;
            assert!((sum - row.total).abs() < 1e-12);
        }
        assert_eq!(r.image.shape(), [3, 32, 32]);
    }

    #[test]
    fn disabled_terms_read_zero() {
        let (models, i1, i2) = setup();
        let cfg = OptimizerConfig {
            weights: LossWeights::new(0.0, 10.0, 0.0, 1.0).unwrap(),
            ..short()
        };
        let r = optimize_morph(&i1, &i2, &models, &cfg).unwrap();
        assert!(r.trace.iter().all(|t| t.perceptual == 0.0 && t.ms_ssim == 0.0));
        assert!(r.trace.iter().all(|t| t.identity > 0.0));
    }

    #[test]
    fn rejects_wrong_image_shape() {
        let (models, i1, _) = setup();
        let bad = Tensor::zeros(vec![3, 16, 16]).unwrap();
        assert!(matches!(
            optimize_morph(&i1, &bad, &models, &short()),
            Err(MorphError::ModelContract(_))
        ));
    }
}
