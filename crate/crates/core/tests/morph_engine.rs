use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use morphbench::loss::{FeatureLayer, FeatureStack, LossWeights};
use morphbench::morph::{
    average_latents, load_model_weights, lr_at, make_toy_models, optimize_morph, optimize_morph_from_latents,
    save_model_weights, toy_subject, Adam, Generator, LatentCode, ModelBundle, MorphError, OptimizerConfig,
    PerceptualNet, ToyModels, ToySpec,
};
use morphbench::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> ToySpec {
    ToySpec::new(32, (4, 16), 8)
}

fn short(iterations: usize) -> OptimizerConfig {
    OptimizerConfig {
        iterations,
        ..OptimizerConfig::default()
    }
}

#[test]
fn latent_average_examples() {
    let a = LatentCode::random_normal(3, 4, 1).unwrap();
    assert_eq!(average_latents(&a, &a, 1.0, 1.0).unwrap(), a);
    let zero = LatentCode::zeros(3, 4).unwrap();
    let two = LatentCode::new(3, 4, vec![2.0; 12]).unwrap();
    assert_eq!(average_latents(&zero, &two, 1.0, 1.0).unwrap().tensor().data(), &[1.0; 12]);
    assert_eq!(average_latents(&a, &two, 2.0, 0.0).unwrap(), a);
    let b = LatentCode::zeros(2, 4).unwrap();
    assert!(matches!(average_latents(&a, &b, 1.0, 1.0), Err(MorphError::LatentShape { .. })));
    assert!(average_latents(&a, &a, f64::NAN, 1.0).is_err());
}

#[test]
fn learning_rate_schedule() {
    let cfg = OptimizerConfig::default();
    assert_eq!(lr_at(0, &cfg).unwrap(), 0.03);
    assert_eq!(lr_at(5, &cfg).unwrap(), 0.03);
    assert_eq!(lr_at(6, &cfg).unwrap(), 0.03 * 0.95);
    let decayed = (0..24).fold(0.03, |lr, _| lr * 0.95);
    assert_eq!(lr_at(149, &cfg).unwrap(), decayed);
    assert!((decayed - 0.03 * 0.95f64.powi(24)).abs() < 1e-17);
    for i in 0..150 {
        assert_eq!(lr_at(i, &cfg).unwrap(), (0..i / 6).fold(0.03, |lr, _| lr * 0.95));
    }
    assert!(matches!(
        lr_at(150, &cfg),
        Err(MorphError::IterationOutOfRange { iteration: 150, iterations: 150 })
    ));
    for bad in [
        OptimizerConfig { iterations: 0, ..cfg.clone() },
        OptimizerConfig { decay: 0.0, ..cfg.clone() },
        OptimizerConfig { decay: 1.5, ..cfg.clone() },
        OptimizerConfig { decay_every: 0, ..cfg.clone() },
        OptimizerConfig { beta1: 1.0, ..cfg.clone() },
        OptimizerConfig { lr0: -0.1, ..cfg.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(MorphError::Config(_))));
    }
}

/// Adam as written in Kingma & Ba, Algorithm 1, on a scalar.
fn adam_oracle(x0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut x) = (0.0, 0.0, x0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(x);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        x -= lr * mh / (vh.sqrt() + eps);
        out.push(x);
    }
    out
}

#[test]
fn adam_matches_reference_algorithm() {
    let want = adam_oracle(1.5, |x| 2.0 * x, 0.1, 50);
    let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
    let mut x = [1.5];
    for w in want {
        let g = [2.0 * x[0]];
        adam.step(&mut x, &g, 0.1).unwrap();
        assert!((x[0] - w).abs() < 1e-10);
    }
    assert_eq!(adam.steps(), 50);

    let mut adam = Adam::new(3, 0.9, 0.999, 1e-8);
    let mut p = [1.0, -2.0, 3.0];
    adam.step(&mut p, &[0.0; 3], 0.5).unwrap();
    assert_eq!(p, [1.0, -2.0, 3.0]);

    // first step moves each coordinate by about lr against its gradient
    let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
    let mut p = [0.0, 0.0];
    adam.step(&mut p, &[4.0, -0.01], 0.03).unwrap();
    assert!((p[0] + 0.03).abs() < 1e-8 && (p[1] - 0.03).abs() < 1e-5);

    let before = p;
    assert!(matches!(
        adam.step(&mut p, &[f64::NAN, 0.0], 0.03),
        Err(MorphError::NonFiniteGradient { .. })
    ));
    assert_eq!(p, before);
}

#[test]
fn toy_models_are_deterministic() {
    let a = ToyModels::from_seed(7, small_spec()).unwrap();
    let b = ToyModels::from_seed(7, small_spec()).unwrap();
    let c = ToyModels::from_seed(8, small_spec()).unwrap();
    for ((_, x), (_, y)) in a.tensors().iter().zip(b.tensors()) {
        assert_eq!(**x, *y);
    }
    assert_ne!(*a.tensors()[0].1, *c.tensors()[0].1);
    let m = a.bundle();
    assert_eq!(m.image_shape(), [3, 32, 32]);
    let img = toy_subject(&m, 1).unwrap();
    assert_eq!(img.shape(), &[3, 32, 32]);
    assert_eq!(m.embed(&img).unwrap().len(), 8);
}

#[test]
fn embedder_is_locally_lipschitz() {
    let m = make_toy_models(7, 64, (18, 512), 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = LatentCode::random_normal(18, 512, 3).unwrap();
    let e0 = m.embed(&m.render(&base).unwrap()).unwrap();
    for _ in 0..5 {
        let nudged: Vec<f64> = base
            .tensor()
            .data()
            .iter()
            .map(|v| v + 1e-6 * rng.random_range(-1.0..1.0))
            .collect();
        let e1 = m.embed(&m.render(&LatentCode::new(18, 512, nudged).unwrap()).unwrap()).unwrap();
        let dist = e0.iter().zip(&e1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(dist < 1e-2, "embedding moved by {dist}");
    }
}

#[test]
fn weights_untouched_by_optimisation() {
    let toy = ToyModels::from_seed(4, small_spec()).unwrap();
    let before: Vec<Tensor> = toy.tensors().iter().map(|(_, t)| (**t).clone()).collect();
    let m = toy.bundle();
    let (i1, i2) = (toy_subject(&m, 1).unwrap(), toy_subject(&m, 2).unwrap());
    optimize_morph(&i1, &i2, &m, &short(10)).unwrap();
    for ((name, t), b) in toy.tensors().iter().zip(&before) {
        assert_eq!(**t, *b, "{name} changed");
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let m = make_toy_models(9, 32, (4, 16), 8).unwrap();
    let (i1, i2) = (toy_subject(&m, 1).unwrap(), toy_subject(&m, 2).unwrap());
    let a = optimize_morph(&i1, &i2, &m, &short(15)).unwrap();
    let b = optimize_morph(&i1, &i2, &m, &short(15)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.latent, b.latent);
    assert_eq!(a.image, b.image);
}

#[test]
fn swapping_subjects_gives_the_same_trace() {
    let m = make_toy_models(10, 32, (4, 16), 8).unwrap();
    let (l1, l2) = (LatentCode::random_normal(4, 16, 1).unwrap(), LatentCode::random_normal(4, 16, 2).unwrap());
    let (i1, i2) = (m.render(&l1).unwrap(), m.render(&l2).unwrap());
    let a = optimize_morph_from_latents(&i1, &i2, &l1, &l2, &m, &short(20)).unwrap();
    let b = optimize_morph_from_latents(&i2, &i1, &l2, &l1, &m, &short(20)).unwrap();
    assert_eq!(a.initial_latent, b.initial_latent);
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert!((x.total - y.total).abs() <= 1e-12 * x.total.abs().max(1.0), "{x:?} vs {y:?}");
        assert!((x.cos1 - y.cos2).abs() < 1e-12);
    }
}

#[test]
fn equal_subjects_start_at_zero_identity() {
    let m = make_toy_models(11, 32, (4, 16), 8).unwrap();
    let i = toy_subject(&m, 3).unwrap();
    let r = optimize_morph(&i, &i, &m, &short(20)).unwrap();
    let first = &r.trace[0];
    assert!(first.identity.abs() < 1e-6 && first.id_diff.abs() < 1e-6, "{first:?}");
    assert!(r.trace.iter().all(|t| t.id_diff.abs() < 1e-12 && t.total.is_finite()));
}

// Starting at a roundoff-level minimum, Adam rescales the residual gradient to
// steps of about lr, so the total drifts upwards to ~1e-4.
#[test]
#[ignore = "Adam step normalisation moves off a roundoff-level minimum"]
fn equal_subjects_final_loss_not_above_initial() {
    let m = make_toy_models(11, 32, (4, 16), 8).unwrap();
    let i = toy_subject(&m, 3).unwrap();
    let r = optimize_morph(&i, &i, &m, &short(20)).unwrap();
    assert!(r.trace.last().unwrap().total <= r.trace[0].total);
}

struct PixelFeatures;

impl PerceptualNet for PixelFeatures {
    fn features<'g>(&self, _: &'g Graph, image: Var<'g>) -> Result<FeatureStack<'g>, MorphError> {
        Ok(FeatureStack::new(vec![FeatureLayer {
            layer_id: 0,
            features: image,
        }])?)
    }
}

#[test]
fn perceptual_only_small_steps_never_increase_loss() {
    let toy = ToyModels::from_seed(12, small_spec()).unwrap();
    let m = ModelBundle {
        perceptual: Arc::new(PixelFeatures),
        ..toy.bundle()
    };
    let (i1, i2) = (toy_subject(&m, 1).unwrap(), toy_subject(&m, 2).unwrap());
    let cfg = OptimizerConfig {
        iterations: 60,
        lr0: 0.003,
        weights: LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap(),
        ..OptimizerConfig::default()
    };
    let r = optimize_morph(&i1, &i2, &m, &cfg).unwrap();
    for w in r.trace.windows(2) {
        assert!(w[1].total <= w[0].total, "{} -> {}", w[0].total, w[1].total);
        assert_eq!((w[1].identity, w[1].ms_ssim, w[1].id_diff), (0.0, 0.0, 0.0));
    }
}

/// Wraps a generator and poisons its output from the `after`-th call on.
struct PoisonedGenerator {
    inner: Arc<dyn Generator>,
    calls: AtomicUsize,
    after: usize,
}

impl Generator for PoisonedGenerator {
    fn latent_shape(&self) -> (usize, usize) {
        self.inner.latent_shape()
    }

    fn image_shape(&self) -> [usize; 3] {
        self.inner.image_shape()
    }

    fn generate<'g>(&self, graph: &'g Graph, latent: Var<'g>) -> Result<Var<'g>, MorphError> {
        let img = self.inner.generate(graph, latent)?;
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.after {
            return Ok(img.mul(graph.scalar(f64::NAN))?);
        }
        Ok(img)
    }
}

#[test]
fn divergence_aborts_with_trace() {
    let toy = ToyModels::from_seed(13, small_spec()).unwrap();
    let plain = toy.bundle();
    let (l1, l2) = (LatentCode::random_normal(4, 16, 1).unwrap(), LatentCode::random_normal(4, 16, 2).unwrap());
    let (i1, i2) = (plain.render(&l1).unwrap(), plain.render(&l2).unwrap());
    let m = ModelBundle {
        generator: Arc::new(PoisonedGenerator {
            inner: plain.generator.clone(),
            calls: AtomicUsize::new(0),
            after: 4,
        }),
        ..plain
    };
    match optimize_morph_from_latents(&i1, &i2, &l1, &l2, &m, &short(20)) {
        Err(MorphError::Diverged { iteration, trace }) => {
            assert_eq!(iteration, 4);
            assert_eq!(trace.len(), 5);
            assert!(trace[..4].iter().all(|r| r.total.is_finite()));
            assert!(!trace[4].total.is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn contract_violations() {
    let m = make_toy_models(14, 32, (4, 16), 8).unwrap();
    let i = toy_subject(&m, 1).unwrap();
    let small = Tensor::zeros(vec![3, 16, 16]).unwrap();
    assert!(matches!(optimize_morph(&i, &small, &m, &short(2)), Err(MorphError::ModelContract(_))));
    let wrong = LatentCode::zeros(5, 16).unwrap();
    assert!(matches!(
        optimize_morph_from_latents(&i, &i, &wrong, &wrong, &m, &short(2)),
        Err(MorphError::LatentShape { .. })
    ));
    let nan = LatentCode::new(4, 16, vec![f64::NAN; 64]);
    assert!(nan.is_err() || matches!(
        optimize_morph_from_latents(&i, &i, &nan.unwrap(), &LatentCode::zeros(4, 16).unwrap(), &m, &short(2)),
        Err(MorphError::NonFiniteLatent)
    ));
    let no_predictor = ModelBundle { predictor: None, ..m.clone() };
    assert!(optimize_morph(&i, &i, &no_predictor, &short(2)).is_err());
}

#[test]
fn weight_file_round_trip_renders_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.mbw");
    let toy = ToyModels::from_seed(7, small_spec()).unwrap();
    save_model_weights(&toy, &path).unwrap();
    let loaded = load_model_weights(&path).unwrap();
    let probe = LatentCode::random_normal(4, 16, 99).unwrap();
    let a = toy.bundle();
    assert_eq!(a.render(&probe).unwrap(), loaded.render(&probe).unwrap());
    let img = a.render(&probe).unwrap();
    assert_eq!(a.embed(&img).unwrap(), loaded.embed(&img).unwrap());
}
