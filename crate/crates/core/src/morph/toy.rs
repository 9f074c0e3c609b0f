//! Small fixed-seed stand-ins for the synthesis network, the face embedder
//! and the perceptual network, plus a least-squares latent predictor.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::loss::{FeatureLayer, FeatureStack};
use crate::tensor::{linear_taps, Graph, Tensor, Var};

use super::{Embedder, Generator, LatentCode, LatentPredictor, ModelBundle, MorphError, PerceptualNet};

/// Architecture of the toy model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub image_side: usize,
    pub latent_layers: usize,
    pub latent_dims: usize,
    pub embed_dim: usize,
    pub low_res: usize,
}

impl ToySpec {
    pub fn new(image_side: usize, latent: (usize, usize), embed_dim: usize) -> Self {
        Self {
            image_side,
            latent_layers: latent.0,
            latent_dims: latent.1,
            embed_dim,
            low_res: 8,
        }
    }

    pub fn validate(&self) -> Result<(), MorphError> {
        let fail = |m: String| Err(MorphError::Config(m));
        if self.image_side < 32 {
            return fail(format!("image side must be >= 32, got {}", self.image_side));
        }
        if self.embed_dim < 8 {
            return fail(format!("embedding dimension must be >= 8, got {}", self.embed_dim));
        }
        if self.latent_layers == 0 || self.latent_dims == 0 {
            return fail("latent shape must be non-empty".into());
        }
        if self.low_res < 2 || self.low_res > self.image_side {
            return fail(format!("low-res map side {} out of range", self.low_res));
        }
        Ok(())
    }

    fn pixels_low(&self) -> usize {
        3 * self.low_res * self.low_res
    }

    fn embed_grid(&self) -> usize {
        let s1 = (self.image_side - 5) / 2 + 1;
        (s1 - 3) / 2 + 1
    }

    /// Name and shape of every weight tensor, in container order.
    pub fn tensor_manifest(&self) -> Vec<(String, Vec<usize>)> {
        let g = self.embed_grid();
        let mut out = vec![
            (
                "generator.weight".to_string(),
                vec![self.latent_layers * self.latent_dims, self.pixels_low()],
            ),
            ("generator.bias".to_string(), vec![1, self.pixels_low()]),
            ("embedder.conv1".to_string(), vec![8, 3, 5, 5]),
            ("embedder.conv2".to_string(), vec![16, 8, 3, 3]),
            ("embedder.head".to_string(), vec![16 * g * g, self.embed_dim]),
        ];
        for (i, (o, c, _)) in PERCEPTUAL_LAYERS.iter().enumerate() {
            out.push((format!("perceptual.conv{}", i + 1), vec![*o, *c, 3, 3]));
        }
        out
    }
}

// (out channels, in channels, stride)
const PERCEPTUAL_LAYERS: [(usize, usize, usize); 4] = [(4, 3, 1), (4, 4, 1), (8, 4, 2), (8, 8, 2)];

/// Latent rows → linear mix into a `3 × r × r` map → bilinear upsampling →
/// sigmoid, producing a `[3, side, side]` image in (0, 1).
#[derive(Debug)]
pub struct ToyGenerator {
    spec: ToySpec,
    weight: Arc<Tensor>,
    bias: Arc<Tensor>,
}

impl Generator for ToyGenerator {
    fn latent_shape(&self) -> (usize, usize) {
        (self.spec.latent_layers, self.spec.latent_dims)
    }

    fn image_shape(&self) -> [usize; 3] {
        [3, self.spec.image_side, self.spec.image_side]
    }

    fn generate<'g>(&self, graph: &'g Graph, latent: Var<'g>) -> Result<Var<'g>, MorphError> {
        let (l, d) = self.latent_shape();
        if latent.shape() != [l, d] {
            return Err(MorphError::ModelContract(format!(
                "generator expects latent [{l}, {d}], got {:?}",
                latent.shape()
            )));
        }
        let r = self.spec.low_res;
        let w = graph.leaf(Arc::clone(&self.weight), false);
        let b = graph.leaf(Arc::clone(&self.bias), false);
        let low = latent.reshape(vec![1, l * d])?.matmul(w)?.add(b)?;
        let side = self.spec.image_side;
        Ok(low
            .reshape(vec![3, r, r])?
            .resize_bilinear(side, side)?
            .sigmoid())
    }
}

/// Centres pixels at 0.5, then strided conv + tanh, strided conv + square
/// and a linear head. The even second stage makes the embedding of a
/// latent average differ from the average of embeddings.
#[derive(Debug)]
pub struct ToyEmbedder {
    spec: ToySpec,
    conv1: Arc<Tensor>,
    conv2: Arc<Tensor>,
    head: Arc<Tensor>,
}

impl Embedder for ToyEmbedder {
    fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    fn embed<'g>(&self, graph: &'g Graph, image: Var<'g>) -> Result<Var<'g>, MorphError> {
        let c1 = graph.leaf(Arc::clone(&self.conv1), false);
        let c2 = graph.leaf(Arc::clone(&self.conv2), false);
        let head = graph.leaf(Arc::clone(&self.head), false);
        let h = image
            .add_scalar(-0.5)
            .conv2d(c1, 2)?
            .tanh()
            .conv2d(c2, 2)?
            .square();
        let n = h.numel();
        Ok(h
            .reshape(vec![1, n])?
            .matmul(head)?
            .reshape(vec![self.spec.embed_dim])?)
    }
}

/// Four 3×3 conv + tanh layers, all tapped; the last two are strided.
#[derive(Debug)]
pub struct ToyPerceptual {
    convs: Vec<(Arc<Tensor>, usize)>,
}

impl PerceptualNet for ToyPerceptual {
    fn features<'g>(
        &self,
        graph: &'g Graph,
        image: Var<'g>,
    ) -> Result<FeatureStack<'g>, MorphError> {
        let mut h = image;
        let mut layers = Vec::with_capacity(self.convs.len());
        for (i, (k, stride)) in self.convs.iter().enumerate() {
            let k = graph.leaf(Arc::clone(k), false);
            h = h.conv2d(k, *stride)?.tanh();
            layers.push(FeatureLayer {
                layer_id: i + 1,
                features: h,
            });
        }
        Ok(FeatureStack::new(layers)?)
    }
}

/// Least-squares inversion of [`ToyGenerator`]: undo the sigmoid, project
/// the upsampled map back to the low-res grid, then take the minimum-norm
/// latent reproducing it.
#[derive(Debug)]
pub struct ToyPredictor {
    generator: Arc<ToyGenerator>,
    pinv: OnceLock<DMatrix<f64>>,
}

impl ToyPredictor {
    pub fn new(generator: Arc<ToyGenerator>) -> Self {
        Self {
            generator,
            pinv: OnceLock::new(),
        }
    }

    fn weight_pinv(&self) -> &DMatrix<f64> {
        self.pinv.get_or_init(|| {
            let w = &self.generator.weight;
            let (n, k) = (w.shape()[0], w.shape()[1]);
            let m = DMatrix::from_row_slice(n, k, w.data());
            m.pseudo_inverse(1e-10).expect("svd of finite matrix")
        })
    }
}

fn upsample_matrix(src: usize, dst: usize) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(dst, src);
    for (i, (lo, hi, f)) in linear_taps(src, dst).into_iter().enumerate() {
        u[(i, lo)] += 1.0 - f;
        u[(i, hi)] += f;
    }
    u
}

impl LatentPredictor for ToyPredictor {
    fn predict(&self, image: &Tensor) -> Result<LatentCode, MorphError> {
        let spec = self.generator.spec;
        let (side, r) = (spec.image_side, spec.low_res);
        if image.shape() != [3, side, side] {
            return Err(MorphError::ModelContract(format!(
                "predictor expects [3, {side}, {side}], got {:?}",
                image.shape()
            )));
        }
        let u = upsample_matrix(r, side);
        let proj = u
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| MorphError::ModelContract(e.to_string()))?;
        let mut target = Vec::with_capacity(3 * r * r);
        for c in 0..3 {
            let plane = &image.data()[c * side * side..(c + 1) * side * side];
            let logits = DMatrix::from_row_iterator(
                side,
                side,
                plane.iter().map(|&p| {
                    let p = p.clamp(1e-4, 1.0 - 1e-4);
                    (p / (1.0 - p)).ln()
                }),
            );
            let low = &proj * logits * proj.transpose();
            for i in 0..r {
                for j in 0..r {
                    target.push(low[(i, j)]);
                }
            }
        }
        for (t, b) in target.iter_mut().zip(self.generator.bias.data()) {
            *t -= b;
        }
        let q = DMatrix::from_row_slice(1, target.len(), &target);
        let latent = q * self.weight_pinv();
        LatentCode::new(spec.latent_layers, spec.latent_dims, latent.iter().copied().collect())
    }
}

/// Concrete toy networks; [`ToyModels::bundle`] exposes them behind the
/// model traits.
#[derive(Debug, Clone)]
pub struct ToyModels {
    pub spec: ToySpec,
    pub generator: Arc<ToyGenerator>,
    pub embedder: Arc<ToyEmbedder>,
    pub perceptual: Arc<ToyPerceptual>,
}

impl ToyModels {
    pub fn from_seed(seed: u64, spec: ToySpec) -> Result<Self, MorphError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = spec
            .tensor_manifest()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let std = match name.as_str() {
                    "generator.bias" => 0.0,
                    // conv kernels [o, c, kh, kw] and matrices [in, out]
                    _ if shape.len() == 4 => 1.0 / ((shape[1] * shape[2] * shape[3]) as f64).sqrt(),
                    _ => 1.0 / (shape[0] as f64).sqrt(),
                };
                let data = if std == 0.0 {
                    vec![0.0; n]
                } else {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_tensors(spec, tensors)
    }

    /// Builds the models from tensors in [`ToySpec::tensor_manifest`] order.
    pub fn from_tensors(spec: ToySpec, tensors: Vec<Tensor>) -> Result<Self, MorphError> {
        spec.validate()?;
        let manifest = spec.tensor_manifest();
        if tensors.len() != manifest.len() {
            return Err(MorphError::ModelContract(format!(
                "expected {} tensors, got {}",
                manifest.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in manifest.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(MorphError::ModelContract(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter().map(Arc::new);
        let mut next = || it.next().expect("length checked");
        let generator = Arc::new(ToyGenerator {
            spec,
            weight: next(),
            bias: next(),
        });
        let embedder = Arc::new(ToyEmbedder {
            spec,
            conv1: next(),
            conv2: next(),
            head: next(),
        });
        let perceptual = Arc::new(ToyPerceptual {
            convs: PERCEPTUAL_LAYERS.iter().map(|&(_, _, s)| (next(), s)).collect(),
        });
        Ok(Self {
            spec,
            generator,
            embedder,
            perceptual,
        })
    }

    /// All weight tensors in manifest order.
    pub fn tensors(&self) -> Vec<(String, Arc<Tensor>)> {
        let mut all = vec![
            Arc::clone(&self.generator.weight),
            Arc::clone(&self.generator.bias),
            Arc::clone(&self.embedder.conv1),
            Arc::clone(&self.embedder.conv2),
            Arc::clone(&self.embedder.head),
        ];
        all.extend(self.perceptual.convs.iter().map(|(k, _)| Arc::clone(k)));
        self.spec
            .tensor_manifest()
            .into_iter()
            .map(|(name, _)| name)
            .zip(all)
            .collect()
    }

    pub fn bundle(&self) -> ModelBundle {
        ModelBundle {
            generator: self.generator.clone(),
            embedder: self.embedder.clone(),
            perceptual: self.perceptual.clone(),
            predictor: Some(Arc::new(ToyPredictor::new(Arc::clone(&self.generator)))),
        }
    }
}

/// Deterministic toy bundle: the same seed always yields bit-identical weights.
pub fn make_toy_models(
    seed: u64,
    image_side: usize,
    latent: (usize, usize),
    embed_dim: usize,
) -> Result<ModelBundle, MorphError> {
    Ok(ToyModels::from_seed(seed, ToySpec::new(image_side, latent, embed_dim))?.bundle())
}

/// Subject image rendered from a standard-normal latent drawn with `seed`.
pub fn toy_subject(models: &ModelBundle, seed: u64) -> Result<Tensor, MorphError> {
    let (layers, dims) = models.latent_shape();
    models.render(&LatentCode::random_normal(layers, dims, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyModels {
        ToyModels::from_seed(3, ToySpec::new(32, (4, 16), 8)).unwrap()
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(make_toy_models(1, 16, (18, 512), 64).is_err());
        assert!(make_toy_models(1, 64, (18, 512), 4).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = small();
        let b = small();
        for ((na, ta), (nb, tb)) in a.tensors().iter().zip(b.tensors().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        let c = ToyModels::from_seed(4, a.spec).unwrap();
        assert_ne!(a.tensors()[0].1.data(), c.tensors()[0].1.data());
    }

    #[test]
    fn output_shapes() {
        let m = small().bundle();
        let latent = LatentCode::zeros(4, 16).unwrap();
        let img = m.render(&latent).unwrap();
        assert_eq!(img.shape(), &[3, 32, 32]);
        assert_eq!(m.embed(&img).unwrap().len(), 8);
        let g = Graph::new();
        let f = m.perceptual.features(&g, g.constant(img)).unwrap();
        assert_eq!(f.len(), 4);
        let shapes: Vec<_> = f.layers().iter().map(|l| l.features.shape()).collect();
        assert_eq!(shapes, vec![vec![4, 30, 30], vec![4, 28, 28], vec![8, 13, 13], vec![8, 6, 6]]);
    }

    #[test]
    fn predictor_reproduces_generated_images() {
        let models = ToyModels::from_seed(11, ToySpec::new(32, (18, 32), 8)).unwrap();
        let m = models.bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let latent = LatentCode::new(18, 32, (0..18 * 32).map(|_| dist.sample(&mut rng)).collect()).unwrap();
        let img = m.render(&latent).unwrap();
        let back = m.predict_latent(&img).unwrap();
        let img2 = m.render(&back).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(img2.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }
}
