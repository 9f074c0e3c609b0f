use std::sync::Arc;

use crate::tensor::{Graph, Tensor, Var};

use super::LossError;

/// One tapped layer of a perceptual network.
#[derive(Debug, Clone, Copy)]
pub struct FeatureLayer<'g> {
    pub layer_id: usize,
    pub features: Var<'g>,
}

/// Ordered feature taps on a graph; layer ids strictly increase.
#[derive(Debug, Clone, Default)]
pub struct FeatureStack<'g> {
    layers: Vec<FeatureLayer<'g>>,
}

impl<'g> FeatureStack<'g> {
    pub fn new(layers: Vec<FeatureLayer<'g>>) -> Result<Self, LossError> {
        if layers.windows(2).any(|w| w[0].layer_id >= w[1].layer_id) {
            return Err(LossError::UnorderedLayers(
                layers.iter().map(|l| l.layer_id).collect(),
            ));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[FeatureLayer<'g>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Detached copy of the feature values, e.g. for caching reference
    /// features across iterations.
    pub fn detach(&self) -> FeatureMaps {
        FeatureMaps {
            layers: self
                .layers
                .iter()
                .map(|l| (l.layer_id, l.features.value()))
                .collect(),
        }
    }
}

/// Graph-free feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub layers: Vec<(usize, Arc<Tensor>)>,
}

impl FeatureMaps {
    /// Re-attaches the cached maps to `graph` as constants.
    pub fn attach<'g>(&self, graph: &'g Graph) -> FeatureStack<'g> {
        FeatureStack {
            layers: self
                .layers
                .iter()
                .map(|(id, t)| FeatureLayer {
                    layer_id: *id,
                    features: graph.leaf(Arc::clone(t), false),
                })
                .collect(),
        }
    }
}

fn check_aligned(a: &FeatureStack, b: &FeatureStack) -> Result<(), LossError> {
    let mut bad = Vec::new();
    let n = a.len().max(b.len());
    for i in 0..n {
        match (a.layers.get(i), b.layers.get(i)) {
            (Some(x), Some(y)) if x.layer_id == y.layer_id && x.features.shape() == y.features.shape() => {}
            (Some(x), Some(y)) => {
                bad.push(x.layer_id);
                if y.layer_id != x.layer_id {
                    bad.push(y.layer_id);
                }
            }
            (Some(x), None) | (None, Some(x)) => bad.push(x.layer_id),
            (None, None) => unreachable!(),
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        bad.sort_unstable();
        bad.dedup();
        Err(LossError::LayerMismatch(bad))
    }
}

/// ½ Σᵢ (1/Nᵢ)‖Fᵢ(I₁)−Fᵢ(I'ₘ)‖² + ½ Σᵢ (1/Nᵢ)‖Fᵢ(I₂)−Fᵢ(I'ₘ)‖²
pub fn perceptual_loss<'g>(
    f1: &FeatureStack<'g>,
    f2: &FeatureStack<'g>,
    fm: &FeatureStack<'g>,
) -> Result<Var<'g>, LossError> {
    check_aligned(f1, fm)?;
    check_aligned(f2, fm)?;
    let mut total: Option<Var<'g>> = None;
    for ((a, b), m) in f1.layers.iter().zip(&f2.layers).zip(&fm.layers) {
        let n = m.features.numel() as f64;
        let t1 = a.features.sub(m.features)?.square().sum();
        let t2 = b.features.sub(m.features)?.square().sum();
        let layer = t1.add(t2)?.mul_scalar(0.5 / n);
        total = Some(match total {
            Some(acc) => acc.add(layer)?,
            None => layer,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Err(LossError::LayerMismatch(Vec::new())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack<'g>(g: &'g Graph, layers: &[(usize, Vec<f64>)]) -> FeatureStack<'g> {
        FeatureStack::new(
            layers
                .iter()
                .map(|(id, v)| FeatureLayer {
                    layer_id: *id,
                    features: g.constant(Tensor::vector(v.clone()).unwrap()),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_features_give_zero() {
        let g = Graph::new();
        let s = stack(&g, &[(1, vec![1.0, 2.0]), (3, vec![0.5])]);
        assert_eq!(perceptual_loss(&s, &s, &s).unwrap().item(), Some(0.0));
    }

    #[test]
    fn hand_arithmetic_single_layer() {
        let g = Graph::new();
        let f1 = stack(&g, &[(0, vec![0.0])]);
        let f2 = stack(&g, &[(0, vec![2.0])]);
        let fm = stack(&g, &[(0, vec![1.0])]);
        assert_eq!(perceptual_loss(&f1, &f2, &fm).unwrap().item(), Some(1.0));
    }

    #[test]
    fn mismatched_layers_are_listed() {
        let g = Graph::new();
        let a = stack(&g, &[(1, vec![1.0]), (2, vec![1.0])]);
        let b = stack(&g, &[(1, vec![1.0]), (4, vec![1.0])]);
        match perceptual_loss(&a, &a, &b) {
            Err(LossError::LayerMismatch(ids)) => assert_eq!(ids, vec![2, 4]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn layer_ids_must_increase() {
        let g = Graph::new();
        let v = g.constant(Tensor::scalar(1.0));
        let r = FeatureStack::new(vec![
            FeatureLayer { layer_id: 2, features: v },
            FeatureLayer { layer_id: 2, features: v },
        ]);
        assert!(matches!(r, Err(LossError::UnorderedLayers(_))));
    }
}
