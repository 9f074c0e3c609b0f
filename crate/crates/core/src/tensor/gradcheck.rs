use super::{Graph, Tensor, TensorError, Var};

/// Compares the tape gradient of a scalar function against central finite
/// differences and returns
/// `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
///
/// `f` is evaluated on a fresh graph for every probe, so it must be
/// deterministic.
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>, E>,
    E: From<TensorError>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(TensorError::InvalidEpsilon(eps).into());
    }
    let graph = Graph::new();
    let input = graph.param(x.clone());
    let out = f(&graph, input)?;
    let base = out
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(out.shape()))?;
    if !base.is_finite() {
        return Err(TensorError::NonFinite(format!("f(x) = {base}")).into());
    }
    graph.backward(out)?;
    let analytic = match input.grad() {
        Some(g) => g.into_data(),
        None => vec![0.0; x.numel()],
    };

    let eval = |probe: Tensor, i: usize| -> Result<f64, E> {
        let g = Graph::new();
        let v = f(&g, g.constant(probe))?;
        let y = v
            .item()
            .ok_or_else(|| TensorError::NonScalarLoss(v.shape()))?;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(TensorError::NonFinite(format!("f at perturbed coordinate {i} = {y}")).into())
        }
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * eps);
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
