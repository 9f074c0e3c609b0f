//! Gaussian-windowed SSIM components and the multi-scale combination.
//!
//! Statistics are taken over "valid" windows only. Images may be `[h, w]`
//! or `[c, h, w]`; for multi-channel input every channel's windows are
//! pooled into the same mean.

use crate::tensor::{Graph, Tensor, TensorError, Var};

use super::LossError;

/// Relative importance of the five dyadic scales, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimParams {
    weights: Vec<f64>,
    window_size: usize,
    sigma: f64,
    k1: f64,
    k2: f64,
    dynamic_range: f64,
    reduce_scales: bool,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        Self::new(MS_SSIM_WEIGHTS.to_vec(), 11, 1.5, 0.01, 0.03, 1.0)
            .expect("default parameters are valid")
    }
}

impl MsSsimParams {
    /// `weights` are the shared α_j = β_j = γ_j exponents. They must sum to
    /// 1 within 1e-3 and are rescaled to sum to exactly 1.
    pub fn new(
        weights: Vec<f64>,
        window_size: usize,
        sigma: f64,
        k1: f64,
        k2: f64,
        dynamic_range: f64,
    ) -> Result<Self, LossError> {
        let bad = |m: String| Err(LossError::InvalidParams(m));
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return bad(format!("scale weights must be positive, got {weights:?}"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-3 {
            return bad(format!("scale weights sum to {total}, expected 1"));
        }
        if window_size == 0 {
            return bad("window size must be positive".into());
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return bad(format!("window sigma {sigma}"));
        }
        if !(k1 > 0.0 && k1 < 0.1) || !(k2 > 0.0 && k2 < 0.1) {
            return bad(format!("K1={k1}, K2={k2} must lie in (0, 0.1)"));
        }
        if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
            return bad(format!("dynamic range {dynamic_range}"));
        }
        Ok(Self {
            weights: weights.iter().map(|w| w / total).collect(),
            window_size,
            sigma,
            k1,
            k2,
            dynamic_range,
            reduce_scales: true,
        })
    }

    /// Fail instead of dropping coarse scales when the image is too small.
    pub fn strict(mut self) -> Self {
        self.reduce_scales = false;
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    /// Minimum image side for `scales` dyadic levels.
    pub fn required_side(&self, scales: usize) -> usize {
        self.window_size << (scales.saturating_sub(1))
    }

    /// Number of scales usable for an image whose smaller side is `side`.
    pub fn effective_scales(&self, side: usize) -> Result<usize, LossError> {
        let j = self.scales();
        if side >= self.required_side(j) {
            return Ok(j);
        }
        let fits = (1..j).rev().find(|&s| side >= self.required_side(s));
        match fits {
            Some(s) if self.reduce_scales => Ok(s),
            _ => Err(LossError::ImageTooSmall {
                shape: vec![side, side],
                required: self.required_side(if self.reduce_scales { 1 } else { j }),
                scales: if self.reduce_scales { 1 } else { j },
            }),
        }
    }

    /// Exponents of the first `scales` levels, renormalised to sum to 1.
    pub fn exponents(&self, scales: usize) -> Vec<f64> {
        let kept = &self.weights[..scales.min(self.weights.len())];
        let total: f64 = kept.iter().sum();
        kept.iter().map(|w| w / total).collect()
    }
}

/// Normalised 1-D Gaussian taps; the 2-D window is its outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - centre;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Per-window luminance, contrast and structure maps.
#[derive(Debug, Clone, Copy)]
pub struct SsimMaps<'g> {
    pub l: Var<'g>,
    pub c: Var<'g>,
    pub s: Var<'g>,
}

struct Window<'g> {
    row: Var<'g>,
    col: Var<'g>,
}

impl<'g> Window<'g> {
    fn new(graph: &'g Graph, params: &MsSsimParams) -> Self {
        let taps = gaussian_window(params.window_size, params.sigma);
        let n = taps.len();
        let row = graph.constant(Tensor::new(vec![1, n], taps.clone()).expect("window"));
        let col = graph.constant(Tensor::new(vec![n, 1], taps).expect("window"));
        Self { row, col }
    }

    // separable valid filtering
    fn filter(&self, x: Var<'g>) -> Result<Var<'g>, TensorError> {
        x.depthwise_conv2d(self.row, 1)?.depthwise_conv2d(self.col, 1)
    }
}

fn spatial(shape: &[usize]) -> Result<(usize, usize), LossError> {
    match *shape {
        [h, w] | [_, h, w] => Ok((h, w)),
        _ => Err(TensorError::Rank {
            op: "ssim",
            expected: "2 or 3",
            shape: shape.to_vec(),
        }
        .into()),
    }
}

fn check_pair(x: &Var, y: &Var) -> Result<(usize, usize), LossError> {
    let (xs, ys) = (x.shape(), y.shape());
    if xs != ys {
        return Err(TensorError::ShapeMismatch {
            left: xs,
            right: ys,
        }
        .into());
    }
    spatial(&xs)
}

fn components<'g>(
    x: Var<'g>,
    y: Var<'g>,
    window: &Window<'g>,
    params: &MsSsimParams,
) -> Result<SsimMaps<'g>, LossError> {
    let (c1, c2, c3) = (params.c1(), params.c2(), params.c3());
    let mu_x = window.filter(x)?;
    let mu_y = window.filter(y)?;
    let mu_xx = mu_x.square();
    let mu_yy = mu_y.square();
    let mu_xy = mu_x.mul(mu_y)?;
    // Rounding can push E[x²]−μ² slightly below zero on flat regions.
    let var_x = window.filter(x.square())?.sub(mu_xx)?.clamp_min(0.0);
    let var_y = window.filter(y.square())?.sub(mu_yy)?.clamp_min(0.0);
    let cov = window.filter(x.mul(y)?)?.sub(mu_xy)?;
    let sd_xy = var_x.sqrt()?.mul(var_y.sqrt()?)?;

    let l = mu_xy
        .mul_scalar(2.0)
        .add_scalar(c1)
        .div(mu_xx.add(mu_yy)?.add_scalar(c1))?;
    let c = sd_xy
        .mul_scalar(2.0)
        .add_scalar(c2)
        .div(var_x.add(var_y)?.add_scalar(c2))?;
    let s = cov.add_scalar(c3).div(sd_xy.add_scalar(c3))?;
    Ok(SsimMaps { l, c, s })
}

/// l, c, s maps of a single scale.
pub fn ssim_components<'g>(
    x: Var<'g>,
    y: Var<'g>,
    params: &MsSsimParams,
) -> Result<SsimMaps<'g>, LossError> {
    let (h, w) = check_pair(&x, &y)?;
    if h.min(w) < params.window_size {
        return Err(LossError::ImageTooSmall {
            shape: x.shape(),
            required: params.window_size,
            scales: 1,
        });
    }
    let window = Window::new(x.graph(), params);
    components(x, y, &window, params)
}

/// Single-scale SSIM: mean over windows of l·c·s.
pub fn ssim_global(x: &Tensor, y: &Tensor, params: &MsSsimParams) -> Result<f64, LossError> {
    let g = Graph::new();
    let maps = ssim_components(g.constant(x.clone()), g.constant(y.clone()), params)?;
    let v = maps.l.mul(maps.c)?.mul(maps.s)?.mean();
    Ok(v.item().expect("scalar"))
}

/// [l_J]^{α_J} · Π_j [c_j]^{β_j} [s_j]^{γ_j}, where each factor is the mean
/// of its map at scale j and scale j+1 is the 2×2-pooled scale j. Factors
/// are clamped at 0 before the fractional power.
pub fn ms_ssim<'g>(x: Var<'g>, y: Var<'g>, params: &MsSsimParams) -> Result<Var<'g>, LossError> {
    let (h, w) = check_pair(&x, &y)?;
    let scales = params.effective_scales(h.min(w)).map_err(|e| match e {
        LossError::ImageTooSmall { required, scales, .. } => LossError::ImageTooSmall {
            shape: x.shape(),
            required,
            scales,
        },
        other => other,
    })?;
    let exps = params.exponents(scales);
    let window = Window::new(x.graph(), params);
    let (mut xs, mut ys) = (x, y);
    let mut acc: Option<Var<'g>> = None;
    for (j, &e) in exps.iter().enumerate() {
        let maps = components(xs, ys, &window, params)?;
        let mut factor = maps
            .c
            .mean()
            .clamp_min(0.0)
            .pow_scalar(e)
            .mul(maps.s.mean().clamp_min(0.0).pow_scalar(e))?;
        if j + 1 == scales {
            factor = factor.mul(maps.l.mean().clamp_min(0.0).pow_scalar(e))?;
        } else {
            xs = xs.downsample2x()?;
            ys = ys.downsample2x()?;
        }
        acc = Some(match acc {
            Some(a) => a.mul(factor)?,
            None => factor,
        });
    }
    Ok(acc.expect("at least one scale"))
}

/// Plain-value MS-SSIM.
pub fn ms_ssim_value(x: &Tensor, y: &Tensor, params: &MsSsimParams) -> Result<f64, LossError> {
    let g = Graph::new();
    let v = ms_ssim(g.constant(x.clone()), g.constant(y.clone()), params)?;
    Ok(v.item().expect("scalar"))
}

/// ½(1 − MSSSIM(I₁, I'ₘ)) + ½(1 − MSSSIM(I₂, I'ₘ))
pub fn ms_ssim_loss<'g>(
    i1: Var<'g>,
    i2: Var<'g>,
    im: Var<'g>,
    params: &MsSsimParams,
) -> Result<Var<'g>, LossError> {
    let a = ms_ssim(i1, im, params)?;
    let b = ms_ssim(i2, im, params)?;
    Ok(halved_dissimilarity(a, b)?)
}

fn halved_dissimilarity<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>, TensorError> {
    let da = a.neg().add_scalar(1.0);
    let db = b.neg().add_scalar(1.0);
    Ok(da.add(db)?.mul_scalar(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::new(vec![h, w], data).unwrap()
    }

    #[test]
    fn paper_weights_renormalised() {
        let p = MsSsimParams::default();
        let raw: f64 = MS_SSIM_WEIGHTS.iter().sum();
        assert!((raw - 1.0001).abs() < 1e-12);
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for (w, r) in p.weights().iter().zip(MS_SSIM_WEIGHTS) {
            assert!((w / r - 1.0 / raw).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(MsSsimParams::new(vec![0.5, 0.4], 11, 1.5, 0.01, 0.03, 1.0).is_err());
        assert!(MsSsimParams::new(vec![1.0], 11, 1.5, 0.2, 0.03, 1.0).is_err());
        assert!(MsSsimParams::new(vec![1.0], 11, 1.5, 0.01, 0.3, 1.0).is_err());
    }

    #[test]
    fn scale_reduction() {
        let p = MsSsimParams::default();
        assert_eq!(p.effective_scales(176).unwrap(), 5);
        assert_eq!(p.effective_scales(175).unwrap(), 4);
        assert_eq!(p.effective_scales(64).unwrap(), 3);
        assert_eq!(p.effective_scales(11).unwrap(), 1);
        assert!(p.effective_scales(10).is_err());
        assert!(p.clone().strict().effective_scales(64).is_err());
        let e = p.exponents(3);
        assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((e[1] / e[0] - 0.2856 / 0.0448).abs() < 1e-12);
    }

    #[test]
    fn self_comparison_components_are_one() {
        let x = ramp(16, 16, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let g = Graph::new();
        let xv = g.constant(x);
        let m = ssim_components(xv, xv, &MsSsimParams::default()).unwrap();
        for map in [m.l, m.c, m.s] {
            assert_eq!(map.shape(), vec![6, 6]);
            for v in map.value().data() {
                assert!((v - 1.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn flat_black_images_are_identical() {
        let z = Tensor::zeros(vec![12, 12]).unwrap();
        let g = Graph::new();
        let zv = g.constant(z);
        let m = ssim_components(zv, zv, &MsSsimParams::default()).unwrap();
        for map in [m.l, m.c, m.s] {
            assert!(map.value().data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn too_small_for_window() {
        let x = Tensor::zeros(vec![10, 12]).unwrap();
        let r = ssim_global(&x, &x, &MsSsimParams::default());
        assert!(matches!(r, Err(LossError::ImageTooSmall { .. })));
    }

    #[test]
    fn inverted_image_scores_lower() {
        let x = ramp(48, 48, |i, j| ((i * 13 + j * 29) % 17) as f64 / 16.0);
        let inv = x.map(|v| 1.0 - v);
        let p = MsSsimParams::default();
        let same = ms_ssim_value(&x, &x, &p).unwrap();
        let other = ms_ssim_value(&x, &inv, &p).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        assert!(other < same);
    }

    #[test]
    fn loss_combines_both_parents() {
        let g = Graph::new();
        let v = halved_dissimilarity(g.scalar(0.8), g.scalar(0.6)).unwrap();
        assert!((v.item().unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn loss_arithmetic() {
        let x = ramp(24, 24, |i, j| ((i + 2 * j) % 5) as f64 / 4.0);
        let g = Graph::new();
        let xv = g.constant(x);
        let l = ms_ssim_loss(xv, xv, xv, &MsSsimParams::default()).unwrap();
        assert!(l.item().unwrap().abs() < 1e-12);
    }
}
