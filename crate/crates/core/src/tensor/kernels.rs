// Raw forward/adjoint loops shared by the graph ops. Shapes are validated by
// the callers in graph.rs.

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// dA = G·Bᵀ, dB = Aᵀ·G
pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    g: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let gbrow = &mut gb[p * n..(p + 1) * n];
            for (o, &gv) in gbrow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    (ga, gb)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub out_ch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.h - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - self.kw) / self.stride + 1
    }
}

/// Valid cross-correlation summing over input channels.
/// x: [in_ch, h, w], k: [out_ch, in_ch, kh, kw] -> [out_ch, oh, ow]
pub(crate) fn conv2d(x: &[f64], k: &[f64], d: ConvDims) -> Vec<f64> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut out = vec![0.0; d.out_ch * oh * ow];
    for o in 0..d.out_ch {
        let out_plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..d.in_ch {
            let x_plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            let k_base = (o * d.in_ch + c) * d.kh * d.kw;
            correlate_plane(x_plane, &k[k_base..k_base + d.kh * d.kw], out_plane, d, oh, ow);
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    g: &[f64],
    d: ConvDims,
) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for o in 0..d.out_ch {
        let g_plane = &g[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..d.in_ch {
            let x_plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            let gx_plane = &mut gx[c * d.h * d.w..(c + 1) * d.h * d.w];
            let k_base = (o * d.in_ch + c) * d.kh * d.kw;
            plane_adjoint(
                x_plane,
                &k[k_base..k_base + d.kh * d.kw],
                g_plane,
                gx_plane,
                &mut gk[k_base..k_base + d.kh * d.kw],
                d,
                oh,
                ow,
            );
        }
    }
    (gx, gk)
}

/// Same 2-D kernel applied to each channel independently.
/// x: [ch, h, w], k: [kh, kw] -> [ch, oh, ow]
pub(crate) fn depthwise(x: &[f64], k: &[f64], d: ConvDims) -> Vec<f64> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut out = vec![0.0; d.in_ch * oh * ow];
    for c in 0..d.in_ch {
        correlate_plane(
            &x[c * d.h * d.w..(c + 1) * d.h * d.w],
            k,
            &mut out[c * oh * ow..(c + 1) * oh * ow],
            d,
            oh,
            ow,
        );
    }
    out
}

pub(crate) fn depthwise_backward(
    x: &[f64],
    k: &[f64],
    g: &[f64],
    d: ConvDims,
) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for c in 0..d.in_ch {
        plane_adjoint(
            &x[c * d.h * d.w..(c + 1) * d.h * d.w],
            k,
            &g[c * oh * ow..(c + 1) * oh * ow],
            &mut gx[c * d.h * d.w..(c + 1) * d.h * d.w],
            &mut gk,
            d,
            oh,
            ow,
        );
    }
    (gx, gk)
}

fn correlate_plane(x: &[f64], k: &[f64], out: &mut [f64], d: ConvDims, oh: usize, ow: usize) {
    for u in 0..d.kh {
        for v in 0..d.kw {
            let kv = k[u * d.kw + v];
            if kv == 0.0 {
                continue;
            }
            for i in 0..oh {
                let xrow = &x[(i * d.stride + u) * d.w..];
                let orow = &mut out[i * ow..(i + 1) * ow];
                if d.stride == 1 {
                    for (o, &xv) in orow.iter_mut().zip(&xrow[v..v + ow]) {
                        *o += kv * xv;
                    }
                } else {
                    for (j, o) in orow.iter_mut().enumerate() {
                        *o += kv * xrow[j * d.stride + v];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn plane_adjoint(
    x: &[f64],
    k: &[f64],
    g: &[f64],
    gx: &mut [f64],
    gk: &mut [f64],
    d: ConvDims,
    oh: usize,
    ow: usize,
) {
    for u in 0..d.kh {
        for v in 0..d.kw {
            let kv = k[u * d.kw + v];
            let mut acc = 0.0;
            for i in 0..oh {
                let base = (i * d.stride + u) * d.w;
                let grow = &g[i * ow..(i + 1) * ow];
                for (j, &gv) in grow.iter().enumerate() {
                    let idx = base + j * d.stride + v;
                    acc += gv * x[idx];
                    gx[idx] += gv * kv;
                }
            }
            gk[u * d.kw + v] += acc;
        }
    }
}

/// 2×2 mean pooling with stride 2 over the last two axes; odd trailing
/// row/column dropped.
pub(crate) fn downsample2x(x: &[f64], ch: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let p = &x[c * h * w..(c + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (r, s) = (2 * i, 2 * j);
                out.push(
                    0.25 * (p[r * w + s] + p[r * w + s + 1] + p[(r + 1) * w + s] + p[(r + 1) * w + s + 1]),
                );
            }
        }
    }
    out
}

pub(crate) fn downsample2x_backward(g: &[f64], ch: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut gx = vec![0.0; ch * h * w];
    for c in 0..ch {
        for i in 0..oh {
            for j in 0..ow {
                let gv = 0.25 * g[c * oh * ow + i * ow + j];
                let (r, s) = (2 * i, 2 * j);
                let base = c * h * w;
                gx[base + r * w + s] += gv;
                gx[base + r * w + s + 1] += gv;
                gx[base + (r + 1) * w + s] += gv;
                gx[base + (r + 1) * w + s + 1] += gv;
            }
        }
    }
    gx
}

/// Source index pair and weight of the upper neighbour for each output
/// coordinate (corner-aligned linear interpolation).
pub(crate) fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub(crate) fn resize_bilinear(
    x: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let rows = linear_taps(h, oh);
    let cols = linear_taps(w, ow);
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let p = &x[c * h * w..(c + 1) * h * w];
        for &(r0, r1, fr) in &rows {
            for &(c0, c1, fc) in &cols {
                let top = p[r0 * w + c0] * (1.0 - fc) + p[r0 * w + c1] * fc;
                let bot = p[r1 * w + c0] * (1.0 - fc) + p[r1 * w + c1] * fc;
                out.push(top * (1.0 - fr) + bot * fr);
            }
        }
    }
    out
}

pub(crate) fn resize_bilinear_backward(
    g: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let rows = linear_taps(h, oh);
    let cols = linear_taps(w, ow);
    let mut gx = vec![0.0; ch * h * w];
    for c in 0..ch {
        let gp = &mut gx[c * h * w..(c + 1) * h * w];
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let gv = g[c * oh * ow + i * ow + j];
                gp[r0 * w + c0] += gv * (1.0 - fr) * (1.0 - fc);
                gp[r0 * w + c1] += gv * (1.0 - fr) * fc;
                gp[r1 * w + c0] += gv * fr * (1.0 - fc);
                gp[r1 * w + c1] += gv * fr * fc;
            }
        }
    }
    gx
}
