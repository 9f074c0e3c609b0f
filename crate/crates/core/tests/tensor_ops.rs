use morphbench::tensor::{grad_check, Graph, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn check<F>(name: &str, f: F, x: &Tensor)
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>, TensorError>,
{
    let err = grad_check(f, x, EPS).unwrap();
    assert!(err < TOL, "{name}: max relative gradient error {err:e}");
}

const UNARY: [&str; 12] = [
    "neg", "abs", "sqrt", "exp", "ln", "tanh", "sigmoid", "add_scalar", "mul_scalar", "pow_scalar", "square",
    "clamp_min",
];

fn unary<'g>(k: usize, v: Var<'g>) -> Result<Var<'g>, TensorError> {
    Ok(match k {
        0 => v.neg(),
        // shifted so the kink sits between samples
        1 => v.add_scalar(-0.85).abs(),
        2 => v.sqrt()?,
        3 => v.exp(),
        4 => v.ln(),
        5 => v.tanh(),
        6 => v.sigmoid(),
        7 => v.add_scalar(3.0),
        8 => v.mul_scalar(-2.5),
        9 => v.pow_scalar(1.7),
        10 => v.square(),
        _ => v.clamp_min(0.9),
    })
}

fn binary<'g>(k: usize, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>, TensorError> {
    match k {
        0 => a.add(b),
        1 => a.sub(b),
        2 => a.mul(b),
        3 => a.div(b),
        _ => a.pow(b),
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[2, 3, 4], 0.2, 1.5);
    let w = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let pos = rand_tensor(&mut rng, &[2, 3, 4], 0.5, 2.0);

    // weighting by w keeps every element's gradient distinct
    for (k, name) in UNARY.iter().enumerate() {
        check(name, |g, v| unary(k, v)?.mul(g.constant(w.clone())).map(Var::sum), &x);
    }

    for (name, kind) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3), ("pow", 4)] {
        let other = pos.clone();
        // w.r.t. the left operand, then the right one
        check(name, |g, v| binary(kind, v, g.constant(other.clone()))?.mul(g.constant(w.clone())).map(Var::sum), &x);
        check(name, |g, v| binary(kind, g.constant(x.clone()), v)?.mul(g.constant(w.clone())).map(Var::sum), &pos);
        // scalar broadcast on either side
        let s = Tensor::scalar(1.3);
        check(name, |g, v| binary(kind, v, g.constant(s.clone()))?.mul(g.constant(w.clone())).map(Var::sum), &x);
        check(name, |g, v| binary(kind, g.constant(x.clone()), v)?.mul(g.constant(w.clone())).map(Var::sum), &s);
    }
}

#[test]
fn reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    check("sum", |_, v| Ok(v.square().sum()), &x);
    check("mean", |_, v| Ok(v.tanh().mean()), &x);
    check("max", |_, v| Ok(v.mul_scalar(3.0).max()), &x);
    let y = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    check("dot", |g, v| v.dot(g.constant(y.clone())), &x);
    check("reshape", |g, v| Ok(v.reshape(vec![5, 3])?.matmul(g.constant(y.clone()))?.square().sum()), &x);
}

#[test]
fn structured_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    check("matmul lhs", |g, v| Ok(v.matmul(g.constant(b.clone()))?.square().sum()), &a);
    check("matmul rhs", |g, v| Ok(g.constant(a.clone()).matmul(v)?.square().sum()), &b);

    let img = rand_tensor(&mut rng, &[2, 9, 8], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    for stride in [1, 2] {
        check("conv2d input", |g, v| Ok(v.conv2d(g.constant(k.clone()), stride)?.square().sum()), &img);
        check("conv2d kernel", |g, v| Ok(g.constant(img.clone()).conv2d(v, stride)?.square().sum()), &k);
    }
    let dk = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    check("depthwise input", |g, v| Ok(v.depthwise_conv2d(g.constant(dk.clone()), 1)?.square().sum()), &img);
    check("depthwise kernel", |g, v| Ok(g.constant(img.clone()).depthwise_conv2d(v, 2)?.square().sum()), &dk);
    check("downsample2x", |_, v| Ok(v.downsample2x()?.square().sum()), &img);
    check("resize up", |_, v| Ok(v.resize_bilinear(13, 11)?.square().sum()), &img);
    check("resize down", |_, v| Ok(v.resize_bilinear(4, 5)?.square().sum()), &img);
}

/// Direct loop implementation of valid, strided multi-channel correlation.
fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (oh, ow) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for ic in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            s += x.data()[ic * h * w + (i * stride + u) * w + j * stride + v]
                                * k.data()[((oc * c + ic) * kh + u) * kw + v];
                        }
                    }
                }
                out[(oc * oh + i) * ow + j] = s;
            }
        }
    }
    Tensor::new(vec![o, oh, ow], out).unwrap()
}

#[test]
fn forward_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = Graph::new();
    let x = rand_tensor(&mut rng, &[3, 11, 10], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[4, 3, 3, 2], -1.0, 1.0);
    for stride in [1, 2, 3] {
        let got = g.constant(x.clone()).conv2d(g.constant(k.clone()), stride).unwrap().value();
        let want = conv_oracle(&x, &k, stride);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let got = g.constant(a.clone()).matmul(g.constant(b.clone())).unwrap().value();
    for i in 0..3 {
        for j in 0..5 {
            let want: f64 = (0..4).map(|t| a.data()[i * 4 + t] * b.data()[t * 5 + j]).sum();
            assert!((got.data()[i * 5 + j] - want).abs() < 1e-12);
        }
    }

    // identity resize and corner alignment
    let img = rand_tensor(&mut rng, &[2, 6, 7], 0.0, 1.0);
    let same = g.constant(img.clone()).resize_bilinear(6, 7).unwrap().value();
    assert_eq!(*same, img);
    let up = g.constant(img.clone()).resize_bilinear(11, 13).unwrap().value();
    for c in 0..2 {
        assert_eq!(up.data()[c * 143], img.data()[c * 42]);
        assert_eq!(up.data()[c * 143 + 142], img.data()[c * 42 + 41]);
        // the middle row of an odd upsampling lands on a source row
        assert!((up.data()[c * 143 + 10 * 13] - img.data()[c * 42 + 5 * 7]).abs() < 1e-15);
    }

    let ds = g.constant(img.clone()).downsample2x().unwrap().value();
    assert_eq!(ds.shape(), &[2, 3, 3]);
    let want = (img.data()[0] + img.data()[1] + img.data()[7] + img.data()[8]) / 4.0;
    assert!((ds.data()[0] - want).abs() < 1e-15);
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let loss = x.square().sum();
    g.backward(loss).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[4.0, 8.0]);
    g.zero_grad();
    g.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    // constants never receive a gradient
    let c = g.constant(Tensor::scalar(1.0));
    g.backward(c.mul(x.sum()).unwrap()).unwrap();
    assert!(c.grad().is_none());
}

#[test]
fn error_paths() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
    let b = g.constant(Tensor::zeros(vec![3, 2]).unwrap());
    assert!(matches!(a.add(b), Err(TensorError::ShapeMismatch { .. })));
    assert!(matches!(a.matmul(a), Err(TensorError::ShapeMismatch { .. })));
    assert_eq!(a.div(b.reshape(vec![2, 3]).unwrap()).unwrap_err(), TensorError::DivisionByZero);
    let neg = g.constant(Tensor::vector(vec![-1.0]).unwrap());
    assert!(matches!(neg.sqrt(), Err(TensorError::NegativeSqrt(_))));
    assert!(matches!(g.backward(a), Err(TensorError::NonScalarLoss(_))));
    assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    assert!(matches!(Tensor::new(vec![2], vec![1.0]), Err(TensorError::DataLength { .. })));
    let img = g.constant(Tensor::zeros(vec![1, 2, 2]).unwrap());
    let k = g.constant(Tensor::zeros(vec![1, 1, 3, 3]).unwrap());
    assert!(matches!(img.conv2d(k, 1), Err(TensorError::KernelTooLarge { .. })));
    assert!(grad_check(|_, v: Var<'_>| Ok::<_, TensorError>(v.sum()), &Tensor::scalar(1.0), 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_of_linear_form_is_its_coefficients(
        coef in proptest::collection::vec(-5.0f64..5.0, 1..20),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = coef.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = Graph::new();
        let xv = g.param(Tensor::vector(x).unwrap());
        let loss = xv.dot(g.constant(Tensor::vector(coef.clone()).unwrap())).unwrap();
        g.backward(loss).unwrap();
        let grad = xv.grad().unwrap();
        prop_assert_eq!(grad.data(), coef.as_slice());
    }

    #[test]
    fn chain_rule_matches_finite_differences(
        x in proptest::collection::vec(-2.0f64..2.0, 1..12),
    ) {
        let t = Tensor::vector(x).unwrap();
        let err = grad_check(
            |g, v| Ok::<_, TensorError>(v.tanh().mul(v.sigmoid())?.add(g.scalar(0.5))?.square().mean()),
            &t,
            EPS,
        ).unwrap();
        prop_assert!(err < TOL);
    }
}
