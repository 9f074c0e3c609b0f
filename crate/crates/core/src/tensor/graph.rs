use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use super::kernels::{self, ConvDims};
use super::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Neg,
    Abs,
    Sqrt,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    AddScalar(f64),
    MulScalar(f64),
    PowScalar(f64),
    ClampMin(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(BinaryKind, usize, usize),
    Unary(UnaryKind, usize),
    Sum(usize),
    Mean(usize),
    Max { input: usize, argmax: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Conv2d { x: usize, k: usize, dims: ConvDims },
    Depthwise { x: usize, k: usize, dims: ConvDims },
    Downsample2x { input: usize, ch: usize, h: usize, w: usize },
    Resize { input: usize, ch: usize, h: usize, w: usize, oh: usize, ow: usize },
    Reshape(usize),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Operation tape. Node ids are assigned in evaluation order, so the tape is
/// always a topological order of the (acyclic) computation graph.
///
/// Gradients accumulate across [`Graph::backward`] calls until
/// [`Graph::zero_grad`] is called.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.graph.nodes.borrow();
        let n = &nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &n.value.shape())
            .field("op", &n.op)
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient on backward.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(Arc::new(value), true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(Arc::new(value), false)
    }

    /// Leaf sharing an existing buffer (model weights are attached this way
    /// every iteration without copying).
    pub fn leaf(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Clears every accumulated gradient buffer.
    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Reverse-mode sweep from a scalar `loss`, adding into the gradient
    /// buffer of every participating node with `requires_grad`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let root = loss.id;
        if !nodes[root].value.is_scalar() {
            return Err(TensorError::NonScalarLoss(nodes[root].value.shape().to_vec()));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        pending[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            if !nodes[id].requires_grad {
                continue;
            }
            let contributions = backward_rule(&nodes, id, &g);
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
            for (pid, pg) in contributions {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut pending[pid] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&pg) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }
}

fn backward_rule(nodes: &[Node], id: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let node = &nodes[id];
    let out = node.value.data();
    let val = |i: usize| nodes[i].value.data();
    match node.op {
        Op::Leaf => Vec::new(),
        Op::Binary(kind, a, b) => {
            let (av, bv) = (val(a), val(b));
            let n = g.len();
            let at = |i: usize| if av.len() == 1 { av[0] } else { av[i] };
            let bt = |i: usize| if bv.len() == 1 { bv[0] } else { bv[i] };
            let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let (x, y, gi) = (at(i), bt(i), g[i]);
                let (da, db) = match kind {
                    BinaryKind::Add => (1.0, 1.0),
                    BinaryKind::Sub => (1.0, -1.0),
                    BinaryKind::Mul => (y, x),
                    BinaryKind::Div => (1.0 / y, -x / (y * y)),
                    BinaryKind::Pow => {
                        let da = if x == 0.0 && y < 1.0 { 0.0 } else { y * x.powf(y - 1.0) };
                        let db = if x > 0.0 { out[i] * x.ln() } else { 0.0 };
                        (da, db)
                    }
                };
                ga[i] = gi * da;
                gb[i] = gi * db;
            }
            let fold = |v: Vec<f64>, len: usize| {
                if len == 1 && n != 1 {
                    vec![v.iter().sum()]
                } else {
                    v
                }
            };
            vec![(a, fold(ga, av.len())), (b, fold(gb, bv.len()))]
        }
        Op::Unary(kind, a) => {
            let x = val(a);
            let ga = x
                .iter()
                .zip(out)
                .zip(g)
                .map(|((&x, &y), &gi)| gi * unary_derivative(kind, x, y))
                .collect();
            vec![(a, ga)]
        }
        Op::Sum(a) => vec![(a, vec![g[0]; val(a).len()])],
        Op::Mean(a) => {
            let n = val(a).len();
            vec![(a, vec![g[0] / n as f64; n])]
        }
        Op::Max { input, argmax } => {
            let mut ga = vec![0.0; val(input).len()];
            ga[argmax] = g[0];
            vec![(input, ga)]
        }
        Op::MatMul { a, b, m, k, n } => {
            let (ga, gb) = kernels::matmul_backward(val(a), val(b), g, m, k, n);
            vec![(a, ga), (b, gb)]
        }
        Op::Conv2d { x, k, dims } => {
            let (gx, gk) = kernels::conv2d_backward(val(x), val(k), g, dims);
            vec![(x, gx), (k, gk)]
        }
        Op::Depthwise { x, k, dims } => {
            let (gx, gk) = kernels::depthwise_backward(val(x), val(k), g, dims);
            vec![(x, gx), (k, gk)]
        }
        Op::Downsample2x { input, ch, h, w } => {
            vec![(input, kernels::downsample2x_backward(g, ch, h, w))]
        }
        Op::Resize { input, ch, h, w, oh, ow } => {
            vec![(input, kernels::resize_bilinear_backward(g, ch, h, w, oh, ow))]
        }
        Op::Reshape(a) => vec![(a, g.to_vec())],
    }
}

fn unary_forward(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Abs => x.abs(),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        UnaryKind::AddScalar(c) => x + c,
        UnaryKind::MulScalar(c) => x * c,
        UnaryKind::PowScalar(p) => {
            if p == 2.0 {
                x * x
            } else {
                x.powf(p)
            }
        }
        UnaryKind::ClampMin(c) => x.max(c),
    }
}

// Where the derivative is unbounded (sqrt at 0, x^p at 0 with p < 1) the
// zero subgradient is used so clamped terms do not poison the sweep.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -1.0,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::Sqrt => {
            if y == 0.0 {
                0.0
            } else {
                0.5 / y
            }
        }
        UnaryKind::Exp => y,
        UnaryKind::Ln => 1.0 / x,
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::AddScalar(_) => 1.0,
        UnaryKind::MulScalar(c) => c,
        UnaryKind::PowScalar(p) => {
            if p == 2.0 {
                2.0 * x
            } else if x == 0.0 && p < 1.0 {
                0.0
            } else {
                p * x.powf(p - 1.0)
            }
        }
        UnaryKind::ClampMin(c) => {
            if x > c {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> Option<f64> {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    /// Accumulated gradient; `None` until a backward pass reaches this node
    /// or when the node does not require one.
    pub fn grad(&self) -> Option<Tensor> {
        self.graph.nodes.borrow()[self.id].grad.clone()
    }

    fn derived(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'g> {
        let rg = parents.iter().any(|&p| self.graph.requires(p));
        self.graph.push(Arc::new(value), op, rg)
    }

    fn binary(self, other: Var<'g>, kind: BinaryKind) -> Result<Var<'g>> {
        debug_assert!(std::ptr::eq(self.graph, other.graph));
        let (a, b) = (self.value(), other.value());
        let shape = if a.shape() == b.shape() || b.numel() == 1 {
            a.shape().to_vec()
        } else if a.numel() == 1 {
            b.shape().to_vec()
        } else {
            return Err(TensorError::ShapeMismatch {
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        };
        if kind == BinaryKind::Div && b.data().contains(&0.0) {
            return Err(TensorError::DivisionByZero);
        }
        let n = a.numel().max(b.numel());
        let (ad, bd) = (a.data(), b.data());
        let data = (0..n)
            .map(|i| {
                let x = if ad.len() == 1 { ad[0] } else { ad[i] };
                let y = if bd.len() == 1 { bd[0] } else { bd[i] };
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                    BinaryKind::Pow => x.powf(y),
                }
            })
            .collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::Binary(kind, self.id, other.id), &[self.id, other.id]))
    }

    fn unary(self, kind: UnaryKind) -> Var<'g> {
        let value = self.value().map(|x| unary_forward(kind, x));
        self.derived(value, Op::Unary(kind, self.id), &[self.id])
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Mul)
    }

    /// Errors with [`TensorError::DivisionByZero`] if any divisor element is 0.
    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn pow(self, exponent: Var<'g>) -> Result<Var<'g>> {
        self.binary(exponent, BinaryKind::Pow)
    }

    pub fn neg(self) -> Var<'g> {
        self.unary(UnaryKind::Neg)
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(UnaryKind::Abs)
    }

    pub fn sqrt(self) -> Result<Var<'g>> {
        if let Some(&bad) = self.value().data().iter().find(|&&v| v < 0.0) {
            return Err(TensorError::NegativeSqrt(bad));
        }
        Ok(self.unary(UnaryKind::Sqrt))
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(UnaryKind::Exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(UnaryKind::Ln)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(UnaryKind::AddScalar(c))
    }

    pub fn mul_scalar(self, c: f64) -> Var<'g> {
        self.unary(UnaryKind::MulScalar(c))
    }

    pub fn pow_scalar(self, p: f64) -> Var<'g> {
        self.unary(UnaryKind::PowScalar(p))
    }

    pub fn square(self) -> Var<'g> {
        self.pow_scalar(2.0)
    }

    /// max(x, c) elementwise; gradient flows only where x > c.
    pub fn clamp_min(self, c: f64) -> Var<'g> {
        self.unary(UnaryKind::ClampMin(c))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'g> {
        let v = self.value();
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.derived(Tensor::scalar(m), Op::Mean(self.id), &[self.id])
    }

    /// Gradient is routed to the first maximal element only.
    pub fn max(self) -> Var<'g> {
        let v = self.value();
        let (argmax, best) = v
            .data()
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc });
        self.derived(
            Tensor::scalar(best),
            Op::Max {
                input: self.id,
                argmax,
            },
            &[self.id],
        )
    }

    /// Inner product of two equally shaped nodes.
    pub fn dot(self, other: Var<'g>) -> Result<Var<'g>> {
        Ok(self.mul(other)?.sum())
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(a.data(), b.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.derived(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            &[self.id, other.id],
        ))
    }

    /// Valid cross-correlation of `self` `[c, h, w]` with `kernel`
    /// `[o, c, kh, kw]` (or `[c, kh, kw]`, treated as `o = 1`), summing over
    /// input channels. Output is `[o, (h-kh)/stride+1, (w-kw)/stride+1]`.
    pub fn conv2d(self, kernel: Var<'g>, stride: usize) -> Result<Var<'g>> {
        let (x, k) = (self.value(), kernel.value());
        let xs = chw(x.shape(), "conv2d")?;
        let ks = k.shape();
        let (o, c, kh, kw) = match *ks {
            [o, c, kh, kw] => (o, c, kh, kw),
            [c, kh, kw] => (1, c, kh, kw),
            _ => {
                return Err(TensorError::Rank {
                    op: "conv2d kernel",
                    expected: "3 or 4",
                    shape: ks.to_vec(),
                })
            }
        };
        if c != xs.0 {
            return Err(TensorError::ShapeMismatch {
                left: x.shape().to_vec(),
                right: ks.to_vec(),
            });
        }
        let dims = conv_dims(o, xs, kh, kw, stride, x.shape(), ks)?;
        let data = kernels::conv2d(x.data(), k.data(), dims);
        let value = Tensor::new(vec![o, dims.out_h(), dims.out_w()], data)?;
        Ok(self.derived(
            value,
            Op::Conv2d {
                x: self.id,
                k: kernel.id,
                dims,
            },
            &[self.id, kernel.id],
        ))
    }

    /// Applies one `[kh, kw]` kernel to every channel of `[c, h, w]` (or to a
    /// single `[h, w]` plane) with valid padding.
    pub fn depthwise_conv2d(self, kernel: Var<'g>, stride: usize) -> Result<Var<'g>> {
        let (x, k) = (self.value(), kernel.value());
        let xs = chw(x.shape(), "depthwise_conv2d")?;
        let ks = k.shape();
        let [kh, kw] = *ks else {
            return Err(TensorError::Rank {
                op: "depthwise_conv2d kernel",
                expected: "2",
                shape: ks.to_vec(),
            });
        };
        let dims = conv_dims(xs.0, xs, kh, kw, stride, x.shape(), ks)?;
        let data = kernels::depthwise(x.data(), k.data(), dims);
        let shape = if x.shape().len() == 2 {
            vec![dims.out_h(), dims.out_w()]
        } else {
            vec![xs.0, dims.out_h(), dims.out_w()]
        };
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(
            value,
            Op::Depthwise {
                x: self.id,
                k: kernel.id,
                dims,
            },
            &[self.id, kernel.id],
        ))
    }

    /// 2×2 average pooling, stride 2, on `[h, w]` or `[c, h, w]`.
    pub fn downsample2x(self) -> Result<Var<'g>> {
        let x = self.value();
        let (ch, h, w) = chw(x.shape(), "downsample2x")?;
        if h < 2 || w < 2 {
            return Err(TensorError::KernelTooLarge {
                kernel: vec![2, 2],
                input: x.shape().to_vec(),
            });
        }
        let data = kernels::downsample2x(x.data(), ch, h, w);
        let mut shape = x.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = h / 2;
        shape[r - 1] = w / 2;
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(
            value,
            Op::Downsample2x {
                input: self.id,
                ch,
                h,
                w,
            },
            &[self.id],
        ))
    }

    /// Corner-aligned bilinear resize of `[c, h, w]` to `[c, oh, ow]`.
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Result<Var<'g>> {
        let x = self.value();
        let (ch, h, w) = chw(x.shape(), "resize_bilinear")?;
        if oh == 0 || ow == 0 {
            return Err(TensorError::InvalidShape(vec![ch, oh, ow]));
        }
        let data = kernels::resize_bilinear(x.data(), ch, h, w, oh, ow);
        let mut shape = x.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(
            value,
            Op::Resize {
                input: self.id,
                ch,
                h,
                w,
                oh,
                ow,
            },
            &[self.id],
        ))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'g>> {
        let value = self.value().reshape(shape)?;
        Ok(self.derived(value, Op::Reshape(self.id), &[self.id]))
    }
}

fn chw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::Rank {
            op,
            expected: "2 or 3",
            shape: shape.to_vec(),
        }),
    }
}

fn conv_dims(
    out_ch: usize,
    (in_ch, h, w): (usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    xs: &[usize],
    ks: &[usize],
) -> Result<ConvDims> {
    if stride == 0 {
        return Err(TensorError::InvalidStride);
    }
    if kh > h || kw > w {
        return Err(TensorError::KernelTooLarge {
            kernel: ks.to_vec(),
            input: xs.to_vec(),
        });
    }
    Ok(ConvDims {
        out_ch,
        in_ch,
        h,
        w,
        kh,
        kw,
        stride,
    })
}
