//! Reverse-mode autodiff tape.
//!
//! Every value produced during a forward pass is appended to the tape as a
//! node. Nodes that depend on a `requires_grad` leaf also record the operation
//! that produced them; [`Tape::backward`] walks those records in reverse
//! insertion order, which is a valid reverse topological order because inputs
//! always precede outputs.

use crate::error::{Result, TensorError};
use crate::kernels::conv::{self, ConvAlgo, ConvGeom};
use crate::kernels::norm::{self, BnSaved};
use crate::kernels::pool;
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        algo: ConvAlgo,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    MaxPool {
        x: Var,
        arg: Vec<usize>,
    },
    AvgPoolSpatial(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    ConcatChannels(Vec<Var>),
    Sum(Vec<Var>),
    Mul(Var, Var),
    Scale {
        x: Var,
        factor: T,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    IndexAdd {
        x: Var,
        indices: Vec<usize>,
    },
    RowScale {
        x: Var,
        factors: Vec<T>,
    },
    Gather {
        x: Var,
        index: Vec<Option<usize>>,
    },
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    AucRanking {
        logits: Var,
        targets: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Dropout { .. } => "dropout",
            Op::MaxPool { .. } => "max_pool2d",
            Op::AvgPoolSpatial(_) => "avg_pool_spatial",
            Op::Linear { .. } => "linear",
            Op::ConcatChannels(_) => "concat_channels",
            Op::Sum(_) => "sum",
            Op::Mul(..) => "mul",
            Op::Scale { .. } => "scale",
            Op::IndexSelect { .. } => "index_select",
            Op::IndexAdd { .. } => "index_add",
            Op::RowScale { .. } => "row_scale",
            Op::Gather { .. } => "gather",
            Op::SumAll(_) => "sum_all",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::AucRanking { .. } => "auc_ranking_loss",
            Op::Mse { .. } => "mse",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu(x) | Op::Sigmoid(x) | Op::AvgPoolSpatial(x) | Op::SumAll(x) => vec![*x],
            Op::Dropout { x, .. }
            | Op::MaxPool { x, .. }
            | Op::Scale { x, .. }
            | Op::IndexSelect { x, .. }
            | Op::IndexAdd { x, .. }
            | Op::RowScale { x, .. }
            | Op::Gather { x, .. } => vec![*x],
            Op::ConcatChannels(xs) | Op::Sum(xs) => xs.clone(),
            Op::Mul(a, b) => vec![*a, *b],
            Op::CrossEntropy { logits, .. } | Op::AucRanking { logits, .. } => vec![*logits],
            Op::Mse { pred, .. } => vec![*pred],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Op<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    conv_algo: ConvAlgo,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            conv_algo: ConvAlgo::default(),
            consumed: false,
        }
    }

    pub fn with_conv_algo(mut self, algo: ConvAlgo) -> Self {
        self.conv_algo = algo;
        self
    }

    pub fn conv_algo(&self) -> ConvAlgo {
        self.conv_algo
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Appends the result of `op`. The operation is kept for backward only
    /// when one of its inputs requires grad.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: requires_grad.then_some(op),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Back-propagates from a scalar `loss`. A tape supports one backward
    /// pass; build a fresh tape for the next step.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.requires_grad(loss) {
            return Err(TensorError::Detached);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(op) = &self.nodes[i].op {
                for (input, dx) in self.op_backward(op, &self.nodes[i].value, &g) {
                    accumulate(&mut grads, &self.nodes, input, dx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn op_backward(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let dy = g.data();
        let mut res = Vec::new();
        match op {
            Op::Conv2d { x, w, b, geom, algo } => {
                let need = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                let grads = conv::conv2d_backward(
                    *algo,
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy,
                    need,
                );
                if let Some(dx) = grads.dx {
                    res.push((*x, raw(self.shape(*x), dx)));
                }
                if let Some(dw) = grads.dw {
                    res.push((*w, raw(self.shape(*w), dw)));
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    res.push((*b, raw(self.shape(*b), db)));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                train,
            } => {
                let (dx, dgamma, dbeta) = norm::bn_backward(
                    self.shape(*x),
                    dy,
                    self.value(*gamma).data(),
                    saved,
                    *train,
                );
                res.push((*x, raw(self.shape(*x), dx)));
                res.push((*gamma, raw(self.shape(*gamma), dgamma)));
                res.push((*beta, raw(self.shape(*beta), dbeta)));
            }
            Op::Relu(x) => {
                let d = out
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
                    .collect();
                res.push((*x, raw(out.shape(), d)));
            }
            Op::Sigmoid(x) => {
                let d = out
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                res.push((*x, raw(out.shape(), d)));
            }
            Op::Dropout { x, mask } => {
                let d = mask.iter().zip(dy).map(|(&m, &g)| m * g).collect();
                res.push((*x, raw(out.shape(), d)));
            }
            Op::MaxPool { x, arg } => {
                let shape = self.shape(*x);
                res.push((*x, raw(shape, pool::max_pool_backward(shape, arg, dy))));
            }
            Op::AvgPoolSpatial(x) => {
                let shape = self.shape(*x);
                let inv = T::one() / T::of(shape.plane() as f64);
                let mut d = Vec::with_capacity(shape.numel());
                for &gv in dy {
                    d.extend(std::iter::repeat_n(gv * inv, shape.plane()));
                }
                res.push((*x, raw(shape, d)));
            }
            Op::Linear { x, w, b } => {
                let (n, d_in) = (self.shape(*x).n(), self.shape(*x).item());
                let k = self.shape(*w).n();
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * d_in];
                    T::gemm(
                        n,
                        k,
                        d_in,
                        T::one(),
                        dy,
                        (k as isize, 1),
                        self.value(*w).data(),
                        (d_in as isize, 1),
                        T::zero(),
                        &mut dx,
                        (d_in as isize, 1),
                    );
                    res.push((*x, raw(self.shape(*x), dx)));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); k * d_in];
                    T::gemm(
                        k,
                        n,
                        d_in,
                        T::one(),
                        dy,
                        (1, k as isize),
                        self.value(*x).data(),
                        (d_in as isize, 1),
                        T::zero(),
                        &mut dw,
                        (d_in as isize, 1),
                    );
                    res.push((*w, raw(self.shape(*w), dw)));
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); k];
                    for row in dy.chunks(k) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    res.push((*b, raw(self.shape(*b), db)));
                }
            }
            Op::ConcatChannels(xs) => {
                let shape = out.shape();
                let plane = shape.plane();
                let mut offset = 0;
                for &x in xs {
                    let c = self.shape(x).c();
                    let mut d = Vec::with_capacity(shape.n() * c * plane);
                    for n in 0..shape.n() {
                        let start = (n * shape.c() + offset) * plane;
                        d.extend_from_slice(&dy[start..start + c * plane]);
                    }
                    res.push((x, raw(self.shape(x), d)));
                    offset += c;
                }
            }
            Op::Sum(xs) => {
                for &x in xs {
                    res.push((x, g.clone()));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = vb.iter().zip(dy).map(|(&v, &g)| v * g).collect();
                let db = va.iter().zip(dy).map(|(&v, &g)| v * g).collect();
                res.push((*a, raw(out.shape(), da)));
                res.push((*b, raw(out.shape(), db)));
            }
            Op::Scale { x, factor } => {
                res.push((*x, g.map(|v| v * *factor)));
            }
            Op::IndexSelect { x, indices } => {
                let shape = self.shape(*x);
                let item = shape.item();
                let mut d = vec![T::zero(); shape.numel()];
                for (r, &src) in indices.iter().enumerate() {
                    for (a, &b) in d[src * item..][..item].iter_mut().zip(&dy[r * item..][..item]) {
                        *a += b;
                    }
                }
                res.push((*x, raw(shape, d)));
            }
            Op::IndexAdd { x, indices } => {
                let shape = self.shape(*x);
                let item = shape.item();
                let mut d = Vec::with_capacity(shape.numel());
                for &dst in indices {
                    d.extend_from_slice(&dy[dst * item..][..item]);
                }
                res.push((*x, raw(shape, d)));
            }
            Op::RowScale { x, factors } => {
                let item = out.shape().item();
                let d = dy
                    .chunks(item.max(1))
                    .zip(factors)
                    .flat_map(|(row, &f)| row.iter().map(move |&v| v * f))
                    .collect();
                res.push((*x, raw(out.shape(), d)));
            }
            Op::Gather { x, index } => {
                let shape = self.shape(*x);
                let mut d = vec![T::zero(); shape.numel()];
                for (k, src) in index.iter().enumerate() {
                    if let Some(src) = src {
                        d[*src] += dy[k];
                    }
                }
                res.push((*x, raw(shape, d)));
            }
            Op::SumAll(x) => {
                res.push((*x, Tensor::full(self.shape(*x), dy[0])));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let shape = self.shape(*logits);
                let c = shape.item();
                let scale = dy[0] / T::of(targets.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * c + t] -= scale;
                }
                res.push((*logits, raw(shape, d)));
            }
            Op::AucRanking { logits, targets } => {
                let shape = self.shape(*logits);
                let c = shape.item();
                let s = self.value(*logits).data();
                let scale = dy[0] / T::of(targets.len() as f64);
                let mut d = vec![T::zero(); s.len()];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &s[i * c..][..c];
                    for j in (0..c).filter(|&j| j != t) {
                        let gj = sigmoid(row[j] - row[t]) * scale;
                        d[i * c + j] += gj;
                        d[i * c + t] -= gj;
                    }
                }
                res.push((*logits, raw(shape, d)));
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let scale = T::of(2.0) * dy[0] / T::of(target.len() as f64);
                let d = p.iter().zip(target).map(|(&a, &b)| (a - b) * scale).collect();
                res.push((*pred, raw(self.shape(*pred), d)));
            }
        }
        res
    }
}

fn raw<T: Real>(shape: Shape, data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("backward produced a gradient of the wrong size")
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], var: Var, dx: Tensor<T>) {
    if !nodes[var.0].requires_grad {
        return;
    }
    match &mut grads[var.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(dx.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(dx),
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` as `max(x, 0) + ln(1 + e^{-|x|})`.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
