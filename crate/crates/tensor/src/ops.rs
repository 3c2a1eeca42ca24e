//! Differentiable operations, recorded on a [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::norm::{self, BnSaved};
use crate::kernels::pool;
use crate::real::Real;
use crate::tape::{sigmoid, softplus, Op, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Train or eval behaviour for batch norm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm hyperparameters and the running statistics they update.
#[derive(Clone, Copy, Debug)]
pub struct BnConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Result of a batch-norm call: the output and, in train mode, the updated
/// running `(mean, var)`.
pub struct BnOutput<T> {
    pub out: Var,
    pub running: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Tape<T> {
    /// 2-D convolution with a `[c_out, c_in, k, k]` kernel and optional
    /// `[c_out]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.shape(b).numel() != geom.c_out {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("bias {} for {} output channels", self.shape(b), geom.c_out),
                ));
            }
        }
        let algo = self.conv_algo();
        let data = conv::conv2d_forward(
            algo,
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(geom.out_shape(), data)?;
        self.push(value, Op::Conv2d { x, w, b, geom, algo })
    }

    /// Per-channel batch normalization. `running` holds the running mean and
    /// variance; train mode normalizes with batch statistics and returns the
    /// updated running values, eval mode uses the running values only.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[T], &[T]),
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<BnOutput<T>> {
        let shape = self.shape(x);
        let c = shape.c();
        let lens = [
            self.shape(gamma).numel(),
            self.shape(beta).numel(),
            running.0.len(),
            running.1.len(),
        ];
        if lens.iter().any(|&l| l != c) {
            return Err(TensorError::shape(
                "batch_norm2d",
                format!("{c} channels but parameter lengths {lens:?}"),
            ));
        }
        let train = mode == Mode::Train;
        let (mean, var) = if train {
            norm::channel_stats(shape, self.value(x).data())
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let (y, xhat, inv_std) = norm::bn_forward(
            shape,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &var,
            T::of(cfg.eps),
        );
        let updated = train.then(|| {
            let m = T::of(cfg.momentum);
            let count = shape.n() * shape.plane();
            let unbias = if count > 1 {
                T::of(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            let rm = running
                .0
                .iter()
                .zip(&mean)
                .map(|(&r, &b)| (T::one() - m) * r + m * b)
                .collect();
            let rv = running
                .1
                .iter()
                .zip(&var)
                .map(|(&r, &b)| (T::one() - m) * r + m * b * unbias)
                .collect();
            (rm, rv)
        });
        let saved = BnSaved { xhat, inv_std };
        let out = self.push(
            Tensor::new(shape, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                train,
            },
        )?;
        Ok(BnOutput { out, running: updated })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|v| v.max(T::zero()));
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Eval mode and `rate == 0` return `x` unchanged.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::arg("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.shape(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let v = Tensor::new(
            self.shape(x),
            self.value(x).data().iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        )?;
        self.push(v, Op::Dropout { x, mask })
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(x);
        let out = pool::max_pool_shape(shape, k, stride)?;
        let (vals, arg) = pool::max_pool_forward(shape, out, self.value(x).data(), k, stride);
        self.push(Tensor::new(out, vals)?, Op::MaxPool { x, arg })
    }

    /// Spatial mean, `[n, c, h, w] -> [n, c]`.
    pub fn avg_pool_spatial(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.plane() == 0 {
            return Err(TensorError::shape("avg_pool_spatial", "empty spatial extent"));
        }
        let v = pool::avg_pool_spatial(shape, self.value(x).data());
        self.push(Tensor::matrix(shape.n(), shape.c(), v)?, Op::AvgPoolSpatial(x))
    }

    /// `y = x·Wᵀ + b` for `x: [n, d]`, `W: [k, d]`, `b: [k]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (n, d) = (xs.n(), xs.item());
        let k = ws.n();
        if ws.item() != d {
            return Err(TensorError::shape("linear", format!("input {xs} vs weight {ws}")));
        }
        if let Some(b) = b {
            if self.shape(b).numel() != k {
                return Err(TensorError::shape(
                    "linear",
                    format!("bias {} for {k} outputs", self.shape(b)),
                ));
            }
        }
        let mut y = vec![T::zero(); n * k];
        T::gemm(
            n,
            d,
            k,
            T::one(),
            self.value(x).data(),
            (d as isize, 1),
            self.value(w).data(),
            (1, d as isize),
            T::zero(),
            &mut y,
            (k as isize, 1),
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(k) {
                for (a, &c) in row.iter_mut().zip(bv) {
                    *a += c;
                }
            }
        }
        self.push(Tensor::matrix(n, k, y)?, Op::Linear { x, w, b })
    }

    /// Concatenation along the channel axis; `n, h, w` must agree.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::arg("concat_channels", "no inputs"))?;
        let s0 = self.shape(first);
        let mut c_total = 0;
        for &x in xs {
            let s = self.shape(x);
            if (s.n(), s.h(), s.w()) != (s0.n(), s0.h(), s0.w()) {
                return Err(TensorError::shape("concat_channels", format!("{s} vs {s0}")));
            }
            c_total += s.c();
        }
        let out = s0.with_c(c_total);
        let mut data = Vec::with_capacity(out.numel());
        for n in 0..s0.n() {
            for &x in xs {
                let item = self.shape(x).item();
                data.extend_from_slice(&self.value(x).data()[n * item..][..item]);
            }
        }
        self.push(Tensor::new(out, data)?, Op::ConcatChannels(xs.to_vec()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.sum_list(&[a, b], self.shape(a))
    }

    /// Elementwise sum of equally shaped tensors. An empty list yields zeros
    /// of `shape`.
    pub fn sum_list(&mut self, xs: &[Var], shape: Shape) -> Result<Var> {
        if xs.is_empty() {
            return Ok(self.constant(Tensor::zeros(shape)));
        }
        for &x in xs {
            if self.shape(x) != shape {
                return Err(TensorError::shape("sum", format!("{} vs {shape}", self.shape(x))));
            }
        }
        let mut acc = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            for (a, &b) in acc.data_mut().iter_mut().zip(self.value(x).data()) {
                *a += b;
            }
        }
        self.push(acc, Op::Sum(xs.to_vec()))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::shape("mul", format!("{sa} vs {sb}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(Tensor::new(sa, data)?, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let v = self.value(x).map(|v| v * factor);
        self.push(v, Op::Scale { x, factor })
    }

    /// Rows of `x` (items along the leading axis) picked by `indices`.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let item = shape.item();
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            if i >= shape.n() {
                return Err(TensorError::arg(
                    "index_select",
                    format!("index {i} out of range for {} rows", shape.n()),
                ));
            }
            data.extend_from_slice(&self.value(x).data()[i * item..][..item]);
        }
        let out = Tensor::new(shape.with_n(indices.len()), data)?;
        self.push(
            out,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    /// Scatter-sum: row `r` of `x` is added into output row `indices[r]` of an
    /// `rows`-row zero tensor. Rows nobody targets stay zero.
    pub fn index_add(&mut self, x: Var, indices: &[usize], rows: usize) -> Result<Var> {
        let shape = self.shape(x);
        if indices.len() != shape.n() {
            return Err(TensorError::shape(
                "index_add",
                format!("{} indices for {} rows", indices.len(), shape.n()),
            ));
        }
        let item = shape.item();
        let mut out = Tensor::zeros(shape.with_n(rows));
        for (r, &dst) in indices.iter().enumerate() {
            if dst >= rows {
                return Err(TensorError::arg(
                    "index_add",
                    format!("destination {dst} out of range for {rows} rows"),
                ));
            }
            let src = &self.value(x).data()[r * item..][..item];
            for (a, &b) in out.data_mut()[dst * item..][..item].iter_mut().zip(src) {
                *a += b;
            }
        }
        self.push(
            out,
            Op::IndexAdd {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn row_scale(&mut self, x: Var, factors: &[T]) -> Result<Var> {
        let shape = self.shape(x);
        if factors.len() != shape.n() {
            return Err(TensorError::shape(
                "row_scale",
                format!("{} factors for {} rows", factors.len(), shape.n()),
            ));
        }
        let item = shape.item();
        let mut v = self.value(x).clone();
        if item > 0 {
            for (row, &f) in v.data_mut().chunks_mut(item).zip(factors) {
                for a in row {
                    *a *= f;
                }
            }
        }
        self.push(
            v,
            Op::RowScale {
                x,
                factors: factors.to_vec(),
            },
        )
    }

    /// Builds a tensor of `shape` whose element `k` is `x[index[k]]` (flat
    /// indexing), or the constant `fill` where `index[k]` is `None`.
    pub fn gather(&mut self, x: Var, index: &[Option<usize>], shape: Shape, fill: T) -> Result<Var> {
        if index.len() != shape.numel() {
            return Err(TensorError::shape(
                "gather",
                format!("{} indices for shape {shape}", index.len()),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len());
        for i in index {
            match i {
                Some(i) if *i >= src.len() => {
                    return Err(TensorError::arg("gather", format!("index {i} out of range")))
                }
                Some(i) => data.push(src[*i]),
                None => data.push(fill),
            }
        }
        self.push(
            Tensor::new(shape, data)?,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Mean cross-entropy of `logits: [n, C]` against class ids, via the
    /// max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = check_logits(self.shape(logits), targets, "cross_entropy")?;
        let s = self.value(logits).data();
        let mut probs = Vec::with_capacity(n * c);
        let mut total = T::zero();
        for (row, &t) in s.chunks(c).zip(targets) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[t];
            probs.extend(row.iter().map(|&v| (v - m).exp() / z));
        }
        let loss = total / T::of(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Pairwise softplus ranking loss:
    /// `(1/n) Σ_i Σ_{j≠y_i} softplus(s_ij − s_iy_i)`.
    pub fn auc_ranking_loss(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = check_logits(self.shape(logits), targets, "auc_ranking_loss")?;
        if c < 2 {
            return Err(TensorError::arg("auc_ranking_loss", "needs at least 2 classes"));
        }
        let s = self.value(logits).data();
        let mut total = T::zero();
        for (row, &t) in s.chunks(c).zip(targets) {
            for (j, &v) in row.iter().enumerate() {
                if j != t {
                    total += softplus(v - row[t]);
                }
            }
        }
        let loss = total / T::of(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::AucRanking {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Mean squared error between `pred` and constant targets.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(TensorError::shape(
                "mse",
                format!("{} predictions for {} targets", p.len(), target.len()),
            ));
        }
        let loss = p
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / T::of(p.len() as f64);
        self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        )
    }
}

fn check_logits(shape: Shape, targets: &[usize], op: &'static str) -> Result<(usize, usize)> {
    let (n, c) = (shape.n(), shape.item());
    if n == 0 || targets.is_empty() {
        return Err(TensorError::arg(op, "empty batch"));
    }
    if targets.len() != n {
        return Err(TensorError::shape(op, format!("{} targets for {n} rows", targets.len())));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= c) {
        return Err(TensorError::arg(op, format!("target {t} outside {c} classes")));
    }
    Ok((n, c))
}
