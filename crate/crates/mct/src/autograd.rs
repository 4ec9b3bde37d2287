//! Straight-line reverse-mode differentiation.
//!
//! A [`Tape`] records every op executed during a forward pass together with
//! whatever it needs to replay the chain rule. [`Tape::backward`] walks the
//! record in exact reverse order, accumulating parameter gradients into the
//! owning [`ParamStore`].

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::kernels::{self, Conv3dGeom};
use crate::tensor::{check_perm, Real, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Key for counter-based dropout masks: each dropout call derives its mask
/// from `(seed, step, call index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        geom: Conv3dGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    ReplaceRow {
        x: Var,
        row: usize,
        v: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    params: HashMap<ParamId, Var>,
    buffer_updates: Vec<(BufferId, Tensor<T>)>,
    dropout: Option<DropoutKey>,
    dropout_calls: u64,
}

/// Gradients of a scalar with respect to every recorded value.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient with respect to `v`; `None` if `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn dims(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            params: HashMap::new(),
            buffer_updates: Vec::new(),
            dropout: None,
            dropout_calls: 0,
        }
    }

    pub fn with_dropout(mut self, key: DropoutKey) -> Self {
        self.dropout = Some(key);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input. Its gradient is available from [`Grads::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter; repeated calls within one tape return the same var.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.param(id).value.clone(),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub(crate) fn queue_buffer_update(&mut self, id: BufferId, value: Tensor<T>) {
        self.buffer_updates.push((id, value));
    }

    /// Running-statistics updates produced by train-mode batchnorm calls.
    pub fn take_buffer_updates(&mut self) -> Vec<(BufferId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Writes pending buffer updates into `store`.
    pub fn commit_buffers(&mut self, store: &mut ParamStore<T>) {
        for (id, value) in self.take_buffer_updates() {
            *store.buffer_mut(id) = value;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dims("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `[B×m×k] · [B×k×n] → [B×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dims("bmm", sa, sb));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let data = kernels::bmm(self.value(a).data(), self.value(b).data(), bt, m, k, n);
        let out = Tensor::new(vec![bt, m, n], data)?;
        self.push("bmm", out, Op::BatchMatMul(a, b))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dims(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Adds a `[n]` bias across the trailing axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = *tx.shape().last().unwrap();
        if tb.rank() != 1 || tb.numel() != n {
            return Err(dims("add_bias", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o = *o + b;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        check_perm(perm, self.value(x).rank())?;
        let out = self.value(x).permute(perm)?;
        self.push("permute", out, Op::Permute(x, perm.to_vec()))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).narrow(axis, start, len)?;
        self.push(
            "narrow",
            out,
            Op::Narrow {
                x,
                axis,
                start,
                len,
            },
        )
    }

    /// Affine map over the trailing axis: `x[…×din] · w[din×dout] + b[dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let din = *sx.last().unwrap();
        if sw.len() != 2 || sw[0] != din {
            return Err(dims("linear", &sx, &sw));
        }
        let rows = sx.iter().product::<usize>() / din;
        let flat = self.reshape(x, &[rows, din])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_bias(y, b)?;
        }
        let mut out_shape = sx;
        *out_shape.last_mut().unwrap() = sw[1];
        self.reshape(y, &out_shape)
    }

    /// Grouped valid 3D convolution. `x` is `[N×Cin×D×H×W]` or unbatched `[Cin×D×H×W]`;
    /// `w` is `[Cout×(Cin/G)×kd×kh×kw]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        groups: usize,
        stride: [usize; 3],
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        let batched = match sx.len() {
            5 => true,
            4 => false,
            _ => return Err(Error::Rank(format!("conv3d input must be rank 4 or 5, got {sx:?}"))),
        };
        let xs: Vec<usize> = if batched { sx.clone() } else { [&[1][..], &sx[..]].concat() };
        if sw.len() != 5 {
            return Err(Error::Rank(format!("conv3d weight must be rank 5, got {sw:?}")));
        }
        if groups == 0 || xs[1] % groups != 0 || sw[0] % groups != 0 {
            return Err(Error::Group(format!(
                "channels in={} out={} not divisible by groups={groups}",
                xs[1], sw[0]
            )));
        }
        if sw[1] != xs[1] / groups {
            return Err(dims("conv3d", &sx, &sw));
        }
        if sb != [sw[0]] {
            return Err(dims("conv3d bias", &sw, &sb));
        }
        if stride.contains(&0) {
            return Err(Error::shape("conv3d", "zero stride"));
        }
        for ax in 0..3 {
            if sw[2 + ax] > xs[2 + ax] {
                return Err(Error::shape(
                    "conv3d",
                    format!("kernel {:?} larger than input {:?}", &sw[2..], &xs[2..]),
                ));
            }
        }
        let geom = Conv3dGeom {
            n: xs[0],
            cin: xs[1],
            d: xs[2],
            h: xs[3],
            w: xs[4],
            cout: sw[0],
            kernel: [sw[2], sw[3], sw[4]],
            stride,
            groups,
        };
        let data = kernels::conv3d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let mut shape = geom.out_shape();
        if !batched {
            shape.remove(0);
        }
        let out = Tensor::new(shape, data)?;
        self.push("conv3d", out, Op::Conv3d { x, w, b, geom })
    }

    fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
        if shape.len() < 2 {
            return Err(Error::Rank(format!("batchnorm input rank {} < 2", shape.len())));
        }
        Ok((shape[0], shape[1], shape[2..].iter().product()))
    }

    /// Train-mode batchnorm over `[N×C×…]`. Returns the output together with the
    /// per-channel batch mean and unbiased batch variance.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (n, c, s) = Self::channel_layout(self.shape(x))?;
        self.check_affine("batchnorm", gamma, beta, c)?;
        let m = n * s;
        if m < 2 {
            return Err(Error::shape(
                "batchnorm",
                format!("train mode needs at least 2 values per channel, got {m}"),
            ));
        }
        let tx = self.value(x);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mf = T::of(m as f64);
        for ch in 0..c {
            let mut acc = T::zero();
            for ni in 0..n {
                acc = acc + tx.data()[(ni * c + ch) * s..][..s].iter().copied().sum::<T>();
            }
            mean[ch] = acc / mf;
            let mut sq = T::zero();
            for ni in 0..n {
                for &v in &tx.data()[(ni * c + ch) * s..][..s] {
                    sq = sq + (v - mean[ch]) * (v - mean[ch]);
                }
            }
            var[ch] = sq / mf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (out, xhat) = self.apply_norm(x, gamma, beta, &mean, &inv_std, n, c, s);
        let unbiased: Vec<T> = var.iter().map(|&v| v * mf / T::of((m - 1) as f64)).collect();
        let v = self.push(
            "batchnorm",
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: true,
            },
        )?;
        Ok((v, mean, unbiased))
    }

    /// Eval-mode batchnorm using stored statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (n, c, s) = Self::channel_layout(self.shape(x))?;
        self.check_affine("batchnorm", gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(dims("batchnorm stats", &[c], &[running_mean.len()]));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (out, xhat) = self.apply_norm(x, gamma, beta, running_mean, &inv_std, n, c, s);
        self.push(
            "batchnorm",
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: false,
            },
        )
    }

    fn check_affine(&self, op: &'static str, gamma: Var, beta: Var, c: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(dims(op, &[c], self.shape(p)));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        n: usize,
        c: usize,
        s: usize,
    ) -> (Tensor<T>, Vec<T>) {
        let tx = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); tx.numel()];
        let mut out = tx.clone();
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * s;
                for i in base..base + s {
                    let h = (tx.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out.data_mut()[i] = g[ch] * h + b[ch];
                }
            }
        }
        (out, xhat)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::gelu);
        self.push("gelu", out, Op::Gelu(x))
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = *tx.shape().last().unwrap();
        let out = Tensor::new(tx.shape().to_vec(), kernels::softmax_rows(tx.data(), n))?;
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Layer normalisation over the trailing axis with biased variance.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        self.check_affine("layernorm", gamma, beta, d)?;
        let tx = self.value(x);
        let (xhat, inv_std) = kernels::normalize_rows(tx.data(), d, eps);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .chunks(d)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &gv), &bv)| gv * h + bv))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(
            "layernorm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Arithmetic mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Rank(format!("mean over axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let lf = T::of(len as f64);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..][..inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
        }
        data.iter_mut().for_each(|v| *v = *v / lf);
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(out_shape, data)?;
        self.push("mean", out, Op::MeanAxis { x, axis })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    /// Mean of squared componentwise differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(dims("mse", tp.shape(), tt.shape()));
        }
        let total: T = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let out = Tensor::scalar(total / T::of(tp.numel() as f64));
        self.push("mse", out, Op::Mse(pred, target))
    }

    /// Mean over rows of `-log softmax(logits)[label]`; `logits` is `[N×C]` or `[C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let c = *tl.shape().last().unwrap();
        let rows = tl.numel() / c;
        if labels.len() != rows {
            return Err(dims("cross_entropy", tl.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label(format!("class index {bad} with {c} logits")));
        }
        let probs = kernels::softmax_rows(tl.data(), c);
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = &tl.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total = total + lse - row[l];
        }
        let out = Tensor::scalar(total / T::of(rows as f64));
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Inverted dropout. Identity in eval mode, at rate 0, or without a dropout key.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let key = match (self.mode, self.dropout) {
            (Mode::Train, Some(k)) if rate > 0.0 => k,
            _ => return Ok(x),
        };
        let call = self.dropout_calls;
        self.dropout_calls += 1;
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&key.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&key.step.to_le_bytes());
        seed[16..24].copy_from_slice(&call.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        let keep = T::of(1.0 / (1.0 - rate));
        let tx = self.value(x);
        let mask: Vec<T> = (0..tx.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("dropout", out, Op::Dropout { x, mask })
    }

    /// Replaces row `row` of every `[L×d]` slice of `x` (`[N×L×d]` or `[L×d]`) with `v[d]`.
    pub fn replace_row(&mut self, x: Var, row: usize, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let s = tx.shape();
        if s.len() < 2 || tv.rank() != 1 || tv.numel() != s[s.len() - 1] {
            return Err(dims("replace_row", s, tv.shape()));
        }
        let (l, d) = (s[s.len() - 2], s[s.len() - 1]);
        if row >= l {
            return Err(Error::shape("replace_row", format!("row {row} of {l}")));
        }
        let mut out = tx.clone();
        for slice in out.data_mut().chunks_mut(l * d) {
            slice[row * d..(row + 1) * d].copy_from_slice(tv.data());
        }
        self.push("replace_row", out, Op::ReplaceRow { x, row, v })
    }

    /// Reverse pass from scalar `loss`. Parameter gradients are added to `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Grads<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Rank(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss).to_vec()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let contributions = self.node_backward(node, &g, store)?;
            grads[i] = Some(g);
            for (var, t) in contributions {
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&t)?,
                    slot @ None => *slot = Some(t),
                }
            }
        }
        Ok(Grads { grads })
    }

    fn node_backward(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        store: &mut ParamStore<T>,
    ) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data);
        let gd = g.data();
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Param(id) => {
                store.param_mut(*id).grad.add_assign(g)?;
                vec![]
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let bt = kernels::transpose2d(val(*b).data(), k, n);
                let at = kernels::transpose2d(val(*a).data(), m, k);
                vec![
                    (*a, like(*a, kernels::matmul(gd, &bt, m, n, k))?),
                    (*b, like(*b, kernels::matmul(&at, gd, k, m, n))?),
                ]
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let bt = kernels::batch_transpose(val(*b).data(), bs, k, n);
                let at = kernels::batch_transpose(val(*a).data(), bs, m, k);
                vec![
                    (*a, like(*a, kernels::bmm(gd, &bt, bs, m, n, k))?),
                    (*b, like(*b, kernels::bmm(&at, gd, bs, k, m, n))?),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let ga = gd.iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect();
                let gb = gd.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect();
                vec![(*a, like(*a, ga)?), (*b, like(*b, gb)?)]
            }
            Op::AddBias(x, b) => {
                let n = val(*b).numel();
                let mut gb = vec![T::zero(); n];
                for row in gd.chunks(n) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                vec![(*x, g.clone()), (*b, like(*b, gb)?)]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|v| v * *c))],
            Op::Reshape(x) => vec![(*x, g.reshape(self.shape(*x).to_vec())?)],
            Op::Permute(x, perm) => {
                vec![(*x, g.permute(&kernels::inverse_perm(perm))?)]
            }
            Op::Narrow {
                x,
                axis,
                start,
                len,
            } => {
                let data = kernels::narrow_backward(gd, self.shape(*x), *axis, *start, *len);
                vec![(*x, like(*x, data)?)]
            }
            Op::Conv3d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv3d_backward(val(*x).data(), val(*w).data(), gd, geom);
                vec![(*x, like(*x, dx)?), (*w, like(*w, dw)?), (*b, like(*b, db)?)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, s) = Self::channel_layout(self.shape(*x))?;
                let gam = val(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); gd.len()];
                for ch in 0..c {
                    // gather the channel's values across the batch
                    let mut xh = Vec::with_capacity(n * s);
                    let mut dxh = Vec::with_capacity(n * s);
                    for ni in 0..n {
                        let base = (ni * c + ch) * s;
                        for i in base..base + s {
                            dgamma[ch] = dgamma[ch] + gd[i] * xhat[i];
                            dbeta[ch] = dbeta[ch] + gd[i];
                            xh.push(xhat[i]);
                            dxh.push(gd[i] * gam[ch]);
                        }
                    }
                    let mut dxc = vec![T::zero(); n * s];
                    if *train {
                        kernels::normalize_backward(&xh, inv_std[ch], &dxh, &mut dxc);
                    } else {
                        for (o, &d) in dxc.iter_mut().zip(&dxh) {
                            *o = d * inv_std[ch];
                        }
                    }
                    for ni in 0..n {
                        let base = (ni * c + ch) * s;
                        dx[base..base + s].copy_from_slice(&dxc[ni * s..(ni + 1) * s]);
                    }
                }
                vec![
                    (*x, like(*x, dx)?),
                    (*gamma, like(*gamma, dgamma)?),
                    (*beta, like(*beta, dbeta)?),
                ]
            }
            Op::Relu(x) => {
                let data = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*x, like(*x, data)?)]
            }
            Op::Gelu(x) => {
                let data = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                    .collect();
                vec![(*x, like(*x, data)?)]
            }
            Op::Softmax(x) => {
                let n = *self.shape(*x).last().unwrap();
                let data = kernels::softmax_rows_backward(node.value.data(), gd, n);
                vec![(*x, like(*x, data)?)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *self.shape(*x).last().unwrap();
                let gam = val(*gamma).data();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = vec![T::zero(); gd.len()];
                for (r, ((grow, xrow), dxrow)) in
                    gd.chunks(d).zip(xhat.chunks(d)).zip(dx.chunks_mut(d)).enumerate()
                {
                    let mut dxh = Vec::with_capacity(d);
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + grow[j] * xrow[j];
                        dbeta[j] = dbeta[j] + grow[j];
                        dxh.push(grow[j] * gam[j]);
                    }
                    kernels::normalize_backward(xrow, inv_std[r], &dxh, dxrow);
                }
                vec![
                    (*x, like(*x, dx)?),
                    (*gamma, like(*gamma, dgamma)?),
                    (*beta, like(*beta, dbeta)?),
                ]
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = shape[*axis];
                let lf = T::of(len as f64);
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        data.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v / lf));
                    }
                }
                vec![(*x, like(*x, data)?)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x).to_vec(), gd[0]))],
            Op::Mse(p, t) => {
                let m = T::of(val(*p).numel() as f64);
                let two = T::of(2.0);
                let dp: Vec<T> = val(*p)
                    .data()
                    .iter()
                    .zip(val(*t).data())
                    .map(|(&a, &b)| two * (a - b) / m * gd[0])
                    .collect();
                let dt = dp.iter().map(|&v| -v).collect();
                vec![(*p, like(*p, dp)?), (*t, like(*t, dt)?)]
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = *self.shape(*logits).last().unwrap();
                let rows = T::of(labels.len() as f64);
                let mut data: Vec<T> = probs.iter().map(|&p| p * gd[0] / rows).collect();
                for (r, &l) in labels.iter().enumerate() {
                    data[r * c + l] = data[r * c + l] - gd[0] / rows;
                }
                vec![(*logits, like(*logits, data)?)]
            }
            Op::Dropout { x, mask } => {
                let data = gd.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                vec![(*x, like(*x, data)?)]
            }
            Op::ReplaceRow { x, row, v } => {
                let s = self.shape(*x);
                let (l, d) = (s[s.len() - 2], s[s.len() - 1]);
                let mut dx = gd.to_vec();
                let mut dv = vec![T::zero(); d];
                for slice in dx.chunks_mut(l * d) {
                    for (acc, val) in dv.iter_mut().zip(&mut slice[row * d..(row + 1) * d]) {
                        *acc = *acc + *val;
                        *val = T::zero();
                    }
                }
                vec![(*x, like(*x, dx)?), (*v, like(*v, dv)?)]
            }
        })
    }
}
