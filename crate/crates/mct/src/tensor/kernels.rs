//! Slice-level forward and backward kernels.
//!
//! Every output element is produced by exactly one task with a fixed inner
//! summation order, so results are bit-identical for any thread count.

use rayon::prelude::*;

use super::Real;

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn permute<T: Real>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        // odometer increment over the output index
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn narrow<T: Real>(data: &[T], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<T> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis] * inner;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full + start * inner;
        out.extend_from_slice(&data[base..base + len * inner]);
    }
    out
}

/// Scatters a narrowed gradient back into a zero tensor of the source shape.
pub fn narrow_backward<T: Real>(
    grad: &[T],
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) -> Vec<T> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis] * inner;
    let mut out = vec![T::zero(); outer * full];
    for o in 0..outer {
        let base = o * full + start * inner;
        out[base..base + len * inner].copy_from_slice(&grad[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

pub fn transpose2d<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    let row = |(i, crow): (usize, &mut [T])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * k * n >= 1 << 14 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// Batched `c[b×m×n] = a[b×m×k] · b[b×k×n]`.
pub fn bmm<T: Real>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    c.par_chunks_mut(m * n).enumerate().for_each(|(bi, cb)| {
        let out = matmul(
            &a[bi * m * k..(bi + 1) * m * k],
            &b[bi * k * n..(bi + 1) * k * n],
            m,
            k,
            n,
        );
        cb.copy_from_slice(&out);
    });
    debug_assert!(batch > 0);
    c
}

/// Per-batch transpose of the trailing two axes.
pub fn batch_transpose<T: Real>(a: &[T], batch: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for bi in 0..batch {
        out.extend(transpose2d(&a[bi * m * n..(bi + 1) * m * n], m, n));
    }
    out
}

/// Geometry of a grouped, valid (unpadded) 3D convolution over `N×C×D×H×W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub n: usize,
    pub cin: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub groups: usize,
}

impl Conv3dGeom {
    pub fn out_dims(&self) -> [usize; 3] {
        let o = |i: usize, k: usize, s: usize| (i - k) / s + 1;
        [
            o(self.d, self.kernel[0], self.stride[0]),
            o(self.h, self.kernel[1], self.stride[1]),
            o(self.w, self.kernel[2], self.stride[2]),
        ]
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let [od, oh, ow] = self.out_dims();
        vec![self.n, self.cout, od, oh, ow]
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn ksize(&self) -> usize {
        self.kernel.iter().product()
    }
}

pub fn conv3d_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &Conv3dGeom) -> Vec<T> {
    let [od, oh, ow] = g.out_dims();
    let osz = od * oh * ow;
    let isz = g.d * g.h * g.w;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let (cin_g, cout_g, ks) = (g.cin_g(), g.cout_g(), g.ksize());
    let mut out = vec![T::zero(); g.n * g.cout * osz];
    out.par_chunks_mut(osz).enumerate().for_each(|(idx, dst)| {
        let (n, co) = (idx / g.cout, idx % g.cout);
        let grp = co / cout_g;
        let wco = &weight[co * cin_g * ks..(co + 1) * cin_g * ks];
        for a in 0..od {
            for b in 0..oh {
                for c in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin_g {
                        let xc = &x[(n * g.cin + grp * cin_g + ci) * isz..][..isz];
                        let wc = &wco[ci * ks..(ci + 1) * ks];
                        for i in 0..kd {
                            for j in 0..kh {
                                let xrow = ((a * sd + i) * g.h + b * sh + j) * g.w + c * sw;
                                let wrow = (i * kh + j) * kw;
                                for l in 0..kw {
                                    acc = acc + xc[xrow + l] * wc[wrow + l];
                                }
                            }
                        }
                    }
                    dst[(a * oh + b) * ow + c] = acc;
                }
            }
        }
    });
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv3d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &Conv3dGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [od, oh, ow] = g.out_dims();
    let osz = od * oh * ow;
    let isz = g.d * g.h * g.w;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let (cin_g, cout_g, ks) = (g.cin_g(), g.cout_g(), g.ksize());

    let dbias: Vec<T> = (0..g.cout)
        .map(|co| {
            let mut acc = T::zero();
            for n in 0..g.n {
                for &v in &dy[(n * g.cout + co) * osz..][..osz] {
                    acc = acc + v;
                }
            }
            acc
        })
        .collect();

    let mut dw = vec![T::zero(); weight.len()];
    dw.par_chunks_mut(cin_g * ks).enumerate().for_each(|(co, dwc)| {
        let grp = co / cout_g;
        for n in 0..g.n {
            let dyc = &dy[(n * g.cout + co) * osz..][..osz];
            for a in 0..od {
                for b in 0..oh {
                    for c in 0..ow {
                        let gv = dyc[(a * oh + b) * ow + c];
                        if gv == T::zero() {
                            continue;
                        }
                        for ci in 0..cin_g {
                            let xc = &x[(n * g.cin + grp * cin_g + ci) * isz..][..isz];
                            let wc = &mut dwc[ci * ks..(ci + 1) * ks];
                            for i in 0..kd {
                                for j in 0..kh {
                                    let xrow = ((a * sd + i) * g.h + b * sh + j) * g.w + c * sw;
                                    let wrow = (i * kh + j) * kw;
                                    for l in 0..kw {
                                        wc[wrow + l] = wc[wrow + l] + gv * xc[xrow + l];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    let mut dx = vec![T::zero(); x.len()];
    dx.par_chunks_mut(isz).enumerate().for_each(|(idx, dxc)| {
        let (n, cin) = (idx / g.cin, idx % g.cin);
        let (grp, ci) = (cin / cin_g, cin % cin_g);
        for co in grp * cout_g..(grp + 1) * cout_g {
            let dyc = &dy[(n * g.cout + co) * osz..][..osz];
            let wc = &weight[(co * cin_g + ci) * ks..][..ks];
            for a in 0..od {
                for b in 0..oh {
                    for c in 0..ow {
                        let gv = dyc[(a * oh + b) * ow + c];
                        if gv == T::zero() {
                            continue;
                        }
                        for i in 0..kd {
                            for j in 0..kh {
                                let xrow = ((a * sd + i) * g.h + b * sh + j) * g.w + c * sw;
                                let wrow = (i * kh + j) * kw;
                                for l in 0..kw {
                                    dxc[xrow + l] = dxc[xrow + l] + gv * wc[wrow + l];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    (dx, dw, dbias)
}

/// Softmax over contiguous rows of length `n`, max-subtracted.
pub fn softmax_rows<T: Real>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total = total + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    out
}

pub fn softmax_rows_backward<T: Real>(y: &[T], dy: &[T], n: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, gr), dr) in y.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dot);
        }
    }
    dx
}

/// Row-wise normalization `(x - mean) / sqrt(var + eps)` with biased variance.
/// Returns `(xhat, inv_std per row)`.
pub fn normalize_rows<T: Real>(x: &[T], n: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let nf = T::of(n as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(x.len() / n);
    for (src, dst) in x.chunks(n).zip(xhat.chunks_mut(n)) {
        let mean = src.iter().copied().sum::<T>() / nf;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let is = T::one() / (var + eps).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * is;
        }
        inv.push(is);
    }
    (xhat, inv)
}

/// Gradient through `xhat = (x - mean(x)) * inv_std` given `dxhat`.
pub fn normalize_backward<T: Real>(xhat: &[T], inv_std: T, dxhat: &[T], out: &mut [T]) {
    let m = T::of(xhat.len() as f64);
    let sum_d: T = dxhat.iter().copied().sum();
    let sum_dx: T = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
    for ((o, &d), &xh) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv_std / m * (m * d - sum_d - xh * sum_dx);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}
