//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and whatever it saved
//! for the backward pass. [`Graph::backward`] walks the nodes once, newest
//! first, and only produces gradients for nodes that (transitively) depend on
//! a leaf created with `requires_grad = true`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::kernels::{self, dot, gelu, gelu_with_grad};
use crate::scalar::Real;
use crate::tensor::{split_axis, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, ta: bool, tb: bool, batch: usize, n: usize, k: usize, m: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    MulScalar(Var, Var),
    Exp(Var),
    Dot(Var, Var),
    Sum(Var),
    SumSq(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    RmsNorm { x: Var, rstd: Vec<T> },
    /// Local derivative cached by the forward pass.
    Gelu { a: Var, grad: Vec<T> },
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    MaxPool { x: Var, argmax: Vec<u32> },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var>, stride: usize },
    Reshape(Var),
    TransposeLast2(Var),
    Slice { a: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Mean { a: Var, axis: usize },
    Center { a: Var, axis: usize },
    Expand { a: Var, n: usize },
    Normalize { a: Var, norms: Vec<T>, eps: T },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Mse { a: Var, target: Tensor<T> },
    MulConst { a: Var, c: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn matrix_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(dim_err!("matmul expects 2-D or 3-D operands, got {:?}", shape)),
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// `x[..., d_in] @ w[d_in, d_out] + b[d_out]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(dim_err!("linear: input {:?} incompatible with weight {:?}", xs, ws));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(dim_err!("linear: bias {:?} should be [{dout}]", self.shape(b)));
            }
        }
        let rows = self.value(x).len() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(bd);
            }
        }
        kernels::matmul_nn_acc(self.value(x).data(), self.value(w).data(), &mut out, rows, din, dout);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = dout;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }, ng))
    }

    /// Batched matrix product `op(a) @ op(b)` where `op` optionally transposes
    /// the last two axes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ba, ra, ca) = matrix_dims(self.shape(a))?;
        let (bb, rb, cb) = matrix_dims(self.shape(b))?;
        if ba != bb || self.shape(a).len() != self.shape(b).len() {
            return Err(dim_err!("matmul: batch mismatch {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let (n, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, m) = if tb { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return Err(dim_err!("matmul: inner dims {k} and {k2} differ"));
        }
        if ta && tb {
            return Err(dim_err!("matmul: transposing both operands is not supported"));
        }
        let mut out = vec![T::zero(); ba * n * m];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for bi in 0..ba {
                let asl = &ad[bi * n * k..(bi + 1) * n * k];
                let bsl = &bd[bi * k * m..(bi + 1) * k * m];
                let csl = &mut out[bi * n * m..(bi + 1) * n * m];
                match (ta, tb) {
                    (false, false) => kernels::matmul_nn_acc(asl, bsl, csl, n, k, m),
                    (false, true) => kernels::matmul_nt_acc(asl, bsl, csl, n, k, m),
                    _ => kernels::matmul_tn_acc(asl, bsl, csl, n, k, m),
                }
            }
        }
        let shape = if self.shape(a).len() == 3 { vec![ba, n, m] } else { vec![n, m] };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, ta, tb, batch: ba, n, k, m }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, data), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s, repeated over the
    /// leading axes.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(dim_err!("add_bcast: {:?} is not a suffix of {:?}", sb, sa));
        }
        let bd = self.value(b).data();
        let inner = bd.len();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(inner) {
            for (o, &v) in chunk.iter_mut().zip(bd) {
                *o = *o + v;
            }
        }
        let shape = sa.to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBcast(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(v, Op::AddConst(a), ng)
    }

    /// `a * s` with `s` a one-element tensor.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(dim_err!("mul_scalar: scalar operand has shape {:?}", self.shape(s)));
        }
        let sv = self.value(s).item();
        let v = self.value(a).map(|x| x * sv);
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(v, Op::MulScalar(a, s), ng))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "dot")?;
        let v = dot(self.value(a).data(), self.value(b).data());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Sum(a), ng)
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let v = dot(d, d);
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::SumSq(a), ng)
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor::from_parts(shape, out), Op::Softmax(a), ng)
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err!("layer_norm: affine params must be [{d}]"));
        }
        let xs = self.value(x).data();
        let rows = xs.len() / d;
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xs.len()];
        let inv_d = T::one() / T::of(d as f64);
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(Tensor::from_parts(shape, out), Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng))
    }

    /// Root-mean-square normalisation over the last axis, no affine.
    pub fn rms_norm(&mut self, x: Var, eps: T) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let inv_d = T::one() / T::of(d as f64);
        let mut out = t.data().to_vec();
        let mut rstd = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let ms = dot(row, row) * inv_d;
            let rs = T::one() / (ms + eps).sqrt();
            rstd.push(rs);
            for v in row.iter_mut() {
                *v = *v * rs;
            }
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, out), Op::RmsNorm { x, rstd }, ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ng = self.ng(a);
        if !ng {
            let v = self.value(a).map(gelu);
            return self.push(v, Op::Gelu { a, grad: Vec::new() }, false);
        }
        let x = self.value(a);
        let (vals, grad): (Vec<T>, Vec<T>) = x.data().iter().map(|&v| gelu_with_grad(v)).unzip();
        let v = Tensor::from_parts(x.shape().to_vec(), vals);
        self.push(v, Op::Gelu { a, grad }, true)
    }

    /// Cross-correlation of `x[batch, c_in, t]` with `w[c_out, c_in, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (&[bn, cin, t], &[cout, cin2, k]) = (xs, ws) else {
            return Err(dim_err!("conv1d: expected x [b,c,t] and w [o,c,k], got {:?} and {:?}", xs, ws));
        };
        if cin != cin2 {
            return Err(dim_err!("conv1d: input has {cin} channels, kernel expects {cin2}"));
        }
        if stride == 0 || t + 2 * pad < k {
            return Err(dim_err!("conv1d: kernel {k} larger than padded input {}", t + 2 * pad));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(dim_err!("conv1d: bias must be [{cout}]"));
            }
        }
        let tout = (t + 2 * pad - k) / stride + 1;
        let mut out = vec![T::zero(); bn * cout * tout];
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let bias = b.map(|b| self.value(b).data());
        for bi in 0..bn {
            for co in 0..cout {
                let orow = &mut out[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                if let Some(bias) = bias {
                    orow.fill(bias[co]);
                }
                for ci in 0..cin {
                    let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                    for kk in 0..k {
                        let wv = wd[(co * cin + ci) * k + kk];
                        let (lo, hi) = conv_range(t, tout, stride, pad, kk);
                        if lo >= hi {
                            continue;
                        }
                        if stride == 1 {
                            let start = lo + kk - pad;
                            kernels::axpy(wv, &xrow[start..start + (hi - lo)], &mut orow[lo..hi]);
                        } else {
                            for o in lo..hi {
                                orow[o] = orow[o] + wv * xrow[o * stride + kk - pad];
                            }
                        }
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            Tensor::from_parts(vec![bn, cout, tout], out),
            Op::Conv1d { x, w, b, stride, pad },
            ng,
        ))
    }

    /// Non-overlapping max pooling over the last axis; a trailing remainder
    /// shorter than `size` is dropped.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let t = *xs.last().unwrap();
        if size == 0 || t < size {
            return Err(dim_err!("max_pool1d: window {size} larger than input {t}"));
        }
        let tout = t / size;
        let rows = self.value(x).len() / t;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows * tout);
        let mut argmax = Vec::with_capacity(rows * tout);
        for r in 0..rows {
            let row = &xd[r * t..(r + 1) * t];
            for o in 0..tout {
                let mut best = o * size;
                for i in o * size + 1..(o + 1) * size {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push((r * t + best) as u32);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = tout;
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool { x, argmax }, ng))
    }

    /// Transposed convolution of `x[batch, c_in, t]` with `w[c_in, c_out, k]`;
    /// output length `(t - 1) * stride + k`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (&[bn, cin, t], &[cin2, cout, k]) = (xs, ws) else {
            return Err(dim_err!("conv_transpose1d: expected x [b,c,t] and w [c,o,k], got {:?} and {:?}", xs, ws));
        };
        if cin != cin2 || stride == 0 {
            return Err(dim_err!("conv_transpose1d: input has {cin} channels, kernel expects {cin2}"));
        }
        let tout = (t - 1) * stride + k;
        let mut out = vec![T::zero(); bn * cout * tout];
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (i, row) in out.chunks_mut(tout).enumerate() {
                row.fill(bd[i % cout]);
            }
        }
        for bi in 0..bn {
            for ci in 0..cin {
                let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                for co in 0..cout {
                    let wk = &wd[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                    let orow = &mut out[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                    for (i, &xv) in xrow.iter().enumerate() {
                        kernels::axpy(xv, wk, &mut orow[i * stride..i * stride + k]);
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            Tensor::from_parts(vec![bn, cout, tout], out),
            Op::ConvTranspose1d { x, w, b, stride },
            ng,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(dim_err!("transpose needs at least 2 axes, got {:?}", s));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for (o, i) in out.chunks_mut(r * c).zip(src.chunks(r * c)) {
            for y in 0..r {
                for x in 0..c {
                    o[x * r + y] = i[y * c + x];
                }
            }
        }
        let mut shape = s;
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::TransposeLast2(a), ng))
    }

    /// Take `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(dim_err!("slice [{start}, {}) out of range on axis {axis} of {:?}", start + len, s));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { a, axis, start }, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat axis {axis} out of range for {:?}", first));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(dim_err!("concat: {:?} incompatible with {:?} on axis {axis}", s, first));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { parts: parts.to_vec(), axis }, ng))
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || s.len() < 2 {
            return Err(dim_err!("mean: axis {axis} invalid for {:?}", s));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(a).data();
        let inv = T::one() / T::of(n as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for i in 0..n {
                kernels::axpy(T::one(), &src[(o * n + i) * inner..(o * n + i + 1) * inner], dst);
            }
            for v in dst.iter_mut() {
                *v = *v * inv;
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mean { a, axis }, ng))
    }

    /// Subtract the mean along `axis` (shape preserved).
    pub fn center(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(dim_err!("center: axis {axis} invalid for {:?}", s));
        }
        let out = center_along(self.value(a).data(), &s, axis);
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(s, out), Op::Center { a, axis }, ng))
    }

    /// Repeat `a` `n` times along a new leading axis.
    pub fn expand(&mut self, a: Var, n: usize) -> Var {
        let src = self.value(a);
        let mut out = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            out.extend_from_slice(src.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(src.shape());
        let ng = self.ng(a);
        self.push(Tensor::from_parts(shape, out), Op::Expand { a, n }, ng)
    }

    /// Scale each last-axis row to unit L2 norm; rows with norm `<= eps` map
    /// to zero.
    pub fn normalize(&mut self, a: Var, eps: T) -> Var {
        let t = self.value(a);
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        let mut norms = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let nrm = dot(row, row).sqrt();
            norms.push(nrm);
            if nrm <= eps {
                row.fill(T::zero());
            } else {
                for v in row.iter_mut() {
                    *v = *v / nrm;
                }
            }
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor::from_parts(shape, out), Op::Normalize { a, norms, eps }, ng)
    }

    /// Summed cross-entropy of `logits[..., C]` rows against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let c = t.last_dim();
        let rows = t.len() / c;
        if labels.len() != rows {
            return Err(dim_err!("cross_entropy: {rows} rows but {} labels", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let mut probs = t.data().to_vec();
        let mut loss = T::zero();
        for (r, row) in probs.chunks_mut(c).enumerate() {
            let lr = &t.data()[r * c..(r + 1) * c];
            let mx = lr.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = lr.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
            loss = loss + lse - lr[labels[r]];
            softmax_in_place(row);
        }
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, ng))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: Tensor<T>) -> Result<Var> {
        same_shape(self.value(a), &target, "mse")?;
        let n = T::of(target.len() as f64);
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / n;
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(s), Op::Mse { a, target }, ng))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var> {
        same_shape(self.value(a), &c, "mul_const")?;
        let data = self.value(a).data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::MulConst { a, c }, ng))
    }

    /// Reverse pass from a one-element output. Gradients are kept for leaves.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        assert_eq!(self.value(out).len(), 1, "backward expects a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.shape(out), T::one()));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(node.value.shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn acc_map(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &[T], f: impl Fn(usize, T) -> T) {
        if let Some(b) = self.buf(grads, v) {
            for (i, (d, &gi)) in b.iter_mut().zip(g).enumerate() {
                *d = *d + f(i, gi);
            }
        }
    }

    fn backward_node(&self, node: &Node<T>, gt: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let g = gt.data();
        let val = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (din, dout) = (self.shape(*w)[0], self.shape(*w)[1]);
                let rows = g.len() / dout;
                if let Some(dx) = self.buf(grads, *x) {
                    kernels::matmul_nt_acc(g, self.value(*w).data(), dx, rows, dout, din);
                }
                if let Some(dw) = self.buf(grads, *w) {
                    kernels::matmul_tn_acc(self.value(*x).data(), g, dw, din, rows, dout);
                }
                if let Some(b) = b {
                    if let Some(db) = self.buf(grads, *b) {
                        for r in 0..rows {
                            kernels::axpy(T::one(), &g[r * dout..(r + 1) * dout], db);
                        }
                    }
                }
            }
            &Op::MatMul { a, b, ta, tb, batch, n, k, m } => {
                if let Some(da) = self.buf(grads, a) {
                    let bd = self.value(b).data();
                    for bi in 0..batch {
                        let gs = &g[bi * n * m..(bi + 1) * n * m];
                        let bs = &bd[bi * k * m..(bi + 1) * k * m];
                        let das = &mut da[bi * n * k..(bi + 1) * n * k];
                        match (ta, tb) {
                            (false, false) => kernels::matmul_nt_acc(gs, bs, das, n, m, k),
                            (false, true) => kernels::matmul_nn_acc(gs, bs, das, n, m, k),
                            _ => kernels::matmul_nt_acc(bs, gs, das, k, m, n),
                        }
                    }
                }
                if let Some(db) = self.buf(grads, b) {
                    let ad = self.value(a).data();
                    for bi in 0..batch {
                        let gs = &g[bi * n * m..(bi + 1) * n * m];
                        let as_ = &ad[bi * n * k..(bi + 1) * n * k];
                        let dbs = &mut db[bi * k * m..(bi + 1) * k * m];
                        match (ta, tb) {
                            (false, false) => kernels::matmul_tn_acc(as_, gs, dbs, k, n, m),
                            (false, true) => kernels::matmul_tn_acc(gs, as_, dbs, m, n, k),
                            _ => kernels::matmul_nn_acc(as_, gs, dbs, k, n, m),
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |_, gi| gi);
                self.acc_map(grads, *b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |_, gi| gi);
                self.acc_map(grads, *b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, g, |i, gi| gi * bv[i]);
                self.acc_map(grads, *b, g, |i, gi| gi * av[i]);
            }
            Op::AddBcast(a, b) => {
                self.acc_map(grads, *a, g, |_, gi| gi);
                if let Some(db) = self.buf(grads, *b) {
                    let inner = db.len();
                    for chunk in g.chunks(inner) {
                        kernels::axpy(T::one(), chunk, db);
                    }
                }
            }
            Op::Scale(a, c) => self.acc_map(grads, *a, g, |_, gi| gi * *c),
            Op::AddConst(a) => self.acc_map(grads, *a, g, |_, gi| gi),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item();
                self.acc_map(grads, *a, g, |_, gi| gi * sv);
                if let Some(ds) = self.buf(grads, *s) {
                    ds[0] = ds[0] + dot(g, self.value(*a).data());
                }
            }
            Op::Exp(a) => self.acc_map(grads, *a, g, |i, gi| gi * val[i]),
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, bv, |_, x| x * g[0]);
                self.acc_map(grads, *b, av, |_, x| x * g[0]);
            }
            Op::Sum(a) => {
                if let Some(da) = self.buf(grads, *a) {
                    for d in da.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::SumSq(a) => {
                let av = self.value(*a).data();
                let two_g = g[0] + g[0];
                self.acc_map(grads, *a, av, |_, x| two_g * x);
            }
            Op::Softmax(a) => {
                if let Some(da) = self.buf(grads, *a) {
                    let d = node.value.last_dim();
                    for ((y, gr), dr) in val.chunks(d).zip(g.chunks(d)).zip(da.chunks_mut(d)) {
                        let s = dot(y, gr);
                        for j in 0..d {
                            dr[j] = dr[j] + y[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = node.value.last_dim();
                let gam = self.value(*gamma).data();
                if let Some(dx) = self.buf(grads, *x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dxh = vec![T::zero(); d];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxh[j] = gr[j] * gam[j];
                        }
                        let m1 = dxh.iter().copied().sum::<T>() * inv_d;
                        let m2 = dot(&dxh, xh) * inv_d;
                        let dr = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            dr[j] = dr[j] + rs * (dxh[j] - m1 - xh[j] * m2);
                        }
                    }
                }
                if let Some(dg) = self.buf(grads, *gamma) {
                    for (gr, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + gr[j] * xh[j];
                        }
                    }
                }
                if let Some(db) = self.buf(grads, *beta) {
                    for gr in g.chunks(d) {
                        kernels::axpy(T::one(), gr, db);
                    }
                }
            }
            Op::RmsNorm { x, rstd } => {
                if let Some(dx) = self.buf(grads, *x) {
                    let d = node.value.last_dim();
                    let inv_d = T::one() / T::of(d as f64);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let (gr, y) = (&g[r * d..(r + 1) * d], &val[r * d..(r + 1) * d]);
                        let m = dot(gr, y) * inv_d;
                        let dr = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            dr[j] = dr[j] + rs * (gr[j] - y[j] * m);
                        }
                    }
                }
            }
            Op::Gelu { a, grad } => {
                self.acc_map(grads, *a, g, |i, gi| gi * grad[i]);
            }
            &Op::Conv1d { x, w, b, stride, pad } => {
                let [bn, cin, t] = *self.shape(x) else { unreachable!() };
                let [cout, _, k] = *self.shape(w) else { unreachable!() };
                let tout = node.value.shape()[2];
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                if let Some(dx) = self.buf(grads, x) {
                    for bi in 0..bn {
                        for co in 0..cout {
                            let grow = &g[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                            for ci in 0..cin {
                                let dxrow = &mut dx[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                                for kk in 0..k {
                                    let wv = wd[(co * cin + ci) * k + kk];
                                    let (lo, hi) = conv_range(t, tout, stride, pad, kk);
                                    if lo >= hi {
                                        continue;
                                    }
                                    if stride == 1 {
                                        let start = lo + kk - pad;
                                        kernels::axpy(wv, &grow[lo..hi], &mut dxrow[start..start + hi - lo]);
                                    } else {
                                        for o in lo..hi {
                                            let idx = o * stride + kk - pad;
                                            dxrow[idx] = dxrow[idx] + wv * grow[o];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(dw) = self.buf(grads, w) {
                    for bi in 0..bn {
                        for co in 0..cout {
                            let grow = &g[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                            for ci in 0..cin {
                                let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                                for kk in 0..k {
                                    let (lo, hi) = conv_range(t, tout, stride, pad, kk);
                                    if lo >= hi {
                                        continue;
                                    }
                                    let s = if stride == 1 {
                                        let start = lo + kk - pad;
                                        dot(&grow[lo..hi], &xrow[start..start + hi - lo])
                                    } else {
                                        (lo..hi).map(|o| grow[o] * xrow[o * stride + kk - pad]).sum()
                                    };
                                    let wi = (co * cin + ci) * k + kk;
                                    dw[wi] = dw[wi] + s;
                                }
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.buf(grads, b) {
                        for (i, row) in g.chunks(tout).enumerate() {
                            db[i % cout] = db[i % cout] + row.iter().copied().sum();
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(dx) = self.buf(grads, *x) {
                    for (&idx, &gi) in argmax.iter().zip(g) {
                        dx[idx as usize] = dx[idx as usize] + gi;
                    }
                }
            }
            &Op::ConvTranspose1d { x, w, b, stride } => {
                let [bn, cin, t] = *self.shape(x) else { unreachable!() };
                let [_, cout, k] = *self.shape(w) else { unreachable!() };
                let tout = node.value.shape()[2];
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                if let Some(dx) = self.buf(grads, x) {
                    for bi in 0..bn {
                        for ci in 0..cin {
                            let dxrow = &mut dx[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                            for co in 0..cout {
                                let wk = &wd[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                                let grow = &g[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                                for (i, d) in dxrow.iter_mut().enumerate() {
                                    *d = *d + dot(wk, &grow[i * stride..i * stride + k]);
                                }
                            }
                        }
                    }
                }
                if let Some(dw) = self.buf(grads, w) {
                    for bi in 0..bn {
                        for ci in 0..cin {
                            let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                            for co in 0..cout {
                                let grow = &g[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                                let dwk = &mut dw[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                                for (i, &xv) in xrow.iter().enumerate() {
                                    kernels::axpy(xv, &grow[i * stride..i * stride + k], dwk);
                                }
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.buf(grads, b) {
                        for (i, row) in g.chunks(tout).enumerate() {
                            db[i % cout] = db[i % cout] + row.iter().copied().sum();
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc_map(grads, *a, g, |_, gi| gi),
            Op::TransposeLast2(a) => {
                if let Some(da) = self.buf(grads, *a) {
                    let s = self.nodes[a.0].value.shape();
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    for (dm, gm) in da.chunks_mut(r * c).zip(g.chunks(r * c)) {
                        for y in 0..r {
                            for x in 0..c {
                                dm[y * c + x] = dm[y * c + x] + gm[x * r + y];
                            }
                        }
                    }
                }
            }
            &Op::Slice { a, axis, start } => {
                if let Some(da) = self.buf(grads, a) {
                    let (outer, n, inner) = split_axis(self.shape(a), axis);
                    let len = node.value.shape()[axis];
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        kernels::axpy(
                            T::one(),
                            &g[o * len * inner..(o + 1) * len * inner],
                            &mut da[base..base + len * inner],
                        );
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    if let Some(dp) = self.buf(grads, p) {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            kernels::axpy(
                                T::one(),
                                &g[src..src + n * inner],
                                &mut dp[o * n * inner..(o + 1) * n * inner],
                            );
                        }
                    }
                    offset += n;
                }
            }
            &Op::Mean { a, axis } => {
                if let Some(da) = self.buf(grads, a) {
                    let (outer, n, inner) = split_axis(self.shape(a), axis);
                    let inv = T::one() / T::of(n as f64);
                    for o in 0..outer {
                        let gs = &g[o * inner..(o + 1) * inner];
                        for i in 0..n {
                            kernels::axpy(inv, gs, &mut da[(o * n + i) * inner..(o * n + i + 1) * inner]);
                        }
                    }
                }
            }
            &Op::Center { a, axis } => {
                let cg = center_along(g, node.value.shape(), axis);
                self.acc_map(grads, a, &cg, |_, x| x);
            }
            &Op::Expand { a, n } => {
                if let Some(da) = self.buf(grads, a) {
                    let inner = da.len();
                    for r in 0..n {
                        kernels::axpy(T::one(), &g[r * inner..(r + 1) * inner], da);
                    }
                }
            }
            Op::Normalize { a, norms, eps } => {
                if let Some(da) = self.buf(grads, *a) {
                    let d = node.value.last_dim();
                    for (r, &nrm) in norms.iter().enumerate() {
                        if nrm <= *eps {
                            continue;
                        }
                        let (gr, y) = (&g[r * d..(r + 1) * d], &val[r * d..(r + 1) * d]);
                        let s = dot(gr, y);
                        let dr = &mut da[r * d..(r + 1) * d];
                        for j in 0..d {
                            dr[j] = dr[j] + (gr[j] - y[j] * s) / nrm;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if let Some(dl) = self.buf(grads, *logits) {
                    let c = self.value(*logits).last_dim();
                    for (r, &lab) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == lab { T::one() } else { T::zero() };
                            dl[r * c + j] = dl[r * c + j] + g[0] * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Mse { a, target } => {
                let av = self.value(*a).data();
                let td = target.data();
                let f = (g[0] + g[0]) / T::of(td.len() as f64);
                self.acc_map(grads, *a, av, |i, x| f * (x - td[i]));
            }
            Op::MulConst { a, c } => {
                let cd = c.data();
                self.acc_map(grads, *a, g, |i, gi| gi * cd[i]);
            }
        }
    }
}

/// Output positions `[lo, hi)` whose tap `kk` lands inside the unpadded input.
#[inline]
fn conv_range(t: usize, tout: usize, stride: usize, pad: usize, kk: usize) -> (usize, usize) {
    // need 0 <= o*stride + kk - pad < t
    let lo = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    let hi = if t + pad > kk { ((t + pad - kk - 1) / stride + 1).min(tout) } else { 0 };
    (lo, hi.max(lo))
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s = s + *v;
    }
    let inv = T::one() / s;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

fn center_along<T: Real>(src: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, n, inner) = split_axis(shape, axis);
    let inv = T::one() / T::of(n as f64);
    let mut out = src.to_vec();
    let mut mean = vec![T::zero(); inner];
    for o in 0..outer {
        mean.fill(T::zero());
        for i in 0..n {
            kernels::axpy(T::one(), &src[(o * n + i) * inner..(o * n + i + 1) * inner], &mut mean);
        }
        for i in 0..n {
            let row = &mut out[(o * n + i) * inner..(o * n + i + 1) * inner];
            for (r, &m) in row.iter_mut().zip(&mean) {
                *r = *r - m * inv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn backward_visits_in_reverse_and_accumulates_shared_inputs() {
        let mut g = Graph::new();
        let a = g.param(t(&[2], &[1.0, 2.0]));
        let b = g.mul(a, a).unwrap();
        let s = g.sum(b);
        let grads = g.backward(s);
        assert_eq!(grads.get(a).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.param(t(&[2], &[3.0, 4.0]));
        let d = g.dot(a, w).unwrap();
        let grads = g.backward(d);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn conv_range_covers_padding() {
        // t=5, k=3, pad=1, stride=1 -> tout=5
        assert_eq!(conv_range(5, 5, 1, 1, 0), (1, 5));
        assert_eq!(conv_range(5, 5, 1, 1, 1), (0, 5));
        assert_eq!(conv_range(5, 5, 1, 1, 2), (0, 4));
        // stride 2, t=6, k=2, pad 0 -> tout=3
        assert_eq!(conv_range(6, 3, 2, 0, 1), (0, 3));
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3, 2], &[0., 1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11.]));
        let a = g.slice(x, 1, 0, 2).unwrap();
        let b = g.slice(x, 1, 2, 1).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), g.value(x));
        let l = g.slice(x, 2, 1, 1).unwrap();
        assert_eq!(g.value(l).data(), &[1., 3., 5., 7., 9., 11.]);
    }

    #[test]
    fn mismatched_shapes_are_dimension_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
        assert!(matches!(g.linear(a, a, None), Err(Error::Dimension(_))));
        let x = g.constant(Tensor::zeros(&[1, 1, 2]));
        let w = g.constant(Tensor::zeros(&[1, 1, 3]));
        assert!(matches!(g.conv1d(x, w, None, 1, 0), Err(Error::Dimension(_))));
    }
}
