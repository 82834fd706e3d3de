//! Per-pass state shared by the model's building blocks.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::AttentionRecord;
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::{unit, Rng};
use crate::scalar::Real;
use crate::tape::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Binds parameters into a [`Graph`] on first use and carries the pass mode
/// (dropout, gradient tracking, attention capture).
pub struct Ctx<'g, 'p, T: Real> {
    pub g: &'g mut Graph<T>,
    store: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
    dropout: Option<(f64, Rng)>,
    records: Option<Vec<AttentionRecord<T>>>,
}

impl<'g, 'p, T: Real> Ctx<'g, 'p, T> {
    /// Evaluation pass: parameters are constants, no dropout.
    pub fn eval(g: &'g mut Graph<T>, store: &'p ParamStore<T>) -> Self {
        Self { g, store, bound: vec![None; store.len()], trainable: false, dropout: None, records: None }
    }

    /// Parameters (except frozen ones) are tracked for gradients; dropout
    /// stays off.
    pub fn with_grads(g: &'g mut Graph<T>, store: &'p ParamStore<T>) -> Self {
        Self { trainable: true, ..Self::eval(g, store) }
    }

    /// Training pass with inverted dropout at `rate`.
    pub fn train(g: &'g mut Graph<T>, store: &'p ParamStore<T>, rate: f64, rng: Rng) -> Self {
        let dropout = (rate > 0.0).then_some((rate, rng));
        Self { trainable: true, dropout, ..Self::eval(g, store) }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Use an existing graph variable for `id` instead of copying the stored tensor.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.index()] = Some(v);
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = self.g.leaf(t, self.trainable && !self.store.is_frozen(id));
        self.bound[id.index()] = Some(v);
        v
    }

    pub fn training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else { return Ok(x) };
        let keep = 1.0 - *rate;
        let scale = T::of(1.0 / keep);
        let shape = self.g.shape(x).to_vec();
        let n = self.g.value(x).len();
        let mask: Vec<T> = (0..n).map(|_| if unit(rng) < keep { scale } else { T::zero() }).collect();
        self.g.mul_const(x, Tensor::new(&shape, mask)?)
    }

    pub fn capture_attention(&mut self) {
        self.records = Some(Vec::new());
    }

    pub fn capturing(&self) -> bool {
        self.records.is_some()
    }

    pub fn record(&mut self, r: AttentionRecord<T>) {
        if let Some(rs) = self.records.as_mut() {
            rs.push(r);
        }
    }

    pub fn take_records(&mut self) -> Vec<AttentionRecord<T>> {
        self.records.take().unwrap_or_default()
    }

    /// Gradients per parameter (indexed like the store); `None` for
    /// parameters unused in this pass or frozen.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound.iter().map(|b| b.and_then(|v| grads.get(v).cloned())).collect()
    }
}

/// Dense layer `x @ w + b` with `w: [d_in, d_out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, din: usize, dout: usize) -> Self {
        let w = store.add(&alloc::format!("{name}.w"), crate::params::init_uniform(rng, &[din, dout], din));
        let b = store.add(&alloc::format!("{name}.b"), crate::params::init_uniform(rng, &[dout], din));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        ctx.g.linear(x, w, Some(b))
    }
}

/// Layer norm affine parameters, initialised to gamma = 1, beta = 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        let gamma = store.add(&alloc::format!("{name}.gamma"), Tensor::full(&[d], T::one()));
        let beta = store.add(&alloc::format!("{name}.beta"), Tensor::zeros(&[d]));
        Self { gamma, beta }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var, eps: f64) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        ctx.g.layer_norm(x, g, b, T::of(eps))
    }
}
