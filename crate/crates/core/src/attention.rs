//! Differential attention.
//!
//! Each head splits its query and key projections into two halves and
//! subtracts the second softmax map, weighted by a learnable `lambda`, from the
//! first:
//!
//! ```text
//! map = softmax(Q1 K1^T / sqrt(d')) - lambda * softmax(Q2 K2^T / sqrt(d'))
//! out = map V
//! lambda = exp(lq1 . lk1) - exp(lq2 . lk2) + lambda_init(layer)
//! ```
//!
//! Every row of `map` therefore sums to `1 - lambda`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::forward::{Ctx, Linear, Norm};
use crate::params::{init_uniform, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Eeg,
    Eog,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Eeg, Modality::Eog];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Eeg => "eeg",
            Modality::Eog => "eog",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Eeg => Modality::Eog,
            Modality::Eog => Modality::Eeg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttnKind {
    /// Self-attention over one modality's series tokens plus its global token.
    Dsa,
    /// Cross-attention from one modality's global token to the other's.
    Dca,
    /// Inter-epoch attention over fused global tokens.
    SeqGlobal,
    /// Inter-epoch attention over pooled series tokens.
    SeqSeries,
}

impl AttnKind {
    pub fn name(self) -> &'static str {
        match self {
            AttnKind::Dsa => "dsa",
            AttnKind::Dca => "dca",
            AttnKind::SeqGlobal => "seq_global",
            AttnKind::SeqSeries => "seq_series",
        }
    }
}

/// Where an attention call sits in the network; copied into its records.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Site {
    /// 1-based layer index.
    pub layer: usize,
    pub kind: AttnKind,
    pub modality: Option<Modality>,
}

/// One head's attention map for one batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord<T> {
    pub layer: usize,
    pub head: usize,
    pub kind: AttnKind,
    pub modality: Option<Modality>,
    /// Index along the attention batch axis (the epoch for MDTA records).
    pub item: usize,
    /// `lambda` used for this head; 0 for standard attention.
    pub lambda: f64,
    /// `[n_q, n_k]`
    pub map: Tensor<T>,
}

/// `0.8 - 0.6 * exp(-0.3 * (layer - 1))` for 1-based `layer`.
pub fn lambda_init(layer: usize) -> f64 {
    debug_assert!(layer >= 1);
    0.8 - 0.6 * libm::exp(-0.3 * (layer as f64 - 1.0))
}

/// Per-head lambda re-parameterisation for one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaParams {
    pub q1: ParamId,
    pub k1: ParamId,
    pub q2: ParamId,
    pub k2: ParamId,
    /// Constant offset, `lambda_init(layer)` unless overridden.
    pub init: f64,
}

impl LambdaParams {
    /// Vectors of shape `[heads, head_dim]` drawn from U(-0.1, 0.1).
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        heads: usize,
        head_dim: usize,
        layer: usize,
    ) -> Self {
        let mut v = |s: &str| store.add(&format!("{name}.{s}"), init_uniform(rng, &[heads, head_dim], 100));
        let (q1, k1, q2, k2) = (v("lq1"), v("lk1"), v("lq2"), v("lk2"));
        Self { q1, k1, q2, k2, init: lambda_init(layer) }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.q1, self.k1, self.q2, self.k2]
    }

    /// `lambda` for `head` as a one-element graph value.
    pub fn value<T: Real>(&self, ctx: &mut Ctx<'_, '_, T>, head: usize) -> Result<Var> {
        let row = |ctx: &mut Ctx<'_, '_, T>, id| {
            let p = ctx.p(id);
            ctx.g.slice(p, 0, head, 1)
        };
        let (q1, k1, q2, k2) = (row(ctx, self.q1)?, row(ctx, self.k1)?, row(ctx, self.q2)?, row(ctx, self.k2)?);
        let d1 = ctx.g.dot(q1, k1)?;
        let d2 = ctx.g.dot(q2, k2)?;
        let e1 = ctx.g.exp(d1);
        let e2 = ctx.g.exp(d2);
        let diff = ctx.g.sub(e1, e2)?;
        Ok(ctx.g.add_const(diff, T::of(self.init)))
    }
}

/// One differential head. Returns `(map V, map)`.
pub fn diff_attn_head<T: Real>(
    g: &mut Graph<T>,
    q1: Var,
    q2: Var,
    k1: Var,
    k2: Var,
    v: Var,
    lambda: Var,
) -> Result<(Var, Var)> {
    let dh = g.value(q1).last_dim();
    if g.value(q2).last_dim() != dh || g.value(k1).last_dim() != dh || g.value(k2).last_dim() != dh {
        return Err(dim_err!("diff_attn_head: query/key halves must share width {dh}"));
    }
    let scale = T::of(1.0 / libm::sqrt(dh as f64));
    let branch = |g: &mut Graph<T>, q, k| -> Result<Var> {
        let a = g.matmul_t(q, k, false, true)?;
        let a = g.scale(a, scale);
        Ok(g.softmax(a))
    };
    let s1 = branch(g, q1, k1)?;
    let s2 = branch(g, q2, k2)?;
    let s2 = g.mul_scalar(s2, lambda)?;
    let map = g.sub(s1, s2)?;
    let out = g.matmul(map, v)?;
    Ok((out, map))
}

/// Q, K, V and output projections, all `d -> d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnProj {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl AttnProj {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            o: Linear::new(store, rng, &format!("{name}.o"), d, d),
            heads,
        }
    }
}

fn check_inputs<T: Real>(g: &Graph<T>, xq: Var, xkv: Var) -> Result<(usize, usize, usize, usize)> {
    let (sq, sk) = (g.shape(xq), g.shape(xkv));
    match (sq, sk) {
        (&[b, nq, d], &[b2, nk, d2]) if b == b2 && d == d2 => Ok((b, nq, nk, d)),
        _ => Err(dim_err!("attention inputs {:?} and {:?} disagree", sq, sk)),
    }
}

fn record_maps<T: Real>(ctx: &mut Ctx<'_, '_, T>, map: Var, site: Site, head: usize, lambda: f64) {
    if !ctx.capturing() {
        return;
    }
    let s = ctx.g.shape(map).to_vec();
    let (b, nq, nk) = (s[0], s[1], s[2]);
    let data = ctx.g.value(map).data().to_vec();
    for item in 0..b {
        let m = Tensor::new(&[nq, nk], data[item * nq * nk..(item + 1) * nq * nk].to_vec()).expect("slice shape");
        ctx.record(AttentionRecord { layer: site.layer, head, kind: site.kind, modality: site.modality, item, lambda, map: m });
    }
}

/// Multi-head differential attention of queries `xq: [B, n_q, d]` over
/// `xkv: [B, n_k, d]`.
///
/// With `headwise_norm`, each head output is RMS-normalised over its `2d'`
/// features and scaled by `1 - lambda_init`.
pub fn multi_head_diff_attn<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    xq: Var,
    xkv: Var,
    proj: &AttnProj,
    lam: &LambdaParams,
    headwise_norm: bool,
    site: Site,
) -> Result<Var> {
    let (_, _, _, d) = check_inputs(ctx.g, xq, xkv)?;
    let h = proj.heads;
    if d % (2 * h) != 0 {
        return Err(dim_err!("width {d} not divisible by 2 x {h} heads"));
    }
    let dh = d / (2 * h);
    let q = proj.q.forward(ctx, xq)?;
    let k = proj.k.forward(ctx, xkv)?;
    let v = proj.v.forward(ctx, xkv)?;
    let mut outs = Vec::with_capacity(h);
    for head in 0..h {
        let base = head * 2 * dh;
        let q1 = ctx.g.slice(q, 2, base, dh)?;
        let q2 = ctx.g.slice(q, 2, base + dh, dh)?;
        let k1 = ctx.g.slice(k, 2, base, dh)?;
        let k2 = ctx.g.slice(k, 2, base + dh, dh)?;
        let vh = ctx.g.slice(v, 2, base, 2 * dh)?;
        let lambda = lam.value(ctx, head)?;
        let (out, map) = diff_attn_head(ctx.g, q1, q2, k1, k2, vh, lambda)?;
        let lv = ctx.g.value(lambda).item().as_f64();
        record_maps(ctx, map, site, head, lv);
        let out = if headwise_norm {
            let n = ctx.g.rms_norm(out, T::of(1e-5));
            ctx.g.scale(n, T::of(1.0 - lam.init))
        } else {
            out
        };
        outs.push(out);
    }
    let cat = ctx.g.concat(&outs, 2)?;
    proj.o.forward(ctx, cat)
}

/// Standard multi-head scaled dot-product attention with `heads` heads of
/// width `d / heads`.
pub fn multi_head_attn<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    xq: Var,
    xkv: Var,
    proj: &AttnProj,
    site: Site,
) -> Result<Var> {
    let (_, _, _, d) = check_inputs(ctx.g, xq, xkv)?;
    let h = proj.heads;
    if d % h != 0 {
        return Err(dim_err!("width {d} not divisible by {h} heads"));
    }
    let dh = d / h;
    let scale = T::of(1.0 / libm::sqrt(dh as f64));
    let q = proj.q.forward(ctx, xq)?;
    let k = proj.k.forward(ctx, xkv)?;
    let v = proj.v.forward(ctx, xkv)?;
    let mut outs = Vec::with_capacity(h);
    for head in 0..h {
        let qh = ctx.g.slice(q, 2, head * dh, dh)?;
        let kh = ctx.g.slice(k, 2, head * dh, dh)?;
        let vh = ctx.g.slice(v, 2, head * dh, dh)?;
        let a = ctx.g.matmul_t(qh, kh, false, true)?;
        let a = ctx.g.scale(a, scale);
        let map = ctx.g.softmax(a);
        record_maps(ctx, map, site, head, 0.0);
        outs.push(ctx.g.matmul(map, vh)?);
    }
    let cat = ctx.g.concat(&outs, 2)?;
    proj.o.forward(ctx, cat)
}

/// How an attention block computes its maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttnMode {
    pub differential: bool,
    pub headwise_norm: bool,
    pub ln_eps: f64,
}

fn attend<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    xq: Var,
    xkv: Var,
    proj: &AttnProj,
    lam: &LambdaParams,
    mode: AttnMode,
    site: Site,
) -> Result<Var> {
    if mode.differential {
        multi_head_diff_attn(ctx, xq, xkv, proj, lam, mode.headwise_norm, site)
    } else {
        multi_head_attn(ctx, xq, xkv, proj, site)
    }
}

/// Differential self-attention block: `LayerNorm(x + Attn(x, x))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DsaParams {
    pub attn: AttnProj,
    pub norm: Norm,
}

impl DsaParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, d: usize, heads: usize) -> Self {
        Self { attn: AttnProj::new(store, rng, &format!("{name}.attn"), d, heads), norm: Norm::new(store, &format!("{name}.norm"), d) }
    }
}

/// `x: [B, N_tok + 1, d]` with the global token as the last row.
pub fn dsa<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    x: Var,
    p: &DsaParams,
    lam: &LambdaParams,
    mode: AttnMode,
    site: Site,
) -> Result<Var> {
    let a = attend(ctx, x, x, &p.attn, lam, mode, site)?;
    let r = ctx.g.add(x, a)?;
    p.norm.forward(ctx, r, mode.ln_eps)
}

/// Differential cross-attention from `g_self: [B, 1, d]` to `g_other`:
/// `LayerNorm(g_self + Attn(g_self, g_other))`.
#[allow(clippy::too_many_arguments)]
pub fn dca<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    g_self: Var,
    g_other: Var,
    attn: &AttnProj,
    norm: &Norm,
    lam: &LambdaParams,
    mode: AttnMode,
    site: Site,
) -> Result<Var> {
    let a = attend(ctx, g_self, g_other, attn, lam, mode, site)?;
    let r = ctx.g.add(g_self, a)?;
    norm.forward(ctx, r, mode.ln_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;
    use crate::rng::stream;

    #[test]
    fn lambda_init_schedule() {
        assert!((lambda_init(1) - 0.2).abs() < 1e-15);
        assert!((lambda_init(4) - (0.8 - 0.6 * (-0.9f64).exp())).abs() < 1e-15);
        assert!((lambda_init(4) - 0.5561).abs() < 1e-4);
        for l in 1..20 {
            assert!(lambda_init(l + 1) > lambda_init(l));
            assert!(lambda_init(l) < 0.8);
        }
    }

    #[test]
    fn zero_lambda_vectors_give_lambda_init() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(0, "t");
        let lam = LambdaParams::new(&mut store, &mut rng, "l", 2, 4, 1);
        for id in lam.ids() {
            let name: alloc::string::String = store.name(id).into();
            store.set(&name, Tensor::zeros(&[2, 4])).unwrap();
        }
        let mut g = Graph::new();
        let mut ctx = Ctx::eval(&mut g, &store);
        for h in 0..2 {
            let v = lam.value(&mut ctx, h).unwrap();
            assert_eq!(ctx.g.value(v).item(), lambda_init(1));
        }
    }

    #[test]
    fn single_key_map_is_one_minus_lambda() {
        let mut g = Graph::<f64>::new();
        let t = |tag, shape: &[usize]| random_tensor(3, tag, shape, 1.0);
        let q1 = g.constant(t("q1", &[1, 3, 4]));
        let q2 = g.constant(t("q2", &[1, 3, 4]));
        let k1 = g.constant(t("k1", &[1, 1, 4]));
        let k2 = g.constant(t("k2", &[1, 1, 4]));
        let v = g.constant(t("v", &[1, 1, 8]));
        let lam = g.constant(Tensor::scalar(0.3));
        let (out, map) = diff_attn_head(&mut g, q1, q2, k1, k2, v, lam).unwrap();
        for &m in g.value(map).data() {
            assert!((m - 0.7).abs() < 1e-15);
        }
        let vv = g.value(v).data().to_vec();
        for r in 0..3 {
            for j in 0..8 {
                assert!((g.value(out).at(&[0, r, j]) - 0.7 * vv[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tied_halves_with_unit_lambda_cancel_exactly() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(random_tensor(5, "q", &[2, 6, 4], 2.0));
        let k = g.constant(random_tensor(5, "k", &[2, 6, 4], 2.0));
        let v = g.constant(random_tensor(5, "v", &[2, 6, 8], 2.0));
        let lam = g.constant(Tensor::scalar(1.0));
        let (out, map) = diff_attn_head(&mut g, q, q, k, k, v, lam).unwrap();
        assert!(g.value(map).data().iter().all(|&x| x == 0.0));
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }
}
