//! Inter-epoch context, the stage classifier and the reconstruction decoder.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{
    lambda_init, multi_head_attn, multi_head_diff_attn, AttnKind, AttnProj, LambdaParams, Site,
};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::forward::{Ctx, Linear, Norm};
use crate::mdta::Stream;
use crate::params::{init_uniform, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tape::Var;

/// One attention layer over epoch positions: `LayerNorm(x + Attn(x, x))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterEpochParams {
    pub attn: AttnProj,
    pub norm: Norm,
    /// Only used when the sequence level runs differential attention.
    pub lambda: LambdaParams,
}

impl InterEpochParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, big_d: usize, heads: usize) -> Self {
        Self {
            attn: AttnProj::new(store, rng, &format!("{name}.attn"), big_d, heads),
            norm: Norm::new(store, &format!("{name}.norm"), big_d),
            lambda: LambdaParams::new(store, rng, &format!("{name}.lambda"), heads, big_d / (2 * heads).max(1), 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeconvBlock {
    /// `[c_in, c_out, k]`
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceParams {
    pub global: InterEpochParams,
    pub series: InterEpochParams,
    pub classifier: Linear,
    pub decoder: Vec<DeconvBlock>,
}

impl SequenceParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, cfg: &ModelConfig) -> Self {
        let big = cfg.big_d();
        let global = InterEpochParams::new(store, rng, "seq.global", big, cfg.seq_heads);
        let series = InterEpochParams::new(store, rng, "seq.series", big, cfg.seq_heads);
        let classifier = Linear::new(store, rng, "classifier", big, cfg.classes);
        let ch = cfg.decoder_channels;
        let decoder = cfg
            .decoder_strides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let (cin, cout) = (ch[i], ch[i + 1]);
                DeconvBlock {
                    w: store.add(&format!("decoder{i}.w"), init_uniform(rng, &[cin, cout, s], cin)),
                    b: store.add(&format!("decoder{i}.b"), init_uniform(rng, &[cout], cin)),
                    stride: s,
                }
            })
            .collect();
        Self { global, series, classifier, decoder }
    }
}

/// Fused global tokens `[B, n_seq, 2d]` and token-averaged fused series
/// features `[B, n_seq, 2d]` from the final MDTA streams over `E = B * n_seq`
/// epochs.
pub fn fuse_epochs<T: Real>(ctx: &mut Ctx<'_, '_, T>, streams: [Stream; 2], batch: usize) -> Result<(Var, Var)> {
    let e = ctx.g.shape(streams[0].global)[0];
    let n_seq = e / batch;
    let g = ctx.g.concat(&[streams[0].global, streams[1].global], 2)?;
    let big = ctx.g.shape(g)[2];
    let g = ctx.g.reshape(g, &[batch, n_seq, big])?;
    let s = ctx.g.concat(&[streams[0].series, streams[1].series], 2)?;
    let s = ctx.g.mean(s, 1)?;
    let s = ctx.g.reshape(s, &[batch, n_seq, big])?;
    Ok((g, s))
}

/// `x: [B, n_seq, D]`. Standard multi-head attention when `standard`,
/// otherwise differential attention with `lambda_init(1)`.
pub fn inter_epoch_encode<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    x: Var,
    p: &InterEpochParams,
    standard: bool,
    kind: AttnKind,
    cfg: &ModelConfig,
) -> Result<Var> {
    let site = Site { layer: 1, kind, modality: None };
    let a = if standard {
        multi_head_attn(ctx, x, x, &p.attn, site)?
    } else {
        debug_assert_eq!(p.lambda.init, lambda_init(1));
        multi_head_diff_attn(ctx, x, x, &p.attn, &p.lambda, cfg.headwise_norm, site)?
    };
    let r = ctx.g.add(x, a)?;
    p.norm.forward(ctx, r, cfg.ln_eps)
}

/// Per-epoch stage logits `[B, n_seq, C]`.
pub fn classify<T: Real>(ctx: &mut Ctx<'_, '_, T>, g: Var, p: &SequenceParams) -> Result<Var> {
    p.classifier.forward(ctx, g)
}

/// Decode `[B, n_seq, D]` features to `[B, n_seq, 2, samples]`.
pub fn reconstruct<T: Real>(ctx: &mut Ctx<'_, '_, T>, s: Var, p: &SequenceParams, cfg: &ModelConfig) -> Result<Var> {
    let &[b, n, big] = ctx.g.shape(s) else { unreachable!("reconstruct expects [B, n, D]") };
    let pos = cfg.decoder_positions;
    let mut h = ctx.g.reshape(s, &[b * n, big / pos, pos])?;
    let last = p.decoder.len() - 1;
    for (i, blk) in p.decoder.iter().enumerate() {
        let (w, bias) = (ctx.p(blk.w), ctx.p(blk.b));
        h = ctx.g.conv_transpose1d(h, w, Some(bias), blk.stride)?;
        if i != last {
            h = ctx.g.gelu(h);
        }
    }
    let t = ctx.g.shape(h)[2];
    let c = ctx.g.shape(h)[1];
    ctx.g.reshape(h, &[b, n, c, t])
}
