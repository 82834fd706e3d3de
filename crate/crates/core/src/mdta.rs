//! Multi-channel differential transformer layers.
//!
//! Per modality, the series tokens and the global token go through
//! differential self-attention. The global tokens then exchange information by
//! differential cross-attention (one shared parameter set, used in both
//! directions), and a token-wise MLP with residual and layer norm finishes the
//! layer.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{dca, dsa, AttnKind, AttnMode, AttnProj, DsaParams, LambdaParams, Modality, Site};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::forward::{Ctx, Linear, Norm};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tape::Var;

/// `Linear(d, r*d) -> GELU -> Linear(r*d, d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, d: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d, hidden),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, d),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.g.gelu(h);
        self.fc2.forward(ctx, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdtaLayerParams {
    /// 1-based position in the stack.
    pub layer: usize,
    /// Indexed by modality (EEG, EOG).
    pub dsa: [DsaParams; 2],
    pub dca: AttnProj,
    pub dca_norm: Norm,
    pub mlp: [Mlp; 2],
    pub mlp_norm: [Norm; 2],
    /// Shared by every differential attention call in the layer.
    pub lambda: LambdaParams,
}

impl MdtaLayerParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, cfg: &ModelConfig, layer: usize) -> Self {
        let (d, h) = (cfg.d, cfg.mdta_heads);
        let name = format!("mdta{layer}");
        let dsa = Modality::BOTH.map(|m| DsaParams::new(store, rng, &format!("{name}.dsa.{}", m.name()), d, h));
        let dca = AttnProj::new(store, rng, &format!("{name}.dca"), d, h);
        let dca_norm = Norm::new(store, &format!("{name}.dca.norm"), d);
        let mlp = Modality::BOTH.map(|m| Mlp::new(store, rng, &format!("{name}.mlp.{}", m.name()), d, cfg.mlp_ratio * d));
        let mlp_norm = Modality::BOTH.map(|m| Norm::new(store, &format!("{name}.mlp.{}.norm", m.name()), d));
        let lambda = LambdaParams::new(store, rng, &format!("{name}.lambda"), h, d / (2 * h), layer);
        Self { layer, dsa, dca, dca_norm, mlp, mlp_norm, lambda }
    }
}

/// Series tokens `[E, n_tok, d]` and global token `[E, 1, d]` of one modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stream {
    pub series: Var,
    pub global: Var,
}

pub fn attn_mode(cfg: &ModelConfig) -> AttnMode {
    AttnMode { differential: cfg.ablation.da, headwise_norm: cfg.headwise_norm, ln_eps: cfg.ln_eps }
}

/// One MDTA layer over the (EEG, EOG) streams.
pub fn mdta_layer<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    streams: [Stream; 2],
    p: &MdtaLayerParams,
    cfg: &ModelConfig,
) -> Result<[Stream; 2]> {
    let mode = attn_mode(cfg);
    let n_tok = ctx.g.shape(streams[0].series)[1];
    let mut after_dsa = Vec::with_capacity(2);
    for (i, m) in Modality::BOTH.into_iter().enumerate() {
        let x = ctx.g.concat(&[streams[i].series, streams[i].global], 1)?;
        let site = Site { layer: p.layer, kind: AttnKind::Dsa, modality: Some(m) };
        let y = dsa(ctx, x, &p.dsa[i], &p.lambda, mode, site)?;
        let s = ctx.g.slice(y, 1, 0, n_tok)?;
        let g = ctx.g.slice(y, 1, n_tok, 1)?;
        after_dsa.push(Stream { series: s, global: g });
    }
    let globals: Vec<Var> = if cfg.ablation.ca {
        let mut out = Vec::with_capacity(2);
        for (i, m) in Modality::BOTH.into_iter().enumerate() {
            let site = Site { layer: p.layer, kind: AttnKind::Dca, modality: Some(m) };
            let (gs, go) = (after_dsa[i].global, after_dsa[1 - i].global);
            out.push(dca(ctx, gs, go, &p.dca, &p.dca_norm, &p.lambda, mode, site)?);
        }
        out
    } else {
        after_dsa.iter().map(|s| s.global).collect()
    };
    let mut out = [streams[0]; 2];
    for i in 0..2 {
        let z = ctx.g.concat(&[after_dsa[i].series, globals[i]], 1)?;
        let h = p.mlp[i].forward(ctx, z)?;
        let h = ctx.dropout(h)?;
        let r = ctx.g.add(z, h)?;
        let y = p.mlp_norm[i].forward(ctx, r, cfg.ln_eps)?;
        out[i] = Stream { series: ctx.g.slice(y, 1, 0, n_tok)?, global: ctx.g.slice(y, 1, n_tok, 1)? };
    }
    Ok(out)
}

/// Apply `layers` in order.
pub fn mdta_stack<T: Real>(
    ctx: &mut Ctx<'_, '_, T>,
    mut streams: [Stream; 2],
    layers: &[MdtaLayerParams],
    cfg: &ModelConfig,
) -> Result<[Stream; 2]> {
    for p in layers {
        streams = mdta_layer(ctx, streams, p, cfg)?;
    }
    Ok(streams)
}
