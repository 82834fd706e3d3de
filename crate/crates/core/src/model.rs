use alloc::format;
use alloc::vec::Vec;

use crate::attention::{AttentionRecord, AttnKind, Modality};
use crate::config::ModelConfig;
use crate::embedding::{embed_epochs, init_global_token, EmbedderParams};
use crate::error::{dim_err, Result};
use crate::forward::Ctx;
use crate::mdta::{mdta_stack, MdtaLayerParams, Stream};
use crate::params::ParamStore;
use crate::rng::stream;
use crate::scalar::Real;
use crate::sequence::{classify, fuse_epochs, inter_epoch_encode, reconstruct, SequenceParams};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// The full network: per-modality embedding, MDTA stack, inter-epoch
/// attention, classifier and reconstruction decoder.
#[derive(Clone, Debug)]
pub struct SleepDiffFormer<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub embed: [EmbedderParams; 2],
    pub layers: Vec<MdtaLayerParams>,
    pub seq: SequenceParams,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `[B, n_seq, C]`
    pub logits: Var,
    /// `[B, n_seq, 2, samples]`
    pub recon: Var,
    /// Encoded fused series features `[B, n_seq, D]`.
    pub features: Var,
    /// Encoded fused global tokens `[B, n_seq, D]`.
    pub global: Var,
    /// MDTA output streams over `E = B * n_seq` epochs, (EEG, EOG).
    pub streams: [Stream; 2],
}

/// Tensor results of an evaluation pass.
#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub logits: Tensor<T>,
    pub recon: Tensor<T>,
    pub features: Tensor<T>,
    pub records: Vec<AttentionRecord<T>>,
}

impl<T: Real> SleepDiffFormer<T> {
    /// Initialise every parameter from `seed`. Each module draws from its own
    /// stream, so changing one part of the configuration leaves the others'
    /// initial values unchanged.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let embed = Modality::BOTH.map(|m| {
            let mut rng = stream(seed, &format!("init.embed.{}", m.name()));
            EmbedderParams::new(&mut store, &mut rng, &config, m)
        });
        let layers = (1..=config.layers)
            .map(|l| MdtaLayerParams::new(&mut store, &mut stream(seed, &format!("init.mdta{l}")), &config, l))
            .collect();
        let seq = SequenceParams::new(&mut store, &mut stream(seed, "init.seq"), &config);
        Ok(Self { config, store, embed, layers, seq })
    }

    /// Same architecture and parameter values at another precision.
    pub fn cast<U: Real>(&self) -> SleepDiffFormer<U> {
        SleepDiffFormer {
            config: self.config.clone(),
            store: self.store.cast(),
            embed: self.embed,
            layers: self.layers.clone(),
            seq: self.seq.clone(),
        }
    }

    /// Forward pass for `x: [B, n_seq, 2, samples]` (channel 0 EEG, 1 EOG).
    pub fn forward(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<ModelOutput> {
        let cfg = &self.config;
        let &[b, n, c, t] = ctx.g.shape(x) else {
            return Err(dim_err!("model input must be [batch, epochs, 2, samples], got {:?}", ctx.g.shape(x)));
        };
        if n != cfg.n_seq || c != 2 || t != cfg.samples {
            return Err(dim_err!("model input {:?} does not match [B, {}, 2, {}]", ctx.g.shape(x), cfg.n_seq, cfg.samples));
        }
        let e = b * n;
        let flat = ctx.g.reshape(x, &[e, 2, t])?;
        let mut streams = Vec::with_capacity(2);
        for (i, p) in self.embed.iter().enumerate() {
            let ch = ctx.g.slice(flat, 1, i, 1)?;
            let ch = ctx.g.reshape(ch, &[e, t])?;
            let series = embed_epochs(ctx, ch, p, cfg)?;
            let global = init_global_token(ctx, p, e)?;
            streams.push(Stream { series, global });
        }
        let streams = mdta_stack(ctx, [streams[0], streams[1]], &self.layers, cfg)?;
        let (g, s) = fuse_epochs(ctx, streams, b)?;
        let standard = cfg.ablation.id;
        let global = inter_epoch_encode(ctx, g, &self.seq.global, standard, AttnKind::SeqGlobal, cfg)?;
        let features = inter_epoch_encode(ctx, s, &self.seq.series, standard, AttnKind::SeqSeries, cfg)?;
        let logits = classify(ctx, global, &self.seq)?;
        let recon = reconstruct(ctx, features, &self.seq, cfg)?;
        Ok(ModelOutput { logits, recon, features, global, streams })
    }

    /// Evaluation-mode pass over `x: [B, n_seq, 2, samples]`, optionally
    /// collecting every attention map.
    pub fn infer(&self, x: &Tensor<T>, capture: bool) -> Result<Inference<T>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::eval(&mut g, &self.store);
        if capture {
            ctx.capture_attention();
        }
        let xv = ctx.g.constant(x.clone());
        let out = self.forward(&mut ctx, xv)?;
        let records = ctx.take_records();
        Ok(Inference {
            logits: g.value(out.logits).clone(),
            recon: g.value(out.recon).clone(),
            features: g.value(out.features).clone(),
            records,
        })
    }

    /// Predicted stage per epoch, `B * n_seq` entries in batch order.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.infer(x, false)?.logits))
    }
}

/// Index of the largest entry of each last-axis row (first on ties).
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    t.data()
        .chunks(t.last_dim())
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
