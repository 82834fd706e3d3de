//! Raw signal to series tokens.
//!
//! Three blocks of `conv1d(k=7, pad=3) -> GELU -> max-pool` reduce a 3000-sample
//! epoch by 5 x 5 x 6 = 150 to 20 tokens of width `d`, after which a learnable
//! positional table is added. The patching variant instead projects each
//! non-overlapping 150-sample patch linearly to `d`.

use alloc::format;

use crate::attention::Modality;
use crate::config::ModelConfig;
use crate::error::{dim_err, Result};
use crate::forward::{Ctx, Linear};
use crate::params::{init_uniform, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBlock {
    pub w: ParamId,
    pub b: ParamId,
    pub pool: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tokenizer {
    Conv([ConvBlock; 3]),
    Patch(Linear),
}

/// Embedding parameters for one modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbedderParams {
    pub tokenizer: Tokenizer,
    /// `[n_tok, d]`
    pub pos: ParamId,
    /// `[d]`
    pub global: ParamId,
}

impl EmbedderParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, cfg: &ModelConfig, modality: Modality) -> Self {
        let name = format!("embed.{}", modality.name());
        let tokenizer = if cfg.ablation.se {
            let k = cfg.conv_kernel;
            let mut cin = 1;
            let mut block = |i: usize| {
                let cout = cfg.conv_channels[i];
                let fan = cin * k;
                let w = store.add(&format!("{name}.conv{i}.w"), init_uniform(rng, &[cout, cin, k], fan));
                let b = store.add(&format!("{name}.conv{i}.b"), init_uniform(rng, &[cout], fan));
                cin = cout;
                ConvBlock { w, b, pool: cfg.pools[i] }
            };
            Tokenizer::Conv([block(0), block(1), block(2)])
        } else {
            Tokenizer::Patch(Linear::new(store, rng, &format!("{name}.patch"), cfg.patch(), cfg.d))
        };
        let pos = store.add(&format!("{name}.pos"), init_uniform(rng, &[cfg.n_tok, cfg.d], cfg.d));
        let global = store.add(&format!("{name}.global"), init_uniform(rng, &[cfg.d], cfg.d));
        Self { tokenizer, pos, global }
    }
}

/// Tokens before the positional table: `x: [E, T]` to `[E, n_tok, d]`.
pub fn tokenize<T: Real>(ctx: &mut Ctx<'_, '_, T>, x: Var, p: &EmbedderParams, cfg: &ModelConfig) -> Result<Var> {
    let &[e, t] = ctx.g.shape(x) else {
        return Err(dim_err!("embed: expected [epochs, samples], got {:?}", ctx.g.shape(x)));
    };
    if t != cfg.samples {
        return Err(dim_err!("embed: epoch has {t} samples, expected {}", cfg.samples));
    }
    match &p.tokenizer {
        Tokenizer::Conv(blocks) => {
            let pad = cfg.conv_kernel / 2;
            let mut h = ctx.g.reshape(x, &[e, 1, t])?;
            for b in blocks {
                let (w, bias) = (ctx.p(b.w), ctx.p(b.b));
                h = ctx.g.conv1d(h, w, Some(bias), 1, pad)?;
                h = ctx.g.gelu(h);
                h = ctx.g.max_pool1d(h, b.pool)?;
            }
            if ctx.g.shape(h)[2] != cfg.n_tok {
                return Err(dim_err!("embed: conv stack produced {} tokens, expected {}", ctx.g.shape(h)[2], cfg.n_tok));
            }
            ctx.g.transpose(h)
        }
        Tokenizer::Patch(lin) => {
            let h = ctx.g.reshape(x, &[e, cfg.n_tok, cfg.patch()])?;
            lin.forward(ctx, h)
        }
    }
}

/// Series tokens `[E, n_tok, d]` for a batch of single-channel epochs
/// `x: [E, T]`: tokenizer output plus positional table, then dropout.
pub fn embed_epochs<T: Real>(ctx: &mut Ctx<'_, '_, T>, x: Var, p: &EmbedderParams, cfg: &ModelConfig) -> Result<Var> {
    let tok = tokenize(ctx, x, p, cfg)?;
    let pos = ctx.p(p.pos);
    let h = ctx.g.add_bcast(tok, pos)?;
    ctx.dropout(h)
}

/// The modality's global token repeated for `e` epochs: `[E, 1, d]`.
pub fn init_global_token<T: Real>(ctx: &mut Ctx<'_, '_, T>, p: &EmbedderParams, e: usize) -> Result<Var> {
    let gv = ctx.p(p.global);
    let d = ctx.g.shape(gv)[0];
    let g1 = ctx.g.reshape(gv, &[1, d])?;
    Ok(ctx.g.expand(g1, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tape::Graph;
    use crate::tensor::Tensor;
    use alloc::vec::Vec;

    fn setup(d: usize) -> (ModelConfig, ParamStore<f64>, EmbedderParams) {
        let cfg = ModelConfig::with_width(d, 1);
        let mut store = ParamStore::new();
        let p = EmbedderParams::new(&mut store, &mut stream(0, "embed"), &cfg, Modality::Eeg);
        (cfg, store, p)
    }

    fn run(cfg: &ModelConfig, store: &ParamStore<f64>, p: &EmbedderParams, x: Tensor<f64>, pe: bool) -> Tensor<f64> {
        let mut g = Graph::new();
        let mut ctx = Ctx::eval(&mut g, store);
        let xv = ctx.g.constant(x);
        let out = if pe { embed_epochs(&mut ctx, xv, p, cfg) } else { tokenize(&mut ctx, xv, p, cfg) }.unwrap();
        ctx.g.value(out).clone()
    }

    fn signal(seed: u64) -> Vec<f64> {
        crate::gradcheck::random_tensor(seed, "sig", &[3000], 1.0).into_data()
    }

    #[test]
    fn shape_and_determinism() {
        let (cfg, store, p) = setup(16);
        let x = Tensor::new(&[2, 3000], [signal(1), signal(2)].concat()).unwrap();
        let a = run(&cfg, &store, &p, x.clone(), true);
        assert_eq!(a.shape(), &[2, 20, 16]);
        assert_eq!(a, run(&cfg, &store, &p, x, true));
        let z = run(&cfg, &store, &p, Tensor::zeros(&[1, 3000]), true);
        assert_eq!(z, run(&cfg, &store, &p, Tensor::zeros(&[1, 3000]), true));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let (cfg, store, p) = setup(8);
        let mut g = Graph::new();
        let mut ctx = Ctx::eval(&mut g, &store);
        let x = ctx.g.constant(Tensor::zeros(&[1, 2999]));
        assert!(embed_epochs(&mut ctx, x, &p, &cfg).is_err());
    }

    #[test]
    fn late_samples_only_reach_last_tokens() {
        let (cfg, store, p) = setup(16);
        let a = signal(3);
        let mut b = a.clone();
        for v in &mut b[2900..] {
            *v += 5.0;
        }
        let ta = run(&cfg, &store, &p, Tensor::new(&[1, 3000], a).unwrap(), true);
        let tb = run(&cfg, &store, &p, Tensor::new(&[1, 3000], b).unwrap(), true);
        let row = 16;
        assert_eq!(ta.data()[..18 * row], tb.data()[..18 * row]);
        assert_ne!(ta.data()[18 * row..], tb.data()[18 * row..]);
    }

    #[test]
    fn shift_by_one_patch_shifts_interior_tokens() {
        let (cfg, store, p) = setup(16);
        let a = signal(4);
        let mut b = alloc::vec![0.0; 3000];
        b[150..].copy_from_slice(&a[..2850]);
        let ta = run(&cfg, &store, &p, Tensor::new(&[1, 3000], a).unwrap(), false);
        let tb = run(&cfg, &store, &p, Tensor::new(&[1, 3000], b).unwrap(), false);
        for j in 1..18 {
            for c in 0..16 {
                assert!((ta.at(&[0, j, c]) - tb.at(&[0, j + 1, c])).abs() < 1e-12, "token {j}");
            }
        }
    }

    #[test]
    fn patch_tokenizer_shape() {
        let mut cfg = ModelConfig::with_width(8, 1);
        cfg.ablation.se = false;
        let mut store = ParamStore::new();
        let p = EmbedderParams::new(&mut store, &mut stream(0, "embed"), &cfg, Modality::Eog);
        let out = run(&cfg, &store, &p, Tensor::new(&[1, 3000], signal(5)).unwrap(), true);
        assert_eq!(out.shape(), &[1, 20, 8]);
        assert!(store.id("embed.eog.patch.w").is_some());
    }
}
