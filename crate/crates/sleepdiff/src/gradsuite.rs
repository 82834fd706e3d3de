//! Central-difference checks of every differentiable building block, run in
//! 64-bit over several seeds.

use std::time::Instant;

use sleepdiff_core::attention::{
    diff_attn_head, lambda_init, multi_head_diff_attn, AttnKind, AttnProj, LambdaParams, Site,
};
use sleepdiff_core::forward::Ctx;
use sleepdiff_core::gradcheck::{grad_check, random_tensor, GradCheckError};
use sleepdiff_core::losses::{cls_loss, cov_loss, exp_loss, rec_loss, seq_align_loss};
use sleepdiff_core::mdta::{mdta_layer, MdtaLayerParams, Stream};
use sleepdiff_core::rng::stream;
use sleepdiff_core::{Error, Graph, ModelConfig, ParamStore, Tensor, Var};

pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub seeds: usize,
    pub coordinates: usize,
    pub max_error: f64,
    pub failure: Option<String>,
    pub seconds: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

type Case = (&'static str, fn(u64, f64) -> Result<(usize, f64), GradCheckError>);

pub const CASES: [Case; 17] = [
    ("linear", linear),
    ("matmul", matmul),
    ("conv1d", conv1d),
    ("conv1d_strided", conv1d_strided),
    ("conv_transpose1d", conv_transpose1d),
    ("max_pool1d", max_pool1d),
    ("gelu", gelu),
    ("softmax_rows", softmax_rows),
    ("layer_norm", layer_norm),
    ("rms_norm", rms_norm),
    ("diff_attn_head", diff_attn),
    ("multi_head_diff_attn", multi_head),
    ("mdta_layer", mdta),
    ("loss_cls", loss_cls),
    ("loss_rec", loss_rec),
    ("loss_exp_cov", loss_exp_cov),
    ("loss_seq_pcc", loss_seq),
];

fn rt(seed: u64, tag: &str, shape: &[usize]) -> Tensor<f64> {
    random_tensor(seed, tag, shape, 1.0)
}

fn report(r: Result<sleepdiff_core::gradcheck::GradReport, GradCheckError>) -> Result<(usize, f64), GradCheckError> {
    r.map(|r| (r.coordinates, r.max_error))
}

fn linear(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "x", &[3, 2, 4]), rt(seed, "w", &[4, 5]), rt(seed, "b", &[5])];
    report(grad_check(|g, v| g.linear(v[0], v[1], Some(v[2])), &inputs, tol))
}

fn matmul(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "a", &[2, 3, 4]), rt(seed, "b", &[2, 5, 4])];
    report(grad_check(|g, v| g.matmul_t(v[0], v[1], false, true), &inputs, tol))
}

fn conv1d(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "x", &[2, 3, 11]), rt(seed, "w", &[4, 3, 7]), rt(seed, "b", &[4])];
    report(grad_check(|g, v| g.conv1d(v[0], v[1], Some(v[2]), 1, 3), &inputs, tol))
}

fn conv1d_strided(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "x", &[2, 2, 12]), rt(seed, "w", &[3, 2, 4])];
    report(grad_check(|g, v| g.conv1d(v[0], v[1], None, 3, 1), &inputs, tol))
}

fn conv_transpose1d(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "x", &[2, 3, 4]), rt(seed, "w", &[3, 2, 5]), rt(seed, "b", &[2])];
    report(grad_check(|g, v| g.conv_transpose1d(v[0], v[1], Some(v[2]), 5), &inputs, tol))
}

fn max_pool1d(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "x", &[2, 3, 15])];
    report(grad_check(|g, v| g.max_pool1d(v[0], 5), &inputs, tol))
}

fn gelu(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [random_tensor(seed, "x", &[4, 6], 3.0)];
    report(grad_check(|g, v| Ok(g.gelu(v[0])), &inputs, tol))
}

fn softmax_rows(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [random_tensor(seed, "x", &[2, 3, 6], 2.0)];
    report(grad_check(|g, v| Ok(g.softmax(v[0])), &inputs, tol))
}

fn layer_norm(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "x", &[3, 6]), rt(seed, "g", &[6]), rt(seed, "b", &[6])];
    report(grad_check(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), &inputs, tol))
}

fn rms_norm(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "x", &[3, 6])];
    report(grad_check(|g, v| Ok(g.rms_norm(v[0], 1e-5)), &inputs, tol))
}

/// One head with lambda built from its four re-parameterisation vectors.
fn diff_attn(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let (n, m, dh) = (4, 5, 3);
    let mut inputs = vec![
        rt(seed, "q1", &[2, n, dh]),
        rt(seed, "q2", &[2, n, dh]),
        rt(seed, "k1", &[2, m, dh]),
        rt(seed, "k2", &[2, m, dh]),
        rt(seed, "v", &[2, m, 2 * dh]),
    ];
    for tag in ["lq1", "lk1", "lq2", "lk2"] {
        inputs.push(random_tensor(seed, tag, &[dh], 0.5));
    }
    let init = lambda_init(2);
    report(grad_check(
        |g, v| {
            let d1 = g.dot(v[5], v[6])?;
            let d2 = g.dot(v[7], v[8])?;
            let (e1, e2) = (g.exp(d1), g.exp(d2));
            let diff = g.sub(e1, e2)?;
            let lambda = g.add_const(diff, init);
            let (out, map) = diff_attn_head(g, v[0], v[1], v[2], v[3], v[4], lambda)?;
            let s = g.sum_sq(map);
            let o = g.sum(out);
            g.add(s, o)
        },
        &inputs,
        tol,
    ))
}

/// Check `f` with respect to `extra` inputs and every parameter of `store`.
fn with_store<F>(store: &ParamStore<f64>, extra: Vec<Tensor<f64>>, tol: f64, f: F) -> Result<(usize, f64), GradCheckError>
where
    F: Fn(&mut Ctx<'_, '_, f64>, &[Var]) -> Result<Var, Error>,
{
    let n_extra = extra.len();
    let mut inputs = extra;
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    let ids: Vec<_> = store.ids().collect();
    report(grad_check(
        |g: &mut Graph<f64>, v: &[Var]| {
            let mut ctx = Ctx::with_grads(g, store);
            for (id, &var) in ids.iter().zip(&v[n_extra..]) {
                ctx.bind(*id, var);
            }
            f(&mut ctx, &v[..n_extra])
        },
        &inputs,
        tol,
    ))
}

/// Randomise every parameter, including norm gains, so no gradient is
/// checked only at a special point.
fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let names: Vec<(String, Vec<usize>)> = store.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
    for (name, shape) in names {
        let t = random_tensor(seed, &name, &shape, 0.5);
        store.set(&name, t).expect("same shape");
    }
}

fn multi_head(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let (d, heads) = (8, 2);
    let mut store = ParamStore::<f64>::new();
    let mut rng = stream(seed, "grad.mhda");
    let proj = AttnProj::new(&mut store, &mut rng, "a", d, heads);
    let lam = LambdaParams::new(&mut store, &mut rng, "a.lambda", heads, d / (2 * heads), 3);
    jitter(&mut store, seed);
    let site = Site { layer: 3, kind: AttnKind::Dsa, modality: None };
    let extra = vec![rt(seed, "xq", &[2, 3, d]), rt(seed, "xkv", &[2, 4, d])];
    with_store(&store, extra, tol, |ctx, v| multi_head_diff_attn(ctx, v[0], v[1], &proj, &lam, true, site))
}

fn mdta(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let mut cfg = ModelConfig::with_width(8, 1);
    cfg.mdta_heads = 2;
    cfg.mlp_ratio = 2;
    let mut store = ParamStore::<f64>::new();
    let p = MdtaLayerParams::new(&mut store, &mut stream(seed, "grad.mdta"), &cfg, 1);
    jitter(&mut store, seed);
    let (e, n) = (2, 3);
    let extra = vec![rt(seed, "s0", &[e, n, 8]), rt(seed, "g0", &[e, 1, 8]), rt(seed, "s1", &[e, n, 8]), rt(seed, "g1", &[e, 1, 8])];
    with_store(&store, extra, tol, |ctx, v| {
        let streams = [Stream { series: v[0], global: v[1] }, Stream { series: v[2], global: v[3] }];
        let [a, b] = mdta_layer(ctx, streams, &p, &cfg)?;
        let parts = [a.series, a.global, b.series, b.global];
        let flat = parts
            .iter()
            .map(|&x| {
                let len = ctx.g.value(x).len();
                ctx.g.reshape(x, &[len])
            })
            .collect::<Result<Vec<_>, _>>()?;
        ctx.g.concat(&flat, 0)
    })
}

fn loss_cls(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let labels: Vec<usize> = (0..6).map(|i| (i * 7 + seed as usize) % 5).collect();
    let inputs = [random_tensor(seed, "logits", &[6, 5], 3.0)];
    report(grad_check(|g, v| cls_loss(g, v[0], &labels), &inputs, tol))
}

fn loss_rec(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let target = rt(seed, "target", &[2, 3, 7]);
    let inputs = [rt(seed, "recon", &[2, 3, 7])];
    report(grad_check(|g, v| rec_loss(g, v[0], target.clone()), &inputs, tol))
}

fn loss_exp_cov(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "f0", &[5, 3]), rt(seed, "f1", &[4, 3]), rt(seed, "f2", &[6, 3])];
    report(grad_check(
        |g, v| {
            let e = exp_loss(g, v)?;
            let c = cov_loss(g, v)?;
            let c = g.scale(c, 0.7);
            g.add(e, c)
        },
        &inputs,
        tol,
    ))
}

fn loss_seq(seed: u64, tol: f64) -> Result<(usize, f64), GradCheckError> {
    let inputs = [rt(seed, "s0", &[2, 4, 5]), rt(seed, "s1", &[3, 4, 5])];
    report(grad_check(seq_align_loss, &inputs, tol))
}

/// Run every case over `seeds` seeds (0, 1, ...).
pub fn run_suite(seeds: u64, tol: f64) -> Vec<CaseResult> {
    CASES
        .iter()
        .map(|&(name, case)| {
            let start = Instant::now();
            let (mut coordinates, mut max_error, mut failure) = (0, 0.0f64, None);
            for seed in 0..seeds {
                match case(seed, tol) {
                    Ok((c, e)) => {
                        coordinates += c;
                        max_error = max_error.max(e);
                    }
                    Err(e) => {
                        failure = Some(format!("seed {seed}: {e}"));
                        break;
                    }
                }
            }
            CaseResult { name, seeds: seeds as usize, coordinates, max_error, failure, seconds: start.elapsed().as_secs_f64() }
        })
        .collect()
}
