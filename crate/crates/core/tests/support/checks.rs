//! Model-level invariant checks shared by the core tests and the acceptance
//! run. Each returns a one-line summary on success.

use sleepdiff_core::attention::{multi_head_diff_attn, AttnKind, AttnProj, LambdaParams, Site};
use sleepdiff_core::forward::Ctx;
use sleepdiff_core::gradcheck::random_tensor;
use sleepdiff_core::rng::stream;
use sleepdiff_core::{Ablation, Graph, ModelConfig, ParamStore, Real, SleepDiffFormer, Tensor};

pub type Check = Result<String, String>;

fn input(seed: u64, cfg: &ModelConfig) -> Tensor<f32> {
    random_tensor(seed, "input", &[1, cfg.n_seq, 2, cfg.samples], 1.0).cast()
}

/// Spread the lambda vectors wider than their init so lambda varies a lot
/// between heads and layers.
fn widen_lambdas(model: &mut SleepDiffFormer<f32>, seed: u64) {
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.name(id).contains(".l")).collect();
    for id in ids {
        let name = model.store.name(id).to_string();
        if !["lq1", "lk1", "lq2", "lk2"].iter().any(|s| name.ends_with(s)) {
            continue;
        }
        let shape = model.store.get(id).shape().to_vec();
        *model.store.get_mut(id) = random_tensor(seed, &name, &shape, 0.4).cast();
    }
}

/// Every captured map row sums to `1 - lambda` on `inputs` random inputs,
/// alternating standard and differential inter-epoch attention.
pub fn row_sums(inputs: u64, tol: f64) -> Check {
    let mut worst = 0.0f64;
    let mut maps = 0usize;
    let mut lambdas = (f64::MAX, f64::MIN);
    for id in [true, false] {
        let mut cfg = ModelConfig::with_width(32, 2);
        cfg.ablation.id = id;
        for seed in (0..inputs).filter(|s| (s % 2 == 0) == id) {
            let mut model = SleepDiffFormer::<f32>::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
            widen_lambdas(&mut model, seed);
            let records = model.infer(&input(seed, &cfg), true).map_err(|e| e.to_string())?.records;
            for kind in [AttnKind::Dsa, AttnKind::Dca, AttnKind::SeqGlobal, AttnKind::SeqSeries] {
                if !records.iter().any(|r| r.kind == kind) {
                    return Err(format!("no {} maps captured", kind.name()));
                }
            }
            for r in &records {
                maps += 1;
                if r.kind != AttnKind::SeqGlobal && r.kind != AttnKind::SeqSeries || !id {
                    lambdas = (lambdas.0.min(r.lambda), lambdas.1.max(r.lambda));
                }
                for row in r.map.data().chunks(r.map.last_dim()) {
                    let s: f64 = row.iter().map(|&v| v as f64).sum();
                    let err = (s - (1.0 - r.lambda)).abs();
                    worst = worst.max(err);
                    if err > tol {
                        return Err(format!("{} layer {} head {}: row sum {s} vs 1 - {}", r.kind.name(), r.layer, r.head, r.lambda));
                    }
                }
            }
        }
    }
    Ok(format!("{maps} maps, lambda in [{:.3}, {:.3}], max |row sum - (1 - lambda)| = {worst:.1e}", lambdas.0, lambdas.1))
}

struct Head {
    store: ParamStore<f64>,
    proj: AttnProj,
    lam: LambdaParams,
}

fn head_setup(seed: u64, d: usize, heads: usize, init: f64) -> Head {
    let mut store = ParamStore::<f64>::new();
    let mut rng = stream(seed, "check.attn");
    let proj = AttnProj::new(&mut store, &mut rng, "a", d, heads);
    let mut lam = LambdaParams::new(&mut store, &mut rng, "a.lambda", heads, d / (2 * heads), 1);
    for id in lam.ids() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    lam.init = init;
    Head { store, proj, lam }
}

fn linear_ref(x: &[f64], rows: usize, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            y[r * dout + o] = b.data()[o] + (0..din).map(|i| x[r * din + i] * w.data()[i * dout + o]).sum::<f64>();
        }
    }
    y
}

/// With lambda = 0 the differential block is plain softmax attention on the
/// first query/key halves; compared with a loop-based reference.
pub fn lambda_zero_matches_reference(seeds: u64, tol: f64) -> Check {
    let (b, nq, nk, d, heads) = (2, 5, 7, 16, 2);
    let dh = d / (2 * heads);
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let h = head_setup(seed, d, heads, 0.0);
        let xq = random_tensor(seed, "xq", &[b, nq, d], 1.0);
        let xkv = random_tensor(seed, "xkv", &[b, nk, d], 1.0);
        let mut g = Graph::new();
        let mut ctx = Ctx::eval(&mut g, &h.store);
        let (vq, vk) = (ctx.g.constant(xq.clone()), ctx.g.constant(xkv.clone()));
        let site = Site { layer: 1, kind: AttnKind::Dsa, modality: None };
        let out = multi_head_diff_attn(&mut ctx, vq, vk, &h.proj, &h.lam, false, site).map_err(|e| e.to_string())?;
        let got = g.value(out).data().to_vec();

        let p = |id| h.store.get(id);
        let q = linear_ref(xq.data(), b * nq, p(h.proj.q.w), p(h.proj.q.b));
        let k = linear_ref(xkv.data(), b * nk, p(h.proj.k.w), p(h.proj.k.b));
        let v = linear_ref(xkv.data(), b * nk, p(h.proj.v.w), p(h.proj.v.b));
        let mut cat = vec![0.0; b * nq * d];
        for bi in 0..b {
            for hd in 0..heads {
                let base = hd * 2 * dh;
                for i in 0..nq {
                    let logits: Vec<f64> = (0..nk)
                        .map(|j| (0..dh).map(|c| q[(bi * nq + i) * d + base + c] * k[(bi * nk + j) * d + base + c]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                    for c in 0..2 * dh {
                        cat[(bi * nq + i) * d + base + c] =
                            (0..nk).map(|j| (logits[j] - m).exp() / z * v[(bi * nk + j) * d + base + c]).sum();
                    }
                }
            }
        }
        let want = linear_ref(&cat, b * nq, p(h.proj.o.w), p(h.proj.o.b));
        for (x, y) in got.iter().zip(&want) {
            worst = worst.max((x - y).abs());
        }
        if worst > tol {
            return Err(format!("seed {seed}: max deviation {worst:.2e}"));
        }
    }
    Ok(format!("{seeds} seeds, max deviation from standard attention {worst:.1e}"))
}

/// lambda = 1 with both query halves and both key halves tied: every map is
/// exactly zero.
pub fn tied_halves_cancel(seeds: u64) -> Check {
    let (d, heads) = (16, 2);
    let dh = d / (2 * heads);
    let mut maps = 0;
    for seed in 0..seeds {
        let mut h = head_setup(seed, d, heads, 1.0);
        for id in [h.proj.q.w, h.proj.k.w] {
            let w = h.store.get_mut(id);
            for r in 0..d {
                for hd in 0..heads {
                    for c in 0..dh {
                        let base = r * d + hd * 2 * dh;
                        w.data_mut()[base + dh + c] = w.data()[base + c];
                    }
                }
            }
        }
        for id in [h.proj.q.b, h.proj.k.b] {
            let bias = h.store.get_mut(id);
            for hd in 0..heads {
                for c in 0..dh {
                    bias.data_mut()[hd * 2 * dh + dh + c] = bias.data()[hd * 2 * dh + c];
                }
            }
        }
        let store32 = cast_store(&h.store);
        let x: Tensor<f32> = random_tensor(seed, "x", &[3, 6, d], 2.0).cast();
        let mut g = Graph::new();
        let mut ctx = Ctx::eval(&mut g, &store32);
        ctx.capture_attention();
        let v = ctx.g.constant(x);
        let site = Site { layer: 1, kind: AttnKind::Dsa, modality: None };
        multi_head_diff_attn(&mut ctx, v, v, &h.proj, &h.lam, true, site).map_err(|e| e.to_string())?;
        for r in ctx.take_records() {
            maps += 1;
            if r.lambda != 1.0 || r.map.data().iter().any(|&m| m != 0.0) {
                return Err(format!("seed {seed} head {}: lambda {} and nonzero map entries", r.head, r.lambda));
            }
        }
    }
    Ok(format!("{maps} maps, all entries exactly 0"))
}

fn cast_store<U: Real>(s: &ParamStore<f64>) -> ParamStore<U> {
    let mut out = ParamStore::new();
    for (name, t) in s.iter() {
        out.add(name, t.cast());
    }
    out
}

fn stream_values(model: &SleepDiffFormer<f32>, x: &Tensor<f32>) -> Result<[Vec<f32>; 4], String> {
    let mut g = Graph::new();
    let mut ctx = Ctx::eval(&mut g, &model.store);
    let v = ctx.g.constant(x.clone());
    let out = model.forward(&mut ctx, v).map_err(|e| e.to_string())?;
    let [eeg, eog] = out.streams;
    Ok([eeg.series, eeg.global, eog.series, eog.global].map(|v| g.value(v).data().to_vec()))
}

fn bitwise_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// With cross-modal attention off, the EEG stream leaving the MDTA stack does
/// not depend on the EOG input at all; with it on, it does.
pub fn ca_off_isolates_eeg(seeds: u64) -> Check {
    for seed in 0..seeds {
        let mut cfg = ModelConfig::with_width(32, 2);
        let x = input(seed, &cfg);
        let mut y = x.clone();
        let (n, t) = (cfg.n_seq, cfg.samples);
        let other: Tensor<f32> = random_tensor(seed, "other eog", &[n * t], 3.0).cast();
        for e in 0..n {
            y.data_mut()[(2 * e + 1) * t..(2 * e + 2) * t].copy_from_slice(&other.data()[e * t..(e + 1) * t]);
        }
        for ca in [false, true] {
            cfg.ablation.ca = ca;
            let model = SleepDiffFormer::<f32>::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
            let (a, b) = (stream_values(&model, &x)?, stream_values(&model, &y)?);
            let same = bitwise_eq(&a[0], &b[0]) && bitwise_eq(&a[1], &b[1]);
            if same != !ca {
                return Err(format!("seed {seed}, ca={ca}: EEG stream {} on EOG change", if same { "unchanged" } else { "changed" }));
            }
            if bitwise_eq(&a[2], &b[2]) {
                return Err(format!("seed {seed}: EOG stream ignored its own input"));
            }
        }
    }
    Ok(format!("{seeds} seeds: EEG stream bitwise unchanged with CA off, changed with CA on"))
}

/// All switches on (set explicitly) is the default build.
pub fn all_flags_equal_default(seed: u64) -> Check {
    let default_cfg = ModelConfig::standard();
    let mut explicit = ModelConfig::with_width(128, 4);
    explicit.ablation = Ablation { da: true, se: true, ca: true, fa: true, id: true };
    let mut kv = ModelConfig::standard();
    for f in ["da", "se", "ca", "fa", "id"] {
        kv.apply_kv(&format!("ablation.{f}"), "true").map_err(|e| e.to_string())?;
    }
    let base = SleepDiffFormer::<f32>::new(default_cfg, seed).map_err(|e| e.to_string())?;
    let x = input(seed, &base.config);
    let want = base.infer(&x, false).map_err(|e| e.to_string())?;
    for cfg in [explicit, kv] {
        let m = SleepDiffFormer::<f32>::new(cfg, seed).map_err(|e| e.to_string())?;
        if m.store.iter().zip(base.store.iter()).any(|((na, a), (nb, b))| na != nb || !bitwise_eq(a.data(), b.data())) {
            return Err("parameters differ from the default build".into());
        }
        let got = m.infer(&x, false).map_err(|e| e.to_string())?;
        if !bitwise_eq(got.logits.data(), want.logits.data()) || !bitwise_eq(got.recon.data(), want.recon.data()) {
            return Err("outputs differ from the default build".into());
        }
    }
    Ok(format!("{} parameters and all outputs bitwise equal", base.store.numel()))
}

/// Accuracy and macro-F1 from predictions, against precision/recall
/// computed by hand from random confusion matrices.
pub fn metrics_oracle(matrices: u64, tol: f64) -> Check {
    use sleepdiff_core::metrics::MetricsReport;
    use sleepdiff_core::rng::below;
    let mut worst = 0.0f64;
    for seed in 0..matrices {
        let mut rng = stream(seed, "check.confusion");
        let c: Vec<Vec<u64>> = (0..5).map(|_| (0..5).map(|_| below(&mut rng, 40) as u64).collect()).collect();
        let (mut truth, mut pred) = (Vec::new(), Vec::new());
        for (t, row) in c.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                truth.extend(std::iter::repeat_n(t, n as usize));
                pred.extend(std::iter::repeat_n(p, n as usize));
            }
        }
        let total: u64 = c.iter().flatten().sum();
        let acc = 100.0 * (0..5).map(|k| c[k][k]).sum::<u64>() as f64 / total as f64;
        let f1: f64 = (0..5)
            .map(|k| {
                let tp = c[k][k] as f64;
                let predicted: u64 = (0..5).map(|t| c[t][k]).sum();
                let actual: u64 = c[k].iter().sum();
                let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
                if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
            })
            .sum::<f64>()
            * 20.0;
        let m = MetricsReport::from_predictions(&truth, &pred).map_err(|e| e.to_string())?;
        let err = (m.accuracy - acc).abs().max((m.macro_f1 - f1).abs());
        worst = worst.max(err);
        if err > tol {
            return Err(format!("matrix {seed}: ({}, {}) vs ({acc}, {f1})", m.accuracy, m.macro_f1));
        }
    }
    Ok(format!("{matrices} matrices, max deviation {worst:.1e}"))
}

/// Averaging the five per-dataset scores of the published table.
pub fn published_averages() -> Check {
    use sleepdiff_core::metrics::average;
    let acc = average(&[78.19, 75.82, 76.46, 76.39, 74.72]);
    let mf1 = average(&[72.44, 73.39, 73.22, 68.33, 71.78]);
    let (a, f) = (format!("{acc:.2}"), format!("{mf1:.2}"));
    if (a.as_str(), f.as_str()) == ("76.32", "71.83") {
        Ok(format!("ACC {a}, MF1 {f}"))
    } else {
        Err(format!("ACC {a}, MF1 {f}; expected 76.32 / 71.83"))
    }
}
