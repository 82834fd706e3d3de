//! Training objective: classification, reconstruction and the cross-domain
//! alignment terms.
//!
//! All `Σ_{i≠j}` sums run over ordered domain pairs, so every unordered pair
//! is counted twice.

use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::scalar::Real;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Rows with centred L2 norm at or below this are treated as constant.
pub const PCC_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rec: 0.5, align: 0.5 }
    }
}

/// Loss values of one step. `epo = exp + cov`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    /// Cross-entropy summed over the epochs of a sequence, averaged over
    /// sequences.
    pub cls: f64,
    /// Cross-entropy averaged over epochs, for reporting.
    pub cls_per_epoch: f64,
    pub rec: f64,
    pub exp: f64,
    pub cov: f64,
    pub epo: f64,
    pub seq: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBundle {
    /// Combine component values with `total = cls + w.rec*rec + w.align*(epo + seq)`.
    pub fn combine(cls: f64, cls_per_epoch: f64, rec: f64, exp: f64, cov: f64, seq: f64, weights: LossWeights) -> Self {
        let epo = exp + cov;
        let total = cls + weights.rec * rec + weights.align * (epo + seq);
        Self { cls, cls_per_epoch, rec, exp, cov, epo, seq, total, weights }
    }
}

/// Summed cross-entropy of `logits: [B, N, C]` divided by `B`.
pub fn cls_loss<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let b = g.shape(logits)[0];
    let ce = g.cross_entropy(logits, labels)?;
    Ok(g.scale(ce, T::of(1.0 / b as f64)))
}

/// Mean squared error over every sample.
pub fn rec_loss<T: Real>(g: &mut Graph<T>, recon: Var, target: Tensor<T>) -> Result<Var> {
    g.mse(recon, target)
}

fn pairwise_sq<T: Real>(g: &mut Graph<T>, items: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let d = g.sub(items[i], items[j])?;
            let s = g.sum_sq(d);
            acc = Some(match acc {
                Some(a) => g.add(a, s)?,
                None => s,
            });
        }
    }
    match acc {
        Some(a) => Ok(g.scale(a, T::of(2.0))),
        None => {
            log::warn!("alignment loss needs at least two domains; using 0");
            Ok(g.constant(Tensor::scalar(T::zero())))
        }
    }
}

/// `Σ_{i≠j} ||mean(F_i) - mean(F_j)||²` over per-domain features `F_i: [n_i, D]`.
pub fn exp_loss<T: Real>(g: &mut Graph<T>, domains: &[Var]) -> Result<Var> {
    let means = domains.iter().map(|&f| g.mean(f, 0)).collect::<Result<Vec<_>>>()?;
    pairwise_sq(g, &means)
}

/// Sample covariance `[D, D]` of the rows of `f: [n, D]` with `1/(n-1)`;
/// the zero matrix when `n < 2`.
pub fn covariance<T: Real>(g: &mut Graph<T>, f: Var) -> Result<Var> {
    let &[n, d] = g.shape(f) else {
        return Err(dim_err!("covariance expects [n, D], got {:?}", g.shape(f)));
    };
    if n < 2 {
        log::debug!("covariance of a single row; using the zero matrix");
        return Ok(g.constant(Tensor::zeros(&[d, d])));
    }
    let c = g.center(f, 0)?;
    let p = g.matmul_t(c, c, true, false)?;
    Ok(g.scale(p, T::of(1.0 / (n - 1) as f64)))
}

/// `Σ_{i≠j} ||COV(F_i) - COV(F_j)||²_F`.
pub fn cov_loss<T: Real>(g: &mut Graph<T>, domains: &[Var]) -> Result<Var> {
    let covs = domains.iter().map(|&f| covariance(g, f)).collect::<Result<Vec<_>>>()?;
    pairwise_sq(g, &covs)
}

/// Pearson correlation between the epochs of each sequence:
/// `x: [S, N, D]` to `[S, N, N]`, correlating across the `D` features.
/// An epoch with constant features gets zero correlation with everything,
/// itself included.
pub fn pcc<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    if g.shape(x).len() != 3 {
        return Err(dim_err!("pcc expects [sequences, epochs, features], got {:?}", g.shape(x)));
    }
    let c = g.center(x, 2)?;
    let eps = T::of(PCC_EPS);
    let d = g.shape(x)[2];
    let flat = g.value(c).data().chunks(d).filter(|r| crate::kernels::dot(r, r).sqrt() <= eps).count();
    if flat > 0 {
        log::warn!("{flat} epoch feature vector(s) with zero variance; their correlations are set to 0");
    }
    let z = g.normalize(c, eps);
    g.matmul_t(z, z, false, true)
}

/// Mean correlation matrix `[N, N]` over one domain's sequences `x: [S, N, D]`.
pub fn domain_correlation<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let r = pcc(g, x)?;
    g.mean(r, 0)
}

/// `Σ_{i≠j} ||R_i - R_j||²_F` over per-domain sequence features `[S_i, N, D]`.
pub fn seq_align_loss<T: Real>(g: &mut Graph<T>, domains: &[Var]) -> Result<Var> {
    let rs = domains.iter().map(|&x| domain_correlation(g, x)).collect::<Result<Vec<_>>>()?;
    pairwise_sq(g, &rs)
}

/// Graph handles for each term, plus the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub cls: Var,
    pub rec: Var,
    /// `(exp, cov, seq)` when alignment is active.
    pub align: Option<(Var, Var, Var)>,
    pub total: Var,
}

/// Build every loss term from model outputs.
///
/// `features: [B, N, D]` and `domain_of[b]` gives the domain of sequence `b`.
/// Alignment terms are added only when `align` is set and at least two
/// domains are present.
#[allow(clippy::too_many_arguments)]
pub fn build_losses<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
    recon: Var,
    target: Tensor<T>,
    features: Var,
    domain_of: &[usize],
    align: bool,
    weights: LossWeights,
) -> Result<LossVars> {
    let cls = cls_loss(g, logits, labels)?;
    let rec = rec_loss(g, recon, target)?;
    let rec_w = g.scale(rec, T::of(weights.rec));
    let mut total = g.add(cls, rec_w)?;
    let mut ids: Vec<usize> = domain_of.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let align_vars = if align && ids.len() >= 2 {
        let (seqs, flat) = split_by_domain(g, features, domain_of, &ids)?;
        let e = exp_loss(g, &flat)?;
        let c = cov_loss(g, &flat)?;
        let s = seq_align_loss(g, &seqs)?;
        let sum = g.add(e, c)?;
        let sum = g.add(sum, s)?;
        let sum = g.scale(sum, T::of(weights.align));
        total = g.add(total, sum)?;
        Some((e, c, s))
    } else {
        if align {
            log::warn!("feature alignment skipped: batch holds {} domain(s)", ids.len());
        }
        None
    };
    Ok(LossVars { cls, rec, align: align_vars, total })
}

/// Per-domain `[S_i, N, D]` sequence blocks and `[S_i * N, D]` flattened rows.
fn split_by_domain<T: Real>(
    g: &mut Graph<T>,
    features: Var,
    domain_of: &[usize],
    ids: &[usize],
) -> Result<(Vec<Var>, Vec<Var>)> {
    let &[b, n, d] = g.shape(features) else {
        return Err(dim_err!("features must be [B, N, D], got {:?}", g.shape(features)));
    };
    if domain_of.len() != b {
        return Err(dim_err!("{} domain ids for {b} sequences", domain_of.len()));
    }
    let mut seqs = Vec::with_capacity(ids.len());
    let mut flat = Vec::with_capacity(ids.len());
    for &id in ids {
        let rows: Vec<usize> = (0..b).filter(|&i| domain_of[i] == id).collect();
        let block = gather(g, features, &rows)?;
        flat.push(g.reshape(block, &[rows.len() * n, d])?);
        seqs.push(block);
    }
    Ok((seqs, flat))
}

/// Rows `idx` of the leading axis, merging contiguous runs into one slice.
fn gather<T: Real>(g: &mut Graph<T>, x: Var, idx: &[usize]) -> Result<Var> {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && idx[j] == idx[j - 1] + 1 {
            j += 1;
        }
        parts.push(g.slice(x, 0, idx[i], j - i)?);
        i = j;
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat(&parts, 0)
    }
}

/// Loss values from a graph after [`build_losses`].
pub fn bundle<T: Real>(g: &Graph<T>, v: &LossVars, n_epochs: usize, batch: usize, weights: LossWeights) -> LossBundle {
    let val = |x: Var| g.value(x).item().as_f64();
    let cls = val(v.cls);
    let (e, c, s) = v.align.map_or((0.0, 0.0, 0.0), |(e, c, s)| (val(e), val(c), val(s)));
    let mut b = LossBundle::combine(cls, cls * batch as f64 / n_epochs as f64, val(v.rec), e, c, s, weights);
    b.total = val(v.total);
    b
}
