//! Domain-balanced batching, the optimisation step and evaluation.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{DomainData, SequenceRef, EPOCH_SAMPLES, SEQ_LEN};
use crate::error::{Error, Result};
use crate::forward::Ctx;
use crate::losses::{build_losses, bundle, cov_loss, exp_loss, seq_align_loss, LossBundle, LossWeights};
use crate::metrics::{Confusion, MetricsReport};
use crate::model::{argmax_rows, SleepDiffFormer};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{shuffle, stream};
use crate::scalar::Real;
use crate::tape::Graph;
use crate::tensor::Tensor;

/// A sequence chosen for a batch: index into the domain list and the
/// sequence within that domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pick {
    pub domain: usize,
    pub sequence: usize,
}

/// Batches for one pass over the source pools.
///
/// Each batch holds `batch / n_domains` sequences from every domain, drawn
/// without replacement from a per-pass shuffle and grouped by domain. Once the
/// smallest pool cannot fill another batch, the leftovers form one smaller
/// batch with an equal count (at least 1) per domain; if some pool is empty
/// they are skipped.
pub fn plan_batches(pool_sizes: &[usize], batch: usize, seed: u64, pass: u64) -> Result<Vec<Vec<Pick>>> {
    let n = pool_sizes.len();
    if n == 0 || batch == 0 || !batch.is_multiple_of(n) {
        return Err(Error::Batch(format!("batch {batch} must be a positive multiple of {n} domains")));
    }
    let per = batch / n;
    let orders: Vec<Vec<usize>> = pool_sizes
        .iter()
        .enumerate()
        .map(|(d, &len)| {
            let mut idx: Vec<usize> = (0..len).collect();
            shuffle(&mut stream(seed, &format!("batches.{pass}.{d}")), &mut idx);
            idx
        })
        .collect();
    let min = pool_sizes.iter().copied().min().unwrap_or(0);
    let full = min / per;
    let mut out = Vec::with_capacity(full + 1);
    let take = |start: usize, count: usize| {
        (0..n).flat_map(|d| orders[d][start..start + count].iter().map(move |&s| Pick { domain: d, sequence: s })).collect()
    };
    for b in 0..full {
        out.push(take(b * per, per));
    }
    let rest = min - full * per;
    if rest >= 1 {
        out.push(take(full * per, rest));
    }
    Ok(out)
}

/// Model input and targets for a set of sequences.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[B, SEQ_LEN, 2, EPOCH_SAMPLES]`
    pub x: Tensor<T>,
    /// `B * SEQ_LEN` stage indices.
    pub labels: Vec<usize>,
    /// Domain index of each sequence.
    pub domains: Vec<usize>,
    pub picks: Vec<Pick>,
}

impl<T: Real> Batch<T> {
    pub fn gather(pools: &[DomainData], picks: &[Pick]) -> Result<Self> {
        if picks.is_empty() {
            return Err(Error::Batch("empty batch".into()));
        }
        let mut x = Vec::with_capacity(picks.len() * SEQ_LEN * 2 * EPOCH_SAMPLES);
        let mut labels = Vec::with_capacity(picks.len() * SEQ_LEN);
        for p in picks {
            let pool = &pools[p.domain];
            pool.write_sequence(pool.sequences[p.sequence], &mut x, &mut labels);
        }
        let data = x.into_iter().map(|v| T::of(v as f64)).collect();
        Ok(Self {
            x: Tensor::new(&[picks.len(), SEQ_LEN, 2, EPOCH_SAMPLES], data)?,
            labels,
            domains: picks.iter().map(|p| p.domain).collect(),
            picks: picks.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }
}

/// Model plus optimiser state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: SleepDiffFormer<T>,
    pub adam: Adam<T>,
    pub weights: LossWeights,
    pub seed: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: SleepDiffFormer<T>, adam: AdamConfig, weights: LossWeights, seed: u64) -> Self {
        let adam = Adam::new(&model.store, adam);
        Self { model, adam, weights, seed }
    }

    /// Forward with dropout, every loss term, backward and one Adam update.
    /// Alignment terms are included when the model's FA flag is on and the
    /// batch spans at least two domains.
    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<LossBundle> {
        let cfg = &self.model.config;
        let align = cfg.ablation.fa;
        let rng = stream(self.seed, &format!("dropout.{}", self.adam.t));
        let mut g = Graph::new();
        let mut ctx = Ctx::train(&mut g, &self.model.store, cfg.dropout, rng);
        let xv = ctx.g.constant(batch.x.clone());
        let out = self.model.forward(&mut ctx, xv)?;
        let target = ctx.g.value(xv).clone();
        let lv = build_losses(
            ctx.g,
            out.logits,
            &batch.labels,
            out.recon,
            target,
            out.features,
            &batch.domains,
            align,
            self.weights,
        )?;
        let b = bundle(ctx.g, &lv, batch.labels.len(), batch.len(), self.weights);
        if !b.total.is_finite() {
            return Err(Error::NonFiniteLoss(format!("sequences {:?}, losses {:?}", batch.picks, b)));
        }
        let grads = ctx.g.backward(lv.total);
        let grads = ctx.param_grads(&grads);
        drop(ctx);
        self.adam.step(&mut self.model.store, &grads)?;
        Ok(b)
    }
}

/// Stage predictions over every sequence of `pools`, `chunk` sequences per
/// forward pass.
pub fn evaluate<T: Real>(model: &SleepDiffFormer<T>, pools: &[DomainData], chunk: usize) -> Result<MetricsReport> {
    let mut confusion = Confusion::default();
    let picks: Vec<Pick> = pools
        .iter()
        .enumerate()
        .flat_map(|(d, p)| (0..p.sequences.len()).map(move |s| Pick { domain: d, sequence: s }))
        .collect();
    if picks.is_empty() {
        return Err(Error::EmptyTarget);
    }
    for part in picks.chunks(chunk.max(1)) {
        let batch = Batch::<T>::gather(pools, part)?;
        let pred = argmax_rows(&model.infer(&batch.x, false)?.logits);
        confusion.merge(&Confusion::from_pairs(&batch.labels, &pred)?);
    }
    MetricsReport::from_confusion(confusion)
}

/// Epoch- and sequence-level alignment statistics between pools, measured on
/// evaluation-mode features of at most `per_domain` sequences each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentStats {
    pub exp: f64,
    pub cov: f64,
    pub epo: f64,
    pub seq: f64,
}

pub fn alignment_stats<T: Real>(model: &SleepDiffFormer<T>, pools: &[DomainData], per_domain: usize) -> Result<AlignmentStats> {
    let mut g = Graph::<T>::new();
    let mut flat = Vec::new();
    let mut seqs = Vec::new();
    for (d, pool) in pools.iter().enumerate() {
        let n = pool.sequences.len().min(per_domain);
        if n == 0 {
            continue;
        }
        let picks: Vec<Pick> = (0..n).map(|s| Pick { domain: d, sequence: s }).collect();
        let batch = Batch::<T>::gather(pools, &picks)?;
        let f = model.infer(&batch.x, false)?.features;
        let big = f.last_dim();
        let v = g.constant(f);
        flat.push(g.reshape(v, &[n * SEQ_LEN, big])?);
        seqs.push(v);
    }
    let e = exp_loss(&mut g, &flat)?;
    let c = cov_loss(&mut g, &flat)?;
    let s = seq_align_loss(&mut g, &seqs)?;
    let val = |v| g.value(v).item().as_f64();
    let (exp, cov, seq) = (val(e), val(c), val(s));
    Ok(AlignmentStats { exp, cov, epo: exp + cov, seq })
}

/// Sequences referenced by a plan, for leakage checks and logging.
pub fn referenced(pools: &[DomainData], picks: &[Pick]) -> Vec<(u16, SequenceRef)> {
    picks.iter().map(|p| (pools[p.domain].domain, pools[p.domain].sequences[p.sequence])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_batches() {
        let plan = plan_batches(&[10, 10, 10, 10], 16, 0, 0).unwrap();
        assert_eq!(plan.len(), 3);
        for b in &plan[..2] {
            assert_eq!(b.len(), 16);
            for d in 0..4 {
                assert_eq!(b.iter().filter(|p| p.domain == d).count(), 4);
            }
        }
        assert_eq!(plan[2].len(), 8);
        let two = plan_batches(&[20, 20], 16, 0, 0).unwrap();
        assert_eq!(two[0].iter().filter(|p| p.domain == 0).count(), 8);
    }

    #[test]
    fn no_repeats_within_a_pass_and_deterministic() {
        let plan = plan_batches(&[9, 12], 4, 5, 1).unwrap();
        let mut seen: Vec<Pick> = plan.concat();
        let n = seen.len();
        seen.sort_by_key(|p| (p.domain, p.sequence));
        seen.dedup();
        assert_eq!(seen.len(), n);
        assert_eq!(plan, plan_batches(&[9, 12], 4, 5, 1).unwrap());
        assert_ne!(plan, plan_batches(&[9, 12], 4, 5, 2).unwrap());
    }

    #[test]
    fn empty_pool_yields_no_batches() {
        assert!(plan_batches(&[0, 5], 4, 0, 0).unwrap().is_empty());
        assert!(plan_batches(&[4, 4, 4], 4, 0, 0).is_err());
    }
}
