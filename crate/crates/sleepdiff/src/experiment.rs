//! Leave-one-domain-out training and evaluation.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sleepdiff_core::config::parse_kv;
use sleepdiff_core::data::{DomainData, Recording, SEQ_LEN};
use sleepdiff_core::losses::{LossBundle, LossWeights};
use sleepdiff_core::metrics::{average, MetricsReport};
use sleepdiff_core::optim::AdamConfig;
use sleepdiff_core::train::{alignment_stats, evaluate, plan_batches, AlignmentStats, Batch, Trainer};
use sleepdiff_core::{Ablation, Error, ModelConfig, Result, SleepDiffFormer};

use crate::container::read_container;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub sources: Vec<u16>,
    pub target: u16,
    /// Passes over the source pools.
    pub epochs: usize,
    /// Optional cap on optimiser steps, for desk-scale runs.
    pub max_steps: Option<usize>,
    pub batch: usize,
    pub lr: f64,
    pub dropout: f64,
    pub rec_weight: f64,
    pub align_weight: f64,
    pub n_seq: usize,
    pub d: usize,
    pub layers: usize,
    pub mdta_heads: usize,
    pub seq_heads: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Sequences per forward pass during evaluation.
    pub eval_chunk: usize,
    /// Source sequences per domain used for the end-of-training alignment
    /// statistics.
    pub align_probe: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sources: vec![0, 1, 2, 3],
            target: 4,
            epochs: 50,
            max_steps: None,
            batch: 16,
            lr: 5e-4,
            dropout: 0.1,
            rec_weight: 0.5,
            align_weight: 0.5,
            n_seq: SEQ_LEN,
            d: 128,
            layers: 4,
            mdta_heads: 4,
            seq_heads: 8,
            seed: 0,
            ablation: Ablation::FULL,
            eval_chunk: 8,
            align_probe: 8,
        }
    }
}

fn parse_ids(v: &str) -> Result<Vec<u16>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad domain id {s:?}"))))
        .collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sources.is_empty() {
            return bad("no source domains".into());
        }
        if self.sources.contains(&self.target) {
            return bad(format!("target domain {} is also a source", self.target));
        }
        if self.batch == 0 || !self.batch.is_multiple_of(self.sources.len()) {
            return bad(format!("batch {} not divisible by {} source domains", self.batch, self.sources.len()));
        }
        if self.n_seq != SEQ_LEN {
            return bad(format!("sequence length is fixed at {SEQ_LEN}, got {}", self.n_seq));
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut c = ModelConfig::with_width(self.d, self.layers);
        c.mdta_heads = self.mdta_heads;
        c.seq_heads = self.seq_heads;
        c.dropout = self.dropout;
        c.ablation = self.ablation;
        c
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { rec: self.rec_weight, align: self.align_weight }
    }

    /// Apply one key. Ablation flags are `da`, `se`, `ca`, `fa`, `id`.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let err = || Error::Config(format!("{key}: cannot parse {value:?}"));
        let v = value.trim();
        macro_rules! num {
            () => {
                v.parse().map_err(|_| err())?
            };
        }
        match key.strip_prefix("experiment.").unwrap_or(key) {
            "sources" => self.sources = parse_ids(v)?,
            "target" => self.target = num!(),
            "epochs" => self.epochs = num!(),
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(num!()) },
            "batch" => self.batch = num!(),
            "lr" => self.lr = num!(),
            "dropout" => self.dropout = num!(),
            "rec_weight" => self.rec_weight = num!(),
            "align_weight" => self.align_weight = num!(),
            "n_seq" => self.n_seq = num!(),
            "d" => self.d = num!(),
            "layers" => self.layers = num!(),
            "mdta_heads" => self.mdta_heads = num!(),
            "seq_heads" => self.seq_heads = num!(),
            "seed" => self.seed = num!(),
            "eval_chunk" => self.eval_chunk = num!(),
            "align_probe" => self.align_probe = num!(),
            "da" => self.ablation.da = num!(),
            "se" => self.ablation.se = num!(),
            "ca" => self.ablation.ca = num!(),
            "fa" => self.ablation.fa = num!(),
            "id" => self.ablation.id = num!(),
            other => return Err(Error::Config(format!("unknown experiment key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_kv(text)? {
            c.apply(&k, &v)?;
        }
        Ok(c)
    }

    /// Entries stored in checkpoints under the `experiment.` prefix.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let ids = |v: &[u16]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let a = self.ablation;
        [
            ("sources", ids(&self.sources)),
            ("target", self.target.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", self.max_steps.map_or("none".into(), |s| s.to_string())),
            ("batch", self.batch.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("dropout", self.dropout.to_string()),
            ("rec_weight", self.rec_weight.to_string()),
            ("align_weight", self.align_weight.to_string()),
            ("n_seq", self.n_seq.to_string()),
            ("d", self.d.to_string()),
            ("layers", self.layers.to_string()),
            ("mdta_heads", self.mdta_heads.to_string()),
            ("seq_heads", self.seq_heads.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_chunk", self.eval_chunk.to_string()),
            ("align_probe", self.align_probe.to_string()),
            ("da", a.da.to_string()),
            ("se", a.se.to_string()),
            ("ca", a.ca.to_string()),
            ("fa", a.fa.to_string()),
            ("id", a.id.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("experiment.{k}"), v))
        .collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            if k.starts_with("experiment.") {
                c.apply(k, v)?;
            }
        }
        Ok(c)
    }
}

/// Why a domain was read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Train,
    Evaluate,
}

#[derive(Clone, Debug)]
enum Backing {
    Dir(PathBuf),
    Memory(BTreeMap<u16, Vec<Recording>>),
}

/// Domain datasets with an access log, so tests can verify that training
/// never reads the target domain.
#[derive(Debug)]
pub struct DomainStore {
    backing: Backing,
    log: RefCell<Vec<(u16, Access)>>,
}

/// File name of a domain inside a data directory.
pub fn domain_file(dir: &Path, id: u16) -> PathBuf {
    dir.join(format!("domain_{id}.slpd"))
}

impl DomainStore {
    pub fn dir(dir: impl Into<PathBuf>) -> Self {
        Self { backing: Backing::Dir(dir.into()), log: RefCell::default() }
    }

    pub fn memory(domains: BTreeMap<u16, Vec<Recording>>) -> Self {
        Self { backing: Backing::Memory(domains), log: RefCell::default() }
    }

    pub fn ids(&self) -> Result<Vec<u16>> {
        match &self.backing {
            Backing::Memory(m) => Ok(m.keys().copied().collect()),
            Backing::Dir(d) => {
                let mut ids: Vec<u16> = std::fs::read_dir(d)
                    .map_err(|e| Error::Config(format!("{}: {e}", d.display())))?
                    .filter_map(|e| e.ok())
                    .filter_map(|e| {
                        let name = e.file_name().into_string().ok()?;
                        name.strip_prefix("domain_")?.strip_suffix(".slpd")?.parse().ok()
                    })
                    .collect();
                ids.sort_unstable();
                Ok(ids)
            }
        }
    }

    /// Fails if any of `ids` is missing; reads nothing.
    pub fn check(&self, ids: &[u16]) -> Result<()> {
        for &id in ids {
            let present = match &self.backing {
                Backing::Memory(m) => m.contains_key(&id),
                Backing::Dir(d) => domain_file(d, id).is_file(),
            };
            if !present {
                return Err(Error::Config(format!("domain {id} is missing")));
            }
        }
        Ok(())
    }

    pub fn load(&self, id: u16, why: Access) -> Result<DomainData> {
        self.log.borrow_mut().push((id, why));
        let recs = match &self.backing {
            Backing::Memory(m) => m.get(&id).cloned().ok_or_else(|| Error::Config(format!("domain {id} is missing")))?,
            Backing::Dir(d) => {
                read_container(&domain_file(d, id)).map_err(|e| Error::Config(format!("domain {id}: {e}")))?
            }
        };
        if let Some(r) = recs.iter().find(|r| r.domain != id) {
            log::warn!("file for domain {id} holds a recording labelled domain {}", r.domain);
        }
        Ok(DomainData::new(id, recs))
    }

    pub fn accesses(&self) -> Vec<(u16, Access)> {
        self.log.borrow().clone()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer<f32>,
    pub history: Vec<LossBundle>,
    pub seconds: f64,
}

/// Train on the source domains of `cfg`. Only source domains are read.
pub fn train(cfg: &ExperimentConfig, store: &DomainStore) -> Result<(TrainOutcome, Vec<DomainData>)> {
    cfg.validate()?;
    let pools: Vec<DomainData> = cfg.sources.iter().map(|&id| store.load(id, Access::Train)).collect::<Result<_>>()?;
    let outcome = train_on(cfg, &pools)?;
    Ok((outcome, pools))
}

pub fn train_on(cfg: &ExperimentConfig, pools: &[DomainData]) -> Result<TrainOutcome> {
    let start = Instant::now();
    let model = SleepDiffFormer::<f32>::new(cfg.model_config(), cfg.seed)?;
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut trainer = Trainer::new(model, adam, cfg.weights(), cfg.seed);
    let sizes: Vec<usize> = pools.iter().map(|p| p.sequences.len()).collect();
    let mut history = Vec::new();
    let cap = cfg.max_steps.unwrap_or(usize::MAX);
    'passes: for pass in 0..cfg.epochs {
        let plan = plan_batches(&sizes, cfg.batch, cfg.seed, pass as u64)?;
        if plan.is_empty() {
            return Err(Error::Batch(format!("source pools {sizes:?} cannot fill a batch")));
        }
        for picks in plan {
            if history.len() >= cap {
                break 'passes;
            }
            let batch = Batch::gather(pools, &picks)?;
            let b = trainer.train_step(&batch)?;
            log::debug!("pass {pass} step {}: total {:.4} cls {:.4}", history.len(), b.total, b.cls);
            history.push(b);
        }
        if let Some(b) = history.last() {
            log::info!("pass {pass}: step {} loss {:.4}", history.len(), b.total);
        }
    }
    Ok(TrainOutcome { trainer, history, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
    /// Alignment between source-domain features after training.
    pub alignment: AlignmentStats,
    pub history: Vec<LossBundle>,
    pub model: SleepDiffFormer<f32>,
    pub seconds: f64,
}

/// Train on the sources, then read the target and evaluate the final model.
pub fn run(cfg: &ExperimentConfig, store: &DomainStore) -> Result<RunResult> {
    store.check(&cfg.sources)?;
    store.check(&[cfg.target])?;
    let (outcome, pools) = train(cfg, store)?;
    let alignment = alignment_stats(&outcome.trainer.model, &pools, cfg.align_probe)?;
    drop(pools);
    let target = store.load(cfg.target, Access::Evaluate)?;
    let metrics = evaluate(&outcome.trainer.model, std::slice::from_ref(&target), cfg.eval_chunk)?;
    log::info!(
        "target {}: accuracy {:.2} macro-F1 {:.2} ({:.1} s)",
        cfg.target,
        metrics.accuracy,
        metrics.macro_f1,
        outcome.seconds
    );
    Ok(RunResult {
        config: cfg.clone(),
        metrics,
        alignment,
        history: outcome.history,
        model: outcome.trainer.model,
        seconds: outcome.seconds,
    })
}

/// One configuration per held-out domain, every other domain a source.
pub fn loocv_configs(base: &ExperimentConfig, ids: &[u16]) -> Vec<ExperimentConfig> {
    ids.iter()
        .map(|&t| ExperimentConfig {
            target: t,
            sources: ids.iter().copied().filter(|&s| s != t).collect(),
            ..base.clone()
        })
        .collect()
}

/// Rows of labelled values with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}\n", self.corner, self.columns.join(","));
        for (label, vals) in &self.rows {
            let v: Vec<String> = vals.iter().map(|x| format!("{x:.4}")).collect();
            s.push_str(&format!("{label},{}\n", v.join(",")));
        }
        s
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.0.len()).chain([self.corner.len()]).max().unwrap_or(0);
        write!(f, "{:<w$}", self.corner)?;
        for c in &self.columns {
            write!(f, " {:>10}", c)?;
        }
        writeln!(f)?;
        for (label, vals) in &self.rows {
            write!(f, "{label:<w$}")?;
            for v in vals {
                write!(f, " {v:>10.2}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One row per held-out domain plus an average row.
pub fn loocv_table(results: &[RunResult]) -> Table {
    let mut rows: Vec<(String, Vec<f64>)> = results
        .iter()
        .map(|r| (format!("domain_{}", r.config.target), vec![r.metrics.accuracy, r.metrics.macro_f1]))
        .collect();
    let acc: Vec<f64> = results.iter().map(|r| r.metrics.accuracy).collect();
    let mf1: Vec<f64> = results.iter().map(|r| r.metrics.macro_f1).collect();
    rows.push(("average".into(), vec![average(&acc), average(&mf1)]));
    Table { corner: "held_out".into(), columns: vec!["accuracy".into(), "macro_f1".into()], rows }
}

pub fn run_loocv(base: &ExperimentConfig, store: &DomainStore, ids: &[u16]) -> Result<Vec<RunResult>> {
    if ids.len() < 3 {
        return Err(Error::Config(format!("leave-one-out needs at least 3 domains, got {ids:?}")));
    }
    store.check(ids)?;
    let configs = loocv_configs(base, ids);
    for c in &configs {
        c.validate()?;
    }
    configs.iter().map(|c| run(c, store)).collect()
}

/// One row per ablation setting: accuracy and macro-F1 for every held-out
/// domain, then their averages.
pub fn ablation_table(targets: &[u16], rows: &[(&str, Vec<RunResult>)]) -> Table {
    let mut columns = Vec::new();
    for t in targets {
        columns.push(format!("d{t}_acc"));
        columns.push(format!("d{t}_mf1"));
    }
    columns.push("avg_acc".into());
    columns.push("avg_mf1".into());
    let rows = rows
        .iter()
        .map(|(label, res)| {
            let mut v: Vec<f64> = res.iter().flat_map(|r| [r.metrics.accuracy, r.metrics.macro_f1]).collect();
            v.push(average(&res.iter().map(|r| r.metrics.accuracy).collect::<Vec<_>>()));
            v.push(average(&res.iter().map(|r| r.metrics.macro_f1).collect::<Vec<_>>()));
            (label.to_string(), v)
        })
        .collect();
    Table { corner: "setting".into(), columns, rows }
}

/// Leave-one-out under each of the six ablation settings.
pub fn run_ablation(base: &ExperimentConfig, store: &DomainStore, ids: &[u16]) -> Result<Table> {
    store.check(ids)?;
    let mut rows = Vec::new();
    for (label, flags) in Ablation::table_rows() {
        log::info!("ablation setting {label}");
        let cfg = ExperimentConfig { ablation: flags, ..base.clone() };
        rows.push((label, run_loocv(&cfg, store, ids)?));
    }
    Ok(ablation_table(ids, &rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert!(ExperimentConfig { target: 1, ..c.clone() }.validate().is_err());
        assert!(ExperimentConfig { batch: 10, ..c.clone() }.validate().is_err());
        let two = ExperimentConfig { sources: vec![0, 1], ..c };
        two.validate().unwrap();
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = ExperimentConfig { d: 32, layers: 2, max_steps: Some(7), seed: 9, ..Default::default() };
        c.ablation.id = false;
        assert_eq!(ExperimentConfig::from_pairs(&c.to_pairs()).unwrap(), c);
        let t = ExperimentConfig::from_kv("sources = 1,2\ntarget = 0\nbatch = 8\nca = false\n").unwrap();
        assert_eq!((t.sources.clone(), t.target, t.batch, t.ablation.ca), (vec![1, 2], 0, 8, false));
        assert!(ExperimentConfig::from_kv("colour = red").is_err());
    }

    #[test]
    fn loocv_configs_hold_out_each_domain() {
        let cs = loocv_configs(&ExperimentConfig::default(), &[0, 1, 2, 3, 4]);
        assert_eq!(cs.len(), 5);
        for (i, c) in cs.iter().enumerate() {
            assert_eq!(c.target, i as u16);
            assert_eq!(c.sources.len(), 4);
            c.validate().unwrap();
        }
    }
}
