use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sleepdiff::checkpoint::{load_checkpoint, save_checkpoint};
use sleepdiff::container::write_container;
use sleepdiff::experiment::{
    domain_file, loocv_table, run_ablation, run_loocv, train, Access, DomainStore, ExperimentConfig,
};
use sleepdiff::export::{export_attention, ExportOptions};
use sleepdiff::gradsuite::{run_suite, TOLERANCE};
use sleepdiff::synth::{synth_domain, SynthConfig};
use sleepdiff_core::config::parse_kv;
use sleepdiff_core::data::{Stage, EPOCH_SAMPLES};
use sleepdiff_core::train::evaluate;
use sleepdiff_core::Tensor;

#[derive(Parser)]
#[command(name = "sleepdiff", version, about = "Cross-domain sleep staging with a differential transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one synthetic SLPD file per domain.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Generator key=value file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        recordings: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train on every domain but the target and save a checkpoint.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        target: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-domain-out over every domain in the data directory.
    Loocv {
        #[command(flatten)]
        exp: ExpArgs,
        /// Summary CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The component ablation table.
    Ablate {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one domain.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        domain: u16,
    },
    /// Dump the attention maps of one sequence.
    ExportAttn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        domain: u16,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        /// Epoch drawn as SVG heat strips.
        #[arg(long, default_value_t = 0)]
        svg_epoch: usize,
        #[arg(long)]
        no_svg: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable block.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = TOLERANCE)]
        tol: f64,
    },
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    data: PathBuf,
    /// Experiment key=value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides, e.g. `--set lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_kv(&read(p)?)?,
            None => ExperimentConfig::default(),
        };
        for s in &self.set {
            let (k, v) = s.split_once('=').with_context(|| format!("--set {s:?} is not KEY=VALUE"))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn write_table(out: Option<&Path>, csv: &str) -> Result<()> {
    if let Some(p) = out {
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate { out, config, seed, recordings, epochs } => {
            let mut cfg = SynthConfig::default();
            if let Some(p) = config {
                for (k, v) in parse_kv(&read(&p)?)? {
                    cfg.apply(&k, &v)?;
                }
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.recordings = recordings.unwrap_or(cfg.recordings);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            fs::create_dir_all(&out)?;
            for spec in &cfg.domains {
                let recs = synth_domain(spec, cfg.recordings, cfg.epochs, cfg.seed)?;
                let path = domain_file(&out, spec.domain_id);
                write_container(&path, &recs)?;
                println!("domain {}: {} recordings -> {}", spec.domain_id, recs.len(), path.display());
            }
        }
        Command::Train { exp, target, out } => {
            let mut cfg = exp.config()?;
            let store = DomainStore::dir(&exp.data);
            cfg.target = target;
            cfg.sources = store.ids()?.into_iter().filter(|&i| i != target).collect();
            let (outcome, _) = train(&cfg, &store)?;
            let last = outcome.history.last().map_or(f64::NAN, |b| b.total);
            save_checkpoint(&out, &outcome.trainer.model, Some(&outcome.trainer.adam), &cfg.to_pairs())?;
            println!("{} steps, final loss {last:.4}, {:.1} s -> {}", outcome.history.len(), outcome.seconds, out.display());
        }
        Command::Loocv { exp, out } => {
            let cfg = exp.config()?;
            let store = DomainStore::dir(&exp.data);
            let ids = store.ids()?;
            let results = run_loocv(&cfg, &store, &ids)?;
            let table = loocv_table(&results);
            println!("{table}");
            write_table(out.as_deref(), &table.to_csv())?;
        }
        Command::Ablate { exp, out } => {
            let cfg = exp.config()?;
            let store = DomainStore::dir(&exp.data);
            let ids = store.ids()?;
            let table = run_ablation(&cfg, &store, &ids)?;
            println!("{table}");
            write_table(out.as_deref(), &table.to_csv())?;
        }
        Command::Eval { data, checkpoint, domain } => {
            let ck = load_checkpoint(&checkpoint)?;
            let cfg = ExperimentConfig::from_pairs(&ck.extra)?;
            if cfg.sources.contains(&domain) {
                log::warn!("domain {domain} was a training source of this checkpoint");
            }
            let pool = DomainStore::dir(&data).load(domain, Access::Evaluate)?;
            let m = evaluate(&ck.model, std::slice::from_ref(&pool), cfg.eval_chunk)?;
            println!("domain {domain}: accuracy {:.2}% macro-F1 {:.2}%", m.accuracy, m.macro_f1);
            println!("truth \\ predicted  {}", Stage::ALL.map(|s| format!("{:>6}", s.name())).join(""));
            for (s, row) in Stage::ALL.iter().zip(&m.confusion.0) {
                println!("{:>18}  {}", s.name(), row.map(|n| format!("{n:>6}")).join(""));
            }
        }
        Command::ExportAttn { data, checkpoint, domain, sequence, svg_epoch, no_svg, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let pool = DomainStore::dir(&data).load(domain, Access::Evaluate)?;
            let Some(&s) = pool.sequences.get(sequence) else {
                bail!("domain {domain} has {} sequences", pool.sequences.len());
            };
            let (mut x, mut labels) = (Vec::new(), Vec::new());
            pool.write_sequence(s, &mut x, &mut labels);
            let x = Tensor::new(&[1, labels.len(), 2, EPOCH_SAMPLES], x)?;
            let opts = ExportOptions { svg_epoch: (!no_svg).then_some(svg_epoch) };
            let index = export_attention(&ck.model, &x, &out, &opts)?;
            println!("{} maps, {} svg -> {}", index.entries.len(), index.svg.len(), out.display());
        }
        Command::Gradcheck { seeds, tol } => {
            let results = run_suite(seeds, tol);
            for r in &results {
                match &r.failure {
                    None => println!("PASS {:<22} {:>7} coords  max rel err {:.2e}", r.name, r.coordinates, r.max_error),
                    Some(f) => println!("FAIL {:<22} {f}", r.name),
                }
            }
            if results.iter().any(|r| !r.passed()) {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}
