use std::collections::BTreeMap;

use sleepdiff::experiment::{loocv_table, run, run_ablation, run_loocv, train_on, Access, DomainStore, ExperimentConfig};
use sleepdiff::synth::{synth_domain, DomainSpec};
use sleepdiff_core::data::DomainData;
use sleepdiff_core::train::evaluate;

fn domains(n: usize, recordings: usize) -> BTreeMap<u16, Vec<sleepdiff_core::data::Recording>> {
    DomainSpec::defaults().iter().take(n).map(|s| (s.domain_id, synth_domain(s, recordings, 20, 7).unwrap())).collect()
}

fn tiny(target: u16, sources: Vec<u16>) -> ExperimentConfig {
    ExperimentConfig { target, sources, d: 16, layers: 1, batch: 2, max_steps: Some(2), epochs: 10, ..ExperimentConfig::default() }
}

#[test]
fn target_is_read_only_for_evaluation_after_training() {
    let store = DomainStore::memory(domains(3, 1));
    let r = run(&tiny(2, vec![0, 1]), &store).unwrap();
    assert_eq!(r.history.len(), 2);
    let log = store.accesses();
    assert_eq!(log, vec![(0, Access::Train), (1, Access::Train), (2, Access::Evaluate)]);
}

#[test]
fn missing_domain_fails_before_any_read() {
    let store = DomainStore::memory(domains(3, 1));
    assert!(run_loocv(&tiny(0, vec![]), &store, &[0, 1, 2, 9]).is_err());
    assert!(store.accesses().is_empty());
}

#[test]
fn evaluation_is_deterministic() {
    let data = domains(3, 1);
    let pools: Vec<DomainData> = data.into_iter().map(|(id, r)| DomainData::new(id, r)).collect();
    let out = train_on(&tiny(2, vec![0, 1]), &pools[..2]).unwrap();
    let a = evaluate(&out.trainer.model, &pools[2..], 1).unwrap();
    let b = evaluate(&out.trainer.model, &pools[2..], 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.confusion.total(), 20);
}

#[test]
fn same_seed_same_run() {
    let store = DomainStore::memory(domains(3, 1));
    let cfg = tiny(2, vec![0, 1]);
    let (a, b) = (run(&cfg, &store).unwrap(), run(&cfg, &store).unwrap());
    assert_eq!(a.history, b.history);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn loss_falls_over_first_ten_steps() {
    let data = domains(4, 2);
    let pools: Vec<DomainData> = data.into_iter().map(|(id, r)| DomainData::new(id, r)).collect();
    let mut drops: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = ExperimentConfig { d: 32, layers: 2, batch: 4, lr: 5e-4, max_steps: Some(10), epochs: 100, seed, ..tiny(4, vec![0, 1, 2, 3]) };
            let h = train_on(&cfg, &pools).unwrap().history;
            assert_eq!(h.len(), 10);
            h[9].total - h[0].total
        })
        .collect();
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] < 0.0, "median change {}", drops[2]);
}

#[test]
fn loocv_and_ablation_tables_have_expected_shape() {
    let store = DomainStore::memory(domains(3, 1));
    let base = ExperimentConfig { max_steps: Some(1), ..tiny(0, vec![]) };
    let results = run_loocv(&base, &store, &[0, 1, 2]).unwrap();
    let table = loocv_table(&results);
    let labels: Vec<&str> = table.rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(labels, ["domain_0", "domain_1", "domain_2", "average"]);
    let mean = (0..3).map(|i| table.rows[i].1[0]).sum::<f64>() / 3.0;
    assert!((table.rows[3].1[0] - mean).abs() < 1e-12);
    assert!(table.to_csv().starts_with("held_out,accuracy,macro_f1\n"));

    let ablation = run_ablation(&base, &store, &[0, 1, 2]).unwrap();
    let labels: Vec<&str> = ablation.rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(labels, ["-DA", "-SE", "-CA", "-FA", "-ID", "full"]);
    assert!(ablation.rows.iter().all(|r| r.1.len() == 8));
}
