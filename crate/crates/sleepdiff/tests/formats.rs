use proptest::prelude::*;
use sleepdiff::container::{decode, encode, EPOCH_PAYLOAD_BYTES, HEADER_BYTES};
use sleepdiff::experiment::ExperimentConfig;
use sleepdiff_core::data::{EpochRecord, Recording, Stage, EPOCH_SAMPLES};
use sleepdiff_core::rng::stream;
use sleepdiff_core::Ablation;

/// Arbitrary bit patterns, NaNs and infinities included.
fn recording(seed: u64, domain: u16, labels: &[u8]) -> Recording {
    use rand::RngCore;
    let mut rng = stream(seed, "formats");
    let mut samples = || (0..EPOCH_SAMPLES).map(|_| f32::from_bits(rng.next_u32())).collect::<Vec<_>>();
    let epochs = labels
        .iter()
        .map(|&l| EpochRecord { eeg: samples(), eog: samples(), label: Stage::try_from(l).unwrap(), domain })
        .collect();
    Recording { domain, epochs }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn container_round_trip_is_bitwise(
        seed in any::<u64>(),
        domain in any::<u16>(),
        blocks in prop::collection::vec(prop::collection::vec(0u8..5, 0..4), 1..4),
    ) {
        let recs: Vec<Recording> = blocks.iter().enumerate().map(|(i, l)| recording(seed ^ i as u64, domain, l)).collect();
        let bytes = encode(&recs);
        let n: usize = blocks.iter().map(Vec::len).sum();
        prop_assert_eq!(bytes.len(), blocks.len() * HEADER_BYTES + n + n * EPOCH_PAYLOAD_BYTES);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in back.iter().zip(&recs) {
            prop_assert_eq!(a.domain, b.domain);
            prop_assert_eq!(a.epochs.len(), b.epochs.len());
            for (x, y) in a.epochs.iter().zip(&b.epochs) {
                prop_assert_eq!(x.label, y.label);
                prop_assert!(x.eeg.iter().zip(&y.eeg).chain(x.eog.iter().zip(&y.eog)).all(|(u, v)| u.to_bits() == v.to_bits()));
            }
        }
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn experiment_config_survives_checkpoint_pairs(
        target in 0u16..8,
        seed in any::<u64>(),
        steps in prop::option::of(1usize..10_000),
        lr in 1e-6f64..1e-1,
        flags in prop::array::uniform5(any::<bool>()),
    ) {
        let [da, se, ca, fa, id] = flags;
        let cfg = ExperimentConfig {
            target,
            sources: (0..8).filter(|&s| s != target).collect(),
            seed,
            max_steps: steps,
            lr,
            ablation: Ablation { da, se, ca, fa, id },
            ..ExperimentConfig::default()
        };
        prop_assert_eq!(ExperimentConfig::from_pairs(&cfg.to_pairs()).unwrap(), cfg);
    }
}
