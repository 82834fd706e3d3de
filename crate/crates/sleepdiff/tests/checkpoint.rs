use sleepdiff::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC};
use sleepdiff::format::FormatError;
use sleepdiff_core::gradcheck::random_tensor;
use sleepdiff_core::optim::{Adam, AdamConfig};
use sleepdiff_core::{ModelConfig, SleepDiffFormer, Tensor};

fn small() -> SleepDiffFormer<f32> {
    let mut cfg = ModelConfig::with_width(16, 1);
    cfg.ablation.fa = false;
    SleepDiffFormer::new(cfg, 5).unwrap()
}

fn probe() -> Tensor<f32> {
    random_tensor(3, "probe", &[1, 20, 2, 3000], 1.0).cast()
}

#[test]
fn round_trip_reproduces_outputs_bitwise() {
    let model = small();
    let mut adam = Adam::new(&model.store, AdamConfig { lr: 1e-3, ..AdamConfig::default() });
    adam.t = 7;
    for (i, m) in adam.m.iter_mut().enumerate() {
        m.data_mut().iter_mut().for_each(|v| *v = i as f32 * 0.25);
    }
    let extra = vec![("experiment.target".to_string(), "3".to_string())];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sdfm");
    save_checkpoint(&path, &model, Some(&adam), &extra).unwrap();
    let ck = load_checkpoint(&path).unwrap();

    assert_eq!(ck.model.config, model.config);
    assert_eq!(ck.extra, extra);
    let back = ck.adam.unwrap();
    assert_eq!((back.t, back.cfg.lr), (7, 1e-3));
    assert_eq!(back.m, adam.m);
    assert_eq!(back.v, adam.v);
    for ((na, a), (nb, b)) in model.store.iter().zip(ck.model.store.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a, b);
    }
    let x = probe();
    let (a, b) = (model.infer(&x, false).unwrap(), ck.model.infer(&x, false).unwrap());
    assert!(a.logits.data().iter().zip(b.logits.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    assert!(a.recon.data().iter().zip(b.recon.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn standard_model_has_expected_classifier() {
    let model = SleepDiffFormer::<f32>::new(ModelConfig::standard(), 0).unwrap();
    let ck = decode_checkpoint(&encode_checkpoint(&model, None, &[])).unwrap();
    assert!(ck.adam.is_none());
    let id = ck.model.store.id("classifier.w").expect("classifier weight");
    assert_eq!(ck.model.store.get(id).shape(), &[256, 5]);
    assert_eq!(ck.model.store.numel(), model.store.numel());
}

#[test]
fn corrupt_files_are_rejected() {
    let model = small();
    let bytes = encode_checkpoint(&model, None, &[]);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(FormatError::BadMagic { .. })));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(decode_checkpoint(&bad), Err(FormatError::BadVersion(99))));

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(FormatError::Truncated(_))), "cut at {cut}");
    }

    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(decode_checkpoint(&bad), Err(FormatError::Invalid(_))));
    assert_eq!(&bytes[..4], MAGIC);
}

#[test]
fn unknown_tensor_names_are_reported() {
    let model = small();
    let bytes = encode_checkpoint(&model, None, &[]);
    // Rename the first tensor in place: same length, so only the name changes.
    let first = model.store.iter().next().unwrap().0.to_string();
    let pos = bytes.windows(first.len()).position(|w| w == first.as_bytes()).unwrap();
    let mut bad = bytes.clone();
    bad[pos] = b'#';
    match decode_checkpoint(&bad) {
        Err(FormatError::UnknownTensor(name)) => assert!(name.starts_with('#')),
        other => panic!("expected an unknown tensor error, got {other:?}"),
    }
}
