use std::collections::BTreeMap;

use fdcka_core::manifest::{labels_path_for, save_features};
use fdcka_core::recipe::{CellRef, EvaluationRecipe};
use fdcka_core::synthetic;
use fdcka_core::*;

// Observed once with the seeds below and frozen.
const INDEPENDENT_LINEAR_CKA: f64 = 0.110_835_987_357_002_1;

#[test]
fn independent_extractor_has_low_similarity() {
    let mut features = BTreeMap::new();
    features.insert("probe".to_string(), synthetic::gaussian(512, 64, 0.0, 1));
    features.insert("copy".to_string(), synthetic::gaussian(512, 64, 0.0, 1));
    features.insert("random".to_string(), synthetic::gaussian(512, 64, 0.0, 2));
    let s = cross_extractor_similarity(&features, &KernelSpec::linear(), NormalizationSpec::None, 0).unwrap();

    let v = s.between("probe", "random").unwrap();
    assert!(v < 0.5);
    assert!((v - INDEPENDENT_LINEAR_CKA).abs() < 1e-12);
    assert!((s.between("probe", "copy").unwrap() - 1.0).abs() < 1e-12);
    for id in &s.ids {
        assert!((s.between(id, id).unwrap() - 1.0).abs() < 1e-6);
        for other in &s.ids {
            assert!((s.between(id, other).unwrap() - s.between(other, id).unwrap()).abs() < 1e-10);
        }
    }
}

#[test]
fn cross_extractor_allows_different_widths() {
    let mut features = BTreeMap::new();
    features.insert("narrow".to_string(), synthetic::gaussian(128, 8, 0.0, 3));
    features.insert("wide".to_string(), synthetic::gaussian(128, 96, 0.0, 4));
    let s = cross_extractor_similarity(&features, &KernelSpec::rbf(1.0), NormalizationSpec::None, 0).unwrap();
    let v = s.between("narrow", "wide").unwrap();
    assert!((0.0..1.0).contains(&v));

    features.insert("short".to_string(), synthetic::gaussian(64, 8, 0.0, 5));
    assert!(matches!(
        cross_extractor_similarity(&features, &KernelSpec::linear(), NormalizationSpec::None, 0),
        Err(Error::SampleCountMismatch(..))
    ));
}

#[test]
fn rbf_cka_is_translation_invariant() {
    let x = synthetic::gaussian(300, 12, 0.0, 6);
    let y = synthetic::gaussian(300, 12, 0.3, 7);
    let shift = |m: &FeatureMatrix| {
        let data = m.as_slice().iter().enumerate().map(|(i, v)| v + (i % 12) as f64 * 2.5 - 4.0).collect();
        FeatureMatrix::new(m.n(), m.d(), data).unwrap()
    };
    let rbf = KernelSpec::rbf(1.0);
    let a = cka(&x, &y, &rbf, NormalizationSpec::None, 3).unwrap().value;
    let b = cka(&shift(&x), &shift(&y), &rbf, NormalizationSpec::None, 3).unwrap().value;
    assert!((a - b).abs() < 1e-8, "{a} vs {b}");
}

#[test]
fn cka_is_symmetric_including_unequal_counts() {
    let x = synthetic::gaussian(250, 10, 0.0, 8);
    let y = synthetic::gaussian(180, 10, 0.2, 9);
    for k in [KernelSpec::linear(), KernelSpec::polynomial(3, 1.0), KernelSpec::rbf(0.5)] {
        let xy = cka(&x, &y, &k, NormalizationSpec::None, 4).unwrap();
        let yx = cka(&y, &x, &k, NormalizationSpec::None, 4).unwrap();
        assert!((xy.value - yx.value).abs() < 1e-10);
        assert_eq!(xy.n_real, 180);
        assert_eq!(xy.warnings.len(), 1);
    }
}

#[test]
fn fd_monte_carlo_matches_closed_form() {
    let real = synthetic::gaussian(20_000, 8, 0.0, 10);
    let syn = synthetic::gaussian(20_000, 8, 1.0, 11);
    let fd = frechet_from_features(&real, &syn, NormalizationSpec::None).unwrap().value;
    assert!((fd - 8.0).abs() / 8.0 < 0.05, "{fd}");
}

#[test]
fn features_round_trip_through_manifest_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let x = synthetic::gaussian(37, 5, 0.1, 12);
    let npy = dir.path().join("pool.npy");
    let manifest = save_features(&x, &npy, "set", "ext", "layer").unwrap();
    let json = dir.path().join("pool.json");
    manifest.write(&json).unwrap();

    let back = load_features(&FeatureManifest::read(&json).unwrap()).unwrap();
    assert!(back.as_slice().iter().zip(x.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(labels_path_for(&npy), dir.path().join("pool.labels.npy"));
}

#[test]
fn recipe_missing_layer_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let x = synthetic::gaussian(20, 3, 0.0, 13);
    let mut paths = Vec::new();
    for kind in ["real", "syn"] {
        let m = save_features(&x, &dir.path().join(format!("{kind}.npy")), kind, "ext", "l1").unwrap();
        let p = dir.path().join(format!("{kind}.json"));
        m.write(&p).unwrap();
        paths.push(p);
    }
    let recipe = EvaluationRecipe {
        model_id: "m".into(),
        real: vec![paths[0].clone()],
        syn: vec![paths[1].clone()],
        metrics: vec![MetricKind::Fd],
        kernel: KernelSpec::default(),
        normalization: NormalizationSpec::None,
        seed: 0,
        caps: CkaOptions::default(),
        cells: Some(vec![CellRef {
            extractor_id: "ext".into(),
            layer_id: "l9".into(),
        }]),
        overall_layers: None,
        output: None,
        format: None,
        attack: None,
        sweep: None,
    };
    let err = run_evaluate(&LoadedRecipe::new(recipe.clone(), dir.path())).unwrap_err();
    assert!(!err.is_numerical());
    let msg = err.to_string();
    assert!(msg.contains("'ext'") && msg.contains("'l9'"), "{msg}");

    let mut same = recipe.clone();
    same.output = Some("elsewhere.json".into());
    same.format = Some(ReportFormat::Csv);
    assert_eq!(same.digest(), recipe.digest());
    same.seed = 1;
    assert_ne!(same.digest(), recipe.digest());
}
