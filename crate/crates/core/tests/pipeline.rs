//! Dataset handling, classification and evaluation end to end.

use std::path::Path;

use eigencoin::classify::{
    Assignment, ClassifierConfig, ClassifierModel, DistanceKind, MethodConfig, MethodKind, Threshold,
};
use eigencoin::dataset::{
    load, split, synthesize, train_size, LabeledDataset, Manifest, ManifestClass, Split, SynthConfig,
};
use eigencoin::eval::{evaluate, sweep, EvalOptions};
use eigencoin::imaging::{extract_roi, GrayImage, PreprocessConfig};
use eigencoin::{Error, Result};
use proptest::prelude::*;

fn preset(name: &str) -> LabeledDataset<f64> {
    synthesize(&SynthConfig::preset(name).unwrap()).unwrap()
}

fn eigen(k: usize) -> ClassifierConfig {
    ClassifierConfig::new(MethodConfig::Eigencoin {
        k: Some(k),
        energy: None,
    })
}

fn small_configs() -> Vec<ClassifierConfig> {
    let mut cfgs = vec![
        eigen(8),
        ClassifierConfig::new(MethodConfig::Bdpca { k_r: 8, k_c: 8 }),
        ClassifierConfig::new(MethodKind::Wavelet.default_config()),
        ClassifierConfig::new(MethodKind::Harris.default_config()),
    ];
    let mut eu = eigen(4);
    eu.distance.distance = Some(DistanceKind::Euclidean);
    cfgs.push(eu);
    cfgs
}

#[test]
fn every_synthetic_image_segments() {
    let pre = PreprocessConfig::default();
    for name in SynthConfig::preset_names() {
        let ds = preset(name);
        for class in ds.classes() {
            for img in &class.images {
                let roi = extract_roi(img, &pre).unwrap();
                assert_eq!((roi.height(), roi.width()), (64, 64));
                assert!(roi.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn id_marks_are_removed() {
    let size = 80;
    let disk = |r: usize, c: usize| {
        let d = ((r as f64 - 36.0).powi(2) + (c as f64 - 36.0).powi(2)).sqrt();
        if d < 25.0 {
            0.3 + 0.4 * ((r / 5 + c / 7) % 2) as f64
        } else {
            0.05
        }
    };
    let plain = GrayImage::from_fn(size, size, disk).unwrap();
    let marked = GrayImage::from_fn(size, size, |r, c| {
        let mark = (70..74).contains(&r) && ((62..64).contains(&c) || (66..68).contains(&c) || (70..72).contains(&c));
        if mark {
            0.95
        } else {
            disk(r, c)
        }
    })
    .unwrap();
    let pre = PreprocessConfig::default();
    assert_eq!(extract_roi(&marked, &pre).unwrap(), extract_roi(&plain, &pre).unwrap());
    let uniform = GrayImage::filled(size, size, 0.4).unwrap();
    assert!(matches!(extract_roi(&uniform, &pre), Err(Error::Segmentation { .. })));
}

fn write_class_dirs(root: &Path, sizes: &[usize]) -> Manifest {
    let classes = sizes
        .iter()
        .enumerate()
        .map(|(ci, &n)| {
            let dir = root.join(format!("class{ci}"));
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                let img = GrayImage::<f64>::filled(4, 4, ((ci * 31 + i) % 256) as f64 / 255.0).unwrap();
                img.save_png(&dir.join(format!("{i:04}.png"))).unwrap();
            }
            ManifestClass {
                name: format!("class {ci}"),
                dir: format!("class{ci}").into(),
                train_count: None,
            }
        })
        .collect();
    Manifest {
        classes,
        fraction: 0.7,
        seed: 3,
    }
}

#[test]
fn load_table_sized_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let mut manifest = write_class_dirs(tmp.path(), &[51, 490, 99, 4]);
    let ds: LabeledDataset<f64> = load(tmp.path(), &manifest).unwrap();
    assert_eq!(ds.class_sizes(), vec![51, 490, 99, 4]);
    assert_eq!(ds.train_counts(), vec![36, 343, 69, 3]);
    assert_eq!(ds.classes()[1].sources[0], "0000.png");
    for (mc, t) in manifest.classes.iter_mut().zip([35, 343, 70, 3]) {
        mc.train_count = Some(t);
    }
    let ds: LabeledDataset<f64> = load(tmp.path(), &manifest).unwrap();
    assert_eq!(ds.train_counts(), vec![35, 343, 70, 3]);
    assert_eq!(ds.test_counts(), vec![16, 147, 29, 1]);
    assert_eq!(ds.train_counts().iter().sum::<usize>(), 451);
    assert_eq!(ds.test_counts().iter().sum::<usize>(), 193);
}

#[test]
fn load_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = Manifest {
        classes: vec![],
        fraction: 0.7,
        seed: 0,
    };
    assert!(matches!(load::<f64>(tmp.path(), &empty), Err(Error::InvalidDataset(_))));
    let mut dup = write_class_dirs(tmp.path(), &[2, 2]);
    dup.classes[1].name = dup.classes[0].name.clone();
    assert!(matches!(load::<f64>(tmp.path(), &dup), Err(Error::InvalidDataset(_))));
    let mut missing = write_class_dirs(tmp.path(), &[2]);
    missing.classes[0].dir = "nowhere".into();
    assert!(matches!(load::<f64>(tmp.path(), &missing), Err(Error::Load { .. })));
    std::fs::create_dir_all(tmp.path().join("hollow")).unwrap();
    let mut hollow = write_class_dirs(tmp.path(), &[2]);
    hollow.classes[0].dir = "hollow".into();
    assert!(matches!(
        load::<f64>(tmp.path(), &hollow),
        Err(Error::InvalidDataset(_))
    ));
    std::fs::write(tmp.path().join("class0/broken.png"), b"not a png").unwrap();
    let broken = write_class_dirs(tmp.path(), &[2]);
    match load::<f64>(tmp.path(), &broken) {
        Err(Error::Load { path, .. }) => assert!(path.ends_with("broken.png")),
        other => panic!("expected a load error, got {other:?}"),
    }
}

#[test]
fn classifier_self_retrieval() {
    let ds = preset("balanced-small");
    let pre = PreprocessConfig::default();
    for cfg in small_configs() {
        let model = ClassifierModel::fit(&ds, &cfg, Some(pre)).unwrap();
        assert_eq!(model.gallery().len(), ds.train_counts().iter().sum::<usize>());
        for (img, label) in ds.train_items() {
            let p = model.predict(img).unwrap();
            assert_eq!(p.label, Assignment::Class(label), "{:?}", cfg.method);
            assert!(p.distance.abs() < 1e-9);
        }
    }
}

#[test]
fn predictions_match_exhaustive_search() {
    let ds = preset("balanced-small");
    let mut cfg = eigen(6);
    cfg.distance.distance = Some(DistanceKind::Euclidean);
    let model = ClassifierModel::fit(&ds, &cfg, Some(PreprocessConfig::default())).unwrap();
    for (img, _) in ds.test_items() {
        let f = model.features(img).unwrap();
        let mut best: Option<(f64, usize)> = None;
        for (g, &l) in model.gallery().iter().zip(model.gallery_labels()) {
            let d = f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            best = match best {
                Some((bd, bl)) if bd < d || (bd == d && bl <= l) => Some((bd, bl)),
                _ => Some((d, l)),
            };
        }
        let (d, l) = best.unwrap();
        let p = model.predict(img).unwrap();
        assert_eq!(p.label, Assignment::Class(l));
        assert!((p.distance - d).abs() < 1e-12);
        if let Some(r) = p.runner_up {
            assert!(p.distance <= r);
        }
    }
}

#[test]
fn rejection_is_monotone_in_threshold() {
    let ds = preset("balanced-small");
    let model = ClassifierModel::fit(&ds, &eigen(8), Some(PreprocessConfig::default())).unwrap();
    let queries: Vec<GrayImage<f64>> = ds.test_items().into_iter().map(|(i, _)| i.clone()).collect();
    let base: Vec<f64> = model
        .predict_batch(&queries)
        .into_iter()
        .map(|p| p.unwrap().distance)
        .collect();
    let mut thresholds: Vec<f64> = base.clone();
    thresholds.extend([0.0, f64::INFINITY]);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut rejected_before = vec![false; queries.len()];
    for t in thresholds {
        let preds = model.with_threshold(Threshold(t)).predict_batch(&queries);
        for (i, p) in preds.into_iter().enumerate() {
            let rejected = p.unwrap().label == Assignment::Rejected;
            assert!(
                !rejected_before[i] || rejected,
                "threshold {t} accepted a previously rejected query"
            );
            assert_eq!(rejected, base[i] >= t);
            rejected_before[i] = rejected;
        }
    }
}

#[test]
fn batch_prediction_is_deterministic() {
    let ds = preset("balanced-small");
    let model = ClassifierModel::fit(&ds, &eigen(8), Some(PreprocessConfig::default())).unwrap();
    let mut queries: Vec<GrayImage<f64>> = ds.test_items().into_iter().map(|(i, _)| i.clone()).collect();
    queries.push(GrayImage::filled(64, 64, 0.5).unwrap());
    let first = model.predict_batch(&queries);
    let second = model.predict_batch(&queries);
    assert_eq!(first.len(), queries.len());
    for ((a, b), q) in first.iter().zip(&second).zip(&queries) {
        match (a, b, model.predict(q)) {
            (Ok(a), Ok(b), Ok(c)) => {
                assert_eq!(a, b);
                assert_eq!(a, &c);
            }
            (Err(_), Err(_), Err(Error::Prediction { stage, .. })) => assert_eq!(stage, "preprocess"),
            other => panic!("inconsistent batch results: {other:?}"),
        }
    }
}

#[test]
fn two_distinct_busts_separate_perfectly() {
    let mut cfg = SynthConfig::preset("balanced-small").unwrap();
    cfg.noise = 0.0;
    cfg.classes.truncate(2);
    let ds: LabeledDataset<f64> = synthesize(&cfg).unwrap();
    let model = ClassifierModel::fit(&ds, &eigen(2), Some(PreprocessConfig::default())).unwrap();
    let report = evaluate(&model, &ds, EvalOptions::default()).unwrap();
    assert_eq!(report.scores.overall_accuracy, 1.0);
}

#[test]
fn fit_refuses_a_class_without_training_images() {
    let mut ds = preset("balanced-small");
    ds = {
        let mut classes = ds.classes().to_vec();
        classes[2].split = vec![Split::Test; classes[2].images.len()];
        LabeledDataset::new(classes).unwrap()
    };
    let err = ClassifierModel::fit(&ds, &eigen(4), Some(PreprocessConfig::default())).unwrap_err();
    assert!(matches!(err, Error::InvalidDataset(_)));
}

#[test]
fn sweep_rows_equal_direct_evaluation() {
    let ds = preset("balanced-small");
    let pre = Some(PreprocessConfig::default());
    let rows = sweep(&ds, &[12, 2, 6, 6], &eigen(0), pre, EvalOptions::default()).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![2, 6, 12]);
    for row in &rows {
        let model = ClassifierModel::fit(&ds, &eigen(row.k), pre).unwrap();
        let report = evaluate(&model, &ds, EvalOptions::default()).unwrap();
        assert_eq!(report.scores.overall_accuracy, row.overall_accuracy);
        assert_eq!(report.scores.rates, row.rates);
        assert_eq!(report.scores.weighted_precision, row.weighted_precision);
        assert_eq!(report.mse_train, Some(row.mse_train));
    }
    for w in rows.windows(2) {
        assert!(w[1].mse_train <= w[0].mse_train);
    }
    let rank_exceeded: Result<_> = sweep(
        &ds,
        &[ds.train_counts().iter().sum::<usize>()],
        &eigen(0),
        pre,
        EvalOptions::default(),
    );
    assert!(rank_exceeded.is_err());
    let bdpca = ClassifierConfig::new(MethodKind::Bdpca.default_config());
    assert!(sweep(&ds, &[2], &bdpca, pre, EvalOptions::default()).is_err());
}

#[test]
fn synthesis_is_bit_identical_per_seed() {
    let cfg = SynthConfig::preset("tenth-scale").unwrap();
    let a: LabeledDataset<f64> = synthesize(&cfg).unwrap();
    let b: LabeledDataset<f64> = synthesize(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train_counts(), vec![5, 49, 10, 1]);
    assert_eq!(a.test_counts(), vec![2, 15, 3, 1]);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(synthesize::<f64>(&other).unwrap(), a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_a_deterministic_partition(sizes in proptest::collection::vec(1usize..30, 1..5), fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let mut cfg = SynthConfig::preset("balanced-small").unwrap();
        cfg.image_size = 32;
        let pattern = cfg.classes[0].pattern.clone();
        cfg.classes = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| eigencoin::dataset::SynthClass { name: format!("c{i}"), count: n, train_count: None, pattern: pattern.clone() })
            .collect();
        let ds: LabeledDataset<f64> = synthesize(&cfg).unwrap();
        let a = split(&ds, fraction, seed).unwrap();
        let b = split(&ds, fraction, seed).unwrap();
        prop_assert_eq!(&a, &b);
        for (c, &n) in a.classes().iter().zip(&sizes) {
            let train = c.split.iter().filter(|s| **s == Split::Train).count();
            prop_assert_eq!(train, train_size(n, fraction));
            prop_assert_eq!(c.split.len(), n);
        }
        prop_assert_eq!(a.train_items().len() + a.test_items().len(), sizes.iter().sum::<usize>());
    }
}
