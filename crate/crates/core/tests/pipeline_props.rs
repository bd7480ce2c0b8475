use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ubp_core::neural::Checkpoint;
use ubp_core::pipeline::experiment::fold_plan;
use ubp_core::pipeline::{
    make_folds, oversample, prepare_records, sample_window, train_modality, FoldData, LabelScaler,
    OversampleThresholds, TrainConfig,
};
use ubp_core::synth::{generate_dataset, BpPair, GeneratorConfig};
use ubp_core::uncertainty::Modality;

proptest! {
    #[test]
    fn folds_partition_subjects(n in 5usize..80, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
        let plan = make_folds(&ids, k, seed).unwrap();
        prop_assert_eq!(plan.fold_count(), k);
        let mut tested = BTreeSet::new();
        for fold in &plan.folds {
            let test: BTreeSet<u64> = fold.test.iter().copied().collect();
            let train: BTreeSet<u64> = fold.train.iter().copied().collect();
            let val: BTreeSet<u64> = fold.validation.iter().copied().collect();
            prop_assert!(test.is_disjoint(&train) && test.is_disjoint(&val) && train.is_disjoint(&val));
            prop_assert_eq!(test.len() + train.len() + val.len(), n);
            prop_assert!(!test.is_empty() && !val.is_empty());
            let expected_val = ((n - test.len()) as f64 * 0.2).round() as usize;
            if expected_val >= 1 && expected_val < n - test.len() {
                prop_assert_eq!(val.len(), expected_val);
            }
            for id in test {
                prop_assert!(tested.insert(id), "subject tested twice");
            }
        }
        prop_assert_eq!(tested.len(), n);
        prop_assert_eq!(make_folds(&ids, k, seed).unwrap(), plan);
    }

    #[test]
    fn oversampling_multiplicity_is_one_or_two(labels in prop::collection::vec((80.0f64..180.0, 50.0f64..120.0), 1..40)) {
        let labels: Vec<BpPair> = labels.into_iter().map(|(sbp, dbp)| BpPair { sbp, dbp }).collect();
        let idx: Vec<usize> = (0..labels.len()).collect();
        let t = OversampleThresholds::default();
        let out = oversample(&labels, &idx, &t);
        for (i, bp) in labels.iter().enumerate() {
            let copies = out.iter().filter(|&&j| j == i).count();
            let outside = bp.sbp < 110.0 || bp.sbp > 150.0 || bp.dbp < 70.0 || bp.dbp > 100.0;
            prop_assert_eq!(copies, if outside { 2 } else { 1 });
        }
    }

    #[test]
    fn scaler_round_trip(labels in prop::collection::vec((80.0f64..180.0, 50.0f64..120.0), 2..40), probe in (60.0f64..200.0, 40.0f64..130.0)) {
        let labels: Vec<BpPair> = labels.into_iter().map(|(sbp, dbp)| BpPair { sbp, dbp }).collect();
        prop_assume!(LabelScaler::fit(&labels).is_ok());
        let s = LabelScaler::fit(&labels).unwrap();
        let z = s.scale(BpPair { sbp: probe.0, dbp: probe.1 }).unwrap();
        prop_assert!((s.unscale(0, z[0]).unwrap() - probe.0).abs() < 1e-9);
        prop_assert!((s.unscale(1, z[1]).unwrap() - probe.1).abs() < 1e-9);
    }
}

#[test]
fn fold_examples() {
    let ids: Vec<u64> = (0..10).collect();
    let plan = make_folds(&ids, 5, 1).unwrap();
    assert!(plan.folds.iter().all(|f| f.test.len() == 2));
    assert!(make_folds(&ids[..3], 5, 1).is_err());
    assert_ne!(plan.digest(), make_folds(&ids, 5, 2).unwrap().digest());
}

#[test]
fn oversampling_boundaries() {
    let t = OversampleThresholds::default();
    let labels = [
        BpPair { sbp: 120.0, dbp: 80.0 },
        BpPair { sbp: 155.0, dbp: 80.0 },
        BpPair { sbp: 110.0, dbp: 70.0 },
    ];
    assert_eq!(oversample(&labels, &[0, 1, 2], &t), vec![0, 1, 1, 2]);
}

#[test]
fn scaler_examples() {
    let labels = [BpPair { sbp: 100.0, dbp: 60.0 }, BpPair { sbp: 140.0, dbp: 90.0 }];
    let s = LabelScaler::fit(&labels).unwrap();
    assert_eq!(s.scale(BpPair { sbp: 120.0, dbp: 75.0 }).unwrap(), [0.0, 0.0]);
    assert_eq!(s.std, [20.0, 15.0]);
    let unfitted = LabelScaler::default();
    assert!(unfitted.scale(labels[0]).is_err());
    assert!(unfitted.unscale(0, 1.0).is_err());
}

#[test]
fn window_sampling_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(sample_window(150, 150, &mut rng).unwrap(), 0);
    assert!(sample_window(149, 150, &mut rng).is_err());
    let a = sample_window(300, 150, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_window(300, 150, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn window_starts_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [0usize; 151];
    let n = 10_000;
    for _ in 0..n {
        counts[sample_window(300, 150, &mut rng).unwrap()] += 1;
    }
    let expected = n as f64 / 151.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 1% point of chi-square with 150 degrees of freedom.
    assert!(chi2 < 195.0, "chi-square {chi2}");
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::desk_scale();
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.samples_per_video.rppg = 4;
    cfg.samples_per_video.ppg = 2;
    cfg
}

fn tiny_dataset() -> Vec<ubp_core::pipeline::PreparedRecord> {
    let gen = GeneratorConfig {
        noise_sigma_min: 0.0002,
        noise_sigma_max: 0.0005,
        sessions_min: 2,
        sessions_max: 2,
        ..GeneratorConfig::default()
    };
    let records = generate_dataset(12, 4, &gen).unwrap();
    prepare_records(&records, gen.block_grid).unwrap()
}

#[test]
fn training_improves_validation_loss_and_keeps_best_epoch() {
    let records = tiny_dataset();
    let plan = fold_plan(&records, 3, 1).unwrap();
    let fold = FoldData::new(&records, &plan, 0).unwrap();
    let cfg = small_config();
    let out = train_modality(Modality::Rppg, &fold, &cfg, 17, None).unwrap();
    assert_eq!(out.epochs.len(), 4);
    assert!(out.epochs.iter().all(|e| out.best_validation_loss <= e.validation_loss));
    assert_eq!(out.epochs[out.best_epoch - 1].validation_loss, out.best_validation_loss);
    assert!(out.best_validation_loss < out.epochs[0].validation_loss || out.best_epoch == 1);
    assert!(out.epochs.last().unwrap().train_loss < out.epochs[0].train_loss);

    let mut zero = cfg.clone();
    zero.epochs = 0;
    assert!(train_modality(Modality::Rppg, &fold, &zero, 17, None).is_err());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let records = tiny_dataset();
    let plan = fold_plan(&records, 3, 1).unwrap();
    let fold = FoldData::new(&records, &plan, 1).unwrap();
    let mut cfg = small_config();
    cfg.epochs = 2;
    let run = |seed| {
        let out = train_modality(Modality::Ppg, &fold, &cfg, seed, None).unwrap();
        let ck = Checkpoint::from_network(&out.network, seed, out.best_epoch, out.best_validation_loss, BTreeMap::new());
        (ck.manifest_json(), ck.blob())
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a.1, run(6).1);
}

#[test]
fn finetuning_starts_from_the_given_network() {
    let records = tiny_dataset();
    let plan = fold_plan(&records, 3, 1).unwrap();
    let fold = FoldData::new(&records, &plan, 2).unwrap();
    let mut cfg = small_config();
    cfg.epochs = 1;
    let base = train_modality(Modality::Img, &fold, &cfg, 3, None).unwrap();
    let tuned = train_modality(Modality::Img, &fold, &cfg.for_finetuning(), 3, Some(&base.network)).unwrap();
    assert_eq!(tuned.epochs[0].learning_rate, cfg.finetune_learning_rates.img);
    // A small learning rate keeps the parameters close to the starting point.
    let drift: f64 = base
        .network
        .params()
        .iter()
        .zip(tuned.network.params())
        .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(drift < 0.05, "max parameter drift {drift}");

    let other = train_modality(Modality::Rppg, &fold, &cfg, 3, None).unwrap();
    assert!(train_modality(Modality::Img, &fold, &cfg, 3, Some(&other.network)).is_err());
}
