//! Monte Carlo and reference-value checks at desk scale.

use std::collections::BTreeSet;

use truvrf_core::datasets::{gen_synthetic, load_idx, LabeledDataset, Sample, UnlearnRequest};
use truvrf_core::harness::{
    calibrate_tau, run_benchmark_with_threads, DatasetConfig, MetricConfig, ScenarioConfig, TrialStatus, Verdict,
};
use truvrf_core::adversary::ServerBehavior;
use truvrf_core::metrics::{build_unlearning_measurement, deviation, ShadowSweep};
use truvrf_core::nnet::{evaluate, init_model, train, ModelSpec, TrainConfig};
use truvrf_core::sensitivity::{AuxSource, AuxiliaryData, ProbeConfig};
use truvrf_core::unlearning::{amnesiac_unlearn, retrain_without, sisa_train, Trained};

const CLASS_CFG: &str = include_str!("../../../configs/class.json");
const VOLUME_CFG: &str = include_str!("../../../configs/volume.json");
const SAMPLE_CFG: &str = include_str!("../../../configs/sample.json");

fn cfg(learning_rate: f64, epochs: usize, batch_size: usize, shuffle_seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate,
        epochs,
        batch_size,
        shuffle_seed,
    }
}

/// Per-class train and test splits from one generated pool.
fn split(data: &LabeledDataset, train_per_class: usize) -> (LabeledDataset, LabeledDataset) {
    let train_ids: BTreeSet<u64> = (0..data.num_classes())
        .flat_map(|c| data.class_ids(c)[..train_per_class].to_vec())
        .collect();
    let test_ids: BTreeSet<u64> = data.iter().map(|s| s.id).filter(|id| !train_ids.contains(id)).collect();
    (data.subset(&train_ids).unwrap(), data.subset(&test_ids).unwrap())
}

fn class_recall(model: &Trained, data: &LabeledDataset, c: usize) -> f64 {
    let slice = data.class_slice(c);
    let hits = slice.iter().filter(|s| model.predict(&s.features).unwrap() == c).count();
    hits as f64 / slice.len() as f64
}

#[test]
fn separable_two_class_set_is_learned() {
    // Points on either side of x0 + x1 = 0 with a margin.
    let mut samples = Vec::new();
    let mut id = 0u64;
    let mut i = 0u64;
    while samples.len() < 200 {
        i += 1;
        let x0 = ((i * 7919) % 1000) as f64 / 500.0 - 1.0;
        let x1 = ((i * 104_729) % 997) as f64 / 498.5 - 1.0;
        if (x0 + x1).abs() < 0.1 {
            continue;
        }
        samples.push(Sample {
            id,
            features: vec![x0, x1],
            label: usize::from(x0 + x1 > 0.0),
        });
        id += 1;
    }
    let data = LabeledDataset::new(2, 2, samples).unwrap();
    let spec = ModelSpec::new(2, vec![8], 2).unwrap();
    let model = train(&init_model(&spec, 1), &data, &cfg(0.1, 30, 16, 1)).unwrap();
    let acc = evaluate(&model, &data).unwrap();
    assert!(acc >= 0.95, "training accuracy {acc}");
}

#[test]
fn untrained_models_are_at_chance() {
    let data = gen_synthetic(10, &[50; 10], 10, 3.0, 0).unwrap();
    let spec = ModelSpec::new(10, vec![16], 10).unwrap();
    let mean: f64 = (0..50)
        .map(|seed| evaluate(&init_model(&spec, seed), &data).unwrap())
        .sum::<f64>()
        / 50.0;
    assert!((mean - 0.10).abs() <= 0.03, "mean untrained accuracy {mean}");
}

#[test]
fn separated_clusters_generalise() {
    let pool = gen_synthetic(5, &[300; 5], 8, 6.0, 4).unwrap();
    let (tr, te) = split(&pool, 200);
    let spec = ModelSpec::new(8, vec![16], 5).unwrap();
    let model = train(&init_model(&spec, 4), &tr, &cfg(0.05, 20, 32, 4)).unwrap();
    let acc = evaluate(&model, &te).unwrap();
    assert!(acc >= 0.95, "test accuracy {acc}");
}

#[test]
fn forgetting_a_whole_class_erases_its_recall() {
    let spec = ModelSpec::new(8, vec![32, 16], 5).unwrap();
    let recalls: Vec<f64> = (0..10)
        .map(|seed| {
            let pool = gen_synthetic(5, &[250; 5], 8, 6.0, seed).unwrap();
            let (tr, te) = split(&pool, 200);
            let c = (seed % 5) as usize;
            let req = UnlearnRequest::whole_class(&tr, c);
            let m = retrain_without(&tr, &req, &spec, &cfg(0.05, 20, 32, seed), seed).unwrap();
            class_recall(&Trained::Single(m), &te, c)
        })
        .collect();
    let mean = recalls.iter().sum::<f64>() / 10.0;
    assert!(mean <= 0.1, "mean recall of the forgotten class {mean} ({recalls:?})");
}

#[test]
fn five_shard_ensemble_tracks_a_single_model() {
    let spec = ModelSpec::new(8, vec![32, 16], 5).unwrap();
    let gaps: Vec<f64> = (0..10)
        .map(|seed| {
            let pool = gen_synthetic(5, &[600; 5], 8, 6.0, seed).unwrap();
            let (tr, te) = split(&pool, 500);
            let c = cfg(0.05, 20, 32, seed);
            let mono = train(&init_model(&spec, seed), &tr, &c).unwrap();
            let ens = sisa_train(&tr, 5, &spec, &c, seed).unwrap();
            evaluate(&mono, &te).unwrap() - Trained::Ensemble(ens).accuracy(&te).unwrap()
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / 10.0;
    assert!(mean.abs() <= 0.10, "mean accuracy gap {mean} ({gaps:?})");
}

#[test]
fn five_hundred_per_shard_at_k_five() {
    let data = gen_synthetic(5, &[500; 5], 8, 6.0, 0).unwrap();
    assert_eq!(data.len(), 2500);
    let spec = ModelSpec::new(8, vec![4], 5).unwrap();
    let ens = sisa_train(&data, 5, &spec, &cfg(0.05, 0, 32, 0), 0).unwrap();
    assert!(ens.shards().iter().all(|s| s.ids.len() == 500));
}

/// Relabeling only undoes what the model memorised, so this runs in the
/// sample scenario's regime, where individual samples are memorised.
#[test]
fn relabeling_half_a_class_drops_its_accuracy() {
    let scenario = ScenarioConfig::from_json(SAMPLE_CFG).unwrap();
    let DatasetConfig::Synthetic { num_classes, per_class, dim, separation, .. } = &scenario.dataset else {
        panic!("sample scenario is synthetic");
    };
    let spec = ModelSpec::new(*dim, scenario.model.hidden_layers.clone(), *num_classes).unwrap();
    let drops: Vec<f64> = (0..10u64)
        .map(|seed| {
            let data = gen_synthetic(*num_classes, per_class, *dim, *separation, seed).unwrap();
            let c = (seed % *num_classes as u64) as usize;
            let half = data.class_count(c) / 2;
            let ids = data.class_ids(c)[..half].to_vec();
            let req = UnlearnRequest::from_ids(&data, ids.iter().copied()).unwrap();
            let model_o = train(&init_model(&spec, seed), &data, &scenario.train.with_seed(seed)).unwrap();
            let out = amnesiac_unlearn(&model_o, &data, &req, &scenario.train.with_seed(seed + 1), seed).unwrap();
            let target = data.subset(&ids.into_iter().collect()).unwrap();
            out.model_o.accuracy(&target).unwrap() - out.model_u.accuracy(&target).unwrap()
        })
        .collect();
    let mean = drops.iter().sum::<f64>() / 10.0;
    assert!(mean >= 0.30, "mean accuracy drop {mean} ({drops:?})");
}

#[test]
fn honest_class_removal_raises_its_sensitivity() {
    let mut cfg = ScenarioConfig::from_json(CLASS_CFG).unwrap();
    cfg.behaviors = vec![ServerBehavior::Honest { seed: 0 }];
    cfg.trials = 50;
    let report = run_benchmark_with_threads(&cfg, None).unwrap();
    let mut rising = 0;
    for r in &report.rows {
        let TrialStatus::Scored { verdict: Verdict::Class(v), .. } = &r.status else {
            panic!("trial {} skipped", r.trial_index);
        };
        let c = r.ground_truth.as_ref().unwrap().requested.classes().next().unwrap();
        rising += usize::from(v.classes[&c].ds > 0.0);
    }
    assert!(rising >= 45, "{rising}/50 trials raised the target sensitivity");
}

#[test]
fn shadow_measurement_is_positive() {
    let scenario = ScenarioConfig::from_json(VOLUME_CFG).unwrap();
    let spec = ModelSpec::new(8, scenario.model.hidden_layers.clone(), 5).unwrap();
    let positive = (0..20u64)
        .filter(|&seed| {
            let all = gen_synthetic(5, &[1050; 5], 8, 1.0, 100 + seed).unwrap();
            let target = all.take_class(0, 1000).unwrap();
            let others = (1..5)
                .map(|c| all.take_class(c, 1000).unwrap())
                .reduce(|a, b| a.concat(&b).unwrap())
                .unwrap();
            let aux = AuxiliaryData::from_ids(&all, all.class_ids(0)[1000..].to_vec(), AuxSource::TestData).unwrap();
            build_unlearning_measurement(
                &target,
                &others,
                &spec,
                &scenario.train.with_seed(seed),
                ShadowSweep { n: 5, batch_volume: 100 },
                &aux,
                &ProbeConfig::new(0.01),
                seed,
            )
            .is_ok_and(|um| um.um_batch > 0.0)
        })
        .count();
    assert!(positive >= 18, "{positive}/20 seeds gave a positive measurement");
}

#[test]
fn removing_half_a_large_class_is_measured_closely() {
    let mut cfg = ScenarioConfig::from_json(VOLUME_CFG).unwrap();
    cfg.request.volume = serde_json::from_str("500").unwrap();
    let report = run_benchmark_with_threads(&cfg, None).unwrap();
    assert_eq!(report.aggregate.scored, 20);
    let dev = report.aggregate.mean_deviation.unwrap();
    assert!(dev <= 0.20, "mean deviation {dev}");
}

#[test]
fn thirty_short_of_five_hundred_is_six_percent() {
    assert!((deviation(500, 470).unwrap() - 0.06).abs() < 1e-12);
}

#[test]
fn deceiving_servers_exceed_the_calibrated_gap() {
    let mut cfg = ScenarioConfig::from_json(SAMPLE_CFG).unwrap();
    let tau = calibrate_tau(&cfg, 20).unwrap();
    cfg.behaviors = vec![ServerBehavior::Deceiving { seed: 0 }];
    cfg.trials = 20;
    cfg.metric = MetricConfig::Sample {
        tau: Some(tau),
        calibration_runs: 20,
    };
    let report = run_benchmark_with_threads(&cfg, None).unwrap();
    assert_eq!(report.tau, Some(tau));
    let caught = report
        .rows
        .iter()
        .filter(|r| {
            matches!(&r.status, TrialStatus::Scored { verdict: Verdict::Sample(v), .. }
                if v.gap_ratio > tau && v.ms_u_tar < v.ms_u_test)
        })
        .count();
    assert!(caught >= 16, "{caught}/20 deceiving trials exceeded tau = {tau}");
}

#[test]
fn stored_tau_matches_the_automatic_calibration() {
    let mut cfg = ScenarioConfig::from_json(SAMPLE_CFG).unwrap();
    cfg.trials = 2;
    cfg.metric = MetricConfig::Sample {
        tau: None,
        calibration_runs: 10,
    };
    let auto = run_benchmark_with_threads(&cfg, None).unwrap();
    let tau = calibrate_tau(&cfg, 10).unwrap();
    assert_eq!(auto.tau, Some(tau));
    cfg.metric = MetricConfig::Sample {
        tau: Some(tau),
        calibration_runs: 10,
    };
    let fixed = run_benchmark_with_threads(&cfg, None).unwrap();
    assert_eq!(fixed.rows, auto.rows);
}

/// Set `FASHION_MNIST_DIR` to a directory holding the official
/// `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte` files.
#[test]
fn fashion_mnist_test_split_loads() {
    let Some(dir) = std::env::var_os("FASHION_MNIST_DIR") else {
        eprintln!("FASHION_MNIST_DIR not set; skipping");
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let data = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte")).unwrap();
    assert_eq!(data.len(), 10_000);
    assert_eq!(data.num_classes(), 10);
    assert_eq!(data.dim(), 784);
    assert!(data.class_counts().iter().all(|&n| n > 0));
}
