//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use truvrf_core::adversary::ServerBehavior;
use truvrf_core::datasets::{gen_synthetic, LabeledDataset, Sample, UnlearnRequest};
use truvrf_core::harness::{
    run_benchmark_with_threads, BenchmarkReport, Framework, ScenarioConfig, TrialStatus, Verdict,
};
use truvrf_core::metrics::{build_unlearning_measurement, ShadowSweep};
use truvrf_core::nnet::{
    encode_model, init_model, loss_and_grad, Model, ModelSpec, Provenance, TrainConfig,
};
use truvrf_core::sensitivity::{AuxSource, AuxiliaryData, Probe, ProbeConfig};
use truvrf_core::unlearning::{sisa_train, sisa_unlearn};

const CLASS_CFG: &str = include_str!("../../../configs/class.json");
const VOLUME_CFG: &str = include_str!("../../../configs/volume.json");
const SAMPLE_CFG: &str = include_str!("../../../configs/sample.json");
const LAZY_SWEEP_CFG: &str = include_str!("../../../configs/lazy_sweep.json");

const MIN_CLASS_ACCURACY: f64 = 0.85;
const MAX_MEAN_DEVIATION: f64 = 0.20;
const MIN_SAMPLE_ACCURACY: f64 = 0.80;
const FRAMEWORK_SLACK: f64 = 0.05;
const MAX_FRAMEWORK_DEVIATION: f64 = 0.30;
const MAX_FD_RELATIVE_ERROR: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const MAX_ORACLE_ERROR: f64 = 1e-9;
const MAX_SPEARMAN: f64 = -0.8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_json(text).expect("scenario config parses")
}

fn with_framework(text: &str, framework: Framework) -> ScenarioConfig {
    let mut cfg = config(text);
    cfg.framework = framework;
    cfg
}

/// Runs on one worker, matching the single-core runtime budgets.
fn bench(cfg: &ScenarioConfig) -> (BenchmarkReport, Duration) {
    let start = Instant::now();
    let report = run_benchmark_with_threads(cfg, Some(1)).expect("benchmark runs");
    (report, start.elapsed())
}

fn accuracy_check(cfg: &ScenarioConfig, min: f64, budget: Duration) -> Outcome {
    let (report, elapsed) = bench(cfg);
    let acc = report.aggregate.accuracy.unwrap_or(0.0);
    let pass = acc >= min && elapsed <= budget && report.aggregate.skipped == 0;
    outcome(
        pass,
        format!(
            "{}: accuracy {acc:.3} (>= {min:.2}), {}/{} scored, {:.1}s (<= {}s)",
            report.framework,
            report.aggregate.scored,
            report.aggregate.trials,
            elapsed.as_secs_f64(),
            budget.as_secs()
        ),
    )
}

fn deviation_check(cfg: &ScenarioConfig, max: f64, budget: Duration) -> Outcome {
    let (report, elapsed) = bench(cfg);
    let dev = report.aggregate.mean_deviation.unwrap_or(f64::INFINITY);
    let pass = dev <= max && elapsed <= budget && report.aggregate.skipped == 0;
    outcome(
        pass,
        format!(
            "{}: mean deviation {dev:.3} (<= {max:.2}), {}/{} scored, {:.1}s (<= {}s)",
            report.framework,
            report.aggregate.scored,
            report.aggregate.trials,
            elapsed.as_secs_f64(),
            budget.as_secs()
        ),
    )
}

fn criterion_1() -> Outcome {
    accuracy_check(&config(CLASS_CFG), MIN_CLASS_ACCURACY, Duration::from_secs(300))
}

fn criterion_2() -> Outcome {
    let cfg = config(VOLUME_CFG);
    assert_eq!(cfg.trials, 20);
    deviation_check(&cfg, MAX_MEAN_DEVIATION, Duration::from_secs(600))
}

fn criterion_3() -> Outcome {
    let cfg = config(SAMPLE_CFG);
    assert_eq!(cfg.trials, 40);
    accuracy_check(&cfg, MIN_SAMPLE_ACCURACY, Duration::from_secs(300))
}

fn criterion_4() -> Outcome {
    let mut cfg = config(CLASS_CFG);
    cfg.behaviors = vec![ServerBehavior::Neglecting { seed: 0 }];
    cfg.trials = 20;
    let (report, _) = bench(&cfg);
    let mut exact = 0;
    for row in &report.rows {
        let TrialStatus::Scored {
            verdict: Verdict::Class(v),
            correct,
        } = &row.status
        else {
            continue;
        };
        let zero = v.classes.values().all(|e| e.relative_change == 0.0 && e.ds == 0.0);
        if zero && v.flagged().is_empty() && *correct {
            exact += 1;
        }
    }
    outcome(exact == 20, format!("{exact}/20 neglecting trials unflagged with relative change exactly 0"))
}

fn random_spec(rng: &mut ChaCha8Rng, max_params: usize) -> ModelSpec {
    loop {
        let input = rng.random_range(1..=6);
        let classes = rng.random_range(2..=4);
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
        let spec = ModelSpec::new(input, hidden, classes).expect("valid spec");
        if spec.parameter_count() <= max_params {
            return spec;
        }
    }
}

fn random_batch(rng: &mut ChaCha8Rng, spec: &ModelSpec, n: usize) -> Vec<Sample> {
    (0..n as u64)
        .map(|id| Sample {
            id,
            features: (0..spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            label: rng.random_range(0..spec.num_classes),
        })
        .collect()
}

fn loss_at(model: &Model, params: Vec<f64>, batch: &[Sample]) -> f64 {
    let m = Model::from_params(model.spec().clone(), params, Provenance::default()).expect("same spec");
    loss_and_grad(&m, batch).expect("loss").0
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let spec = random_spec(&mut rng, 100);
        // Every parameter random, biases included: zero biases put dead
        // upstream units exactly on a ReLU kink, where the derivative does
        // not exist.
        let params = (0..spec.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = Model::from_params(spec.clone(), params, Provenance::default()).expect("params fit spec");
        let n = rng.random_range(1..=8);
        let batch = random_batch(&mut rng, &spec, n);
        let (_, grad) = loss_and_grad(&model, &batch).expect("gradient");
        for (i, &g) in grad.values().iter().enumerate() {
            let mut plus = model.params().to_vec();
            let mut minus = model.params().to_vec();
            plus[i] += FD_STEP;
            minus[i] -= FD_STEP;
            let fd = (loss_at(&model, plus, &batch) - loss_at(&model, minus, &batch)) / (2.0 * FD_STEP);
            // The floor only guards against 0/0 on dead units.
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    outcome(
        worst <= MAX_FD_RELATIVE_ERROR,
        format!("50 models, max relative error {worst:.2e} (<= {MAX_FD_RELATIVE_ERROR:.0e})"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut largest = 0;
    for case in 0..20 {
        let spec = loop {
            let input = rng.random_range(2..=32);
            let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(4..=64)).collect();
            let spec = ModelSpec::new(input, hidden, rng.random_range(2..=10)).expect("valid spec");
            if spec.parameter_count() <= 10_000 {
                break spec;
            }
        };
        largest = largest.max(spec.parameter_count());
        let model = init_model(&spec, 100 + case);
        let class = rng.random_range(0..spec.num_classes);
        let n = rng.random_range(1..=40);
        let mut batch = random_batch(&mut rng, &spec, n);
        batch.iter_mut().for_each(|s| s.label = class);
        let data = LabeledDataset::new(spec.num_classes, spec.input_dim, batch.clone()).expect("dataset");
        let alpha = [1e-3, 1e-2, 0.1][rng.random_range(0..3)];
        let ms = model.probe(&data, &ProbeConfig::new(alpha)).expect("probe");
        let oracle = loss_and_grad(&model, &batch).expect("gradient").1.l1_norm();
        worst = worst.max((ms - oracle).abs());
    }
    outcome(
        worst <= MAX_ORACLE_ERROR,
        format!("20 cases up to {largest} parameters, max |MS - |g|_1| {worst:.2e} (<= {MAX_ORACLE_ERROR:.0e})"),
    )
}

fn criterion_7() -> Outcome {
    let data = gen_synthetic(5, &[100; 5], 8, 4.0, 7).expect("data");
    let spec = ModelSpec::new(8, vec![16], 5).expect("spec");
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 3,
        batch_size: 16,
        shuffle_seed: 7,
    };
    let ensemble = sisa_train(&data, 5, &spec, &cfg, 7).expect("ensemble");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let all: Vec<u64> = data.iter().map(|s| s.id).collect();
    let (mut ok, mut untouched_total) = (0, 0);
    for _ in 0..10 {
        let n = rng.random_range(1..=3);
        let ids: Vec<u64> = all.choose_multiple(&mut rng, n).copied().collect();
        let request = UnlearnRequest::from_ids(&data, ids).expect("request");
        let forget = request.ids();
        let after = sisa_unlearn(&ensemble, &data, &request).expect("unlearn");
        let mut isolated = true;
        for (i, shard) in ensemble.shards().iter().enumerate() {
            let before_bytes = encode_model(&ensemble.sub_models()[i]);
            let after_bytes = encode_model(&after.sub_models()[i]);
            if shard.ids.is_disjoint(&forget) {
                untouched_total += 1;
                isolated &= before_bytes == after_bytes;
            } else {
                isolated &= before_bytes != after_bytes;
            }
        }
        ok += usize::from(isolated);
    }
    outcome(
        ok == 10,
        format!("{ok}/10 requests left all {untouched_total} untouched sub-models byte-identical"),
    )
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn criterion_8() -> Outcome {
    let cfg = config(VOLUME_CFG);
    let spec = ModelSpec::new(8, cfg.model.hidden_layers.clone(), 5).expect("spec");
    let volumes: Vec<f64> = (1..=5).map(|j| (j * 100) as f64).collect();
    let mut rhos = Vec::new();
    for seed in 0..5u64 {
        let all = gen_synthetic(5, &[1050; 5], 8, 1.0, seed).expect("data");
        let target = all.take_class(0, 1000).expect("target");
        let mut others = LabeledDataset::new(5, 8, Vec::new()).expect("empty");
        for c in 1..5 {
            others = others.concat(&all.take_class(c, 1000).expect("class")).expect("concat");
        }
        let held_out: BTreeSet<u64> = all.class_ids(0)[1000..].iter().copied().collect();
        let aux = AuxiliaryData::from_ids(&all, held_out, AuxSource::TestData).expect("aux");
        let um = build_unlearning_measurement(
            &target,
            &others,
            &spec,
            &cfg.train.with_seed(seed),
            ShadowSweep { n: 5, batch_volume: 100 },
            &aux,
            &ProbeConfig::new(cfg.probe.alpha),
            seed,
        )
        .expect("shadow sweep");
        rhos.push(spearman(&volumes, &um.shadow_ms));
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    outcome(
        mean <= MAX_SPEARMAN,
        format!("mean Spearman rho {mean:.3} over 5 seeds {rhos:.2?} (<= {MAX_SPEARMAN})"),
    )
}

fn criterion_9() -> Outcome {
    let mut sample = config(SAMPLE_CFG);
    sample.trials = 6;
    sample.metric = truvrf_core::harness::MetricConfig::Sample {
        tau: None,
        calibration_runs: 10,
    };
    let mut sisa = config(CLASS_CFG);
    sisa.framework = Framework::Sisa { k: 5 };
    sisa.trials = 6;
    let configs = [
        ("class", config(CLASS_CFG)),
        ("volume", config(VOLUME_CFG)),
        ("sample", sample),
        ("lazy sweep", config(LAZY_SWEEP_CFG)),
        ("class/sisa", sisa),
    ];
    let mut failures = Vec::new();
    for (name, cfg) in &configs {
        let runs: Vec<String> = [1, 1, 4, 4]
            .iter()
            .map(|&t| {
                run_benchmark_with_threads(cfg, Some(t))
                    .and_then(|r| r.to_json())
                    .expect("benchmark runs")
            })
            .collect();
        if runs.iter().any(|r| r != &runs[0]) {
            failures.push(*name);
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{}/{} configs byte-identical over two runs each at 1 and 4 workers{}",
            configs.len() - failures.len(),
            configs.len(),
            if failures.is_empty() { String::new() } else { format!("; differing: {failures:?}") }
        ),
    )
}

fn criterion_10() -> Vec<Outcome> {
    let frameworks = [Framework::Sisa { k: 5 }, Framework::Amnesiac { epochs: None }];
    let mut out = Vec::new();
    for fw in frameworks {
        out.push(accuracy_check(
            &with_framework(CLASS_CFG, fw),
            MIN_CLASS_ACCURACY - FRAMEWORK_SLACK,
            Duration::from_secs(300),
        ));
        out.push(deviation_check(
            &with_framework(VOLUME_CFG, fw),
            MAX_FRAMEWORK_DEVIATION,
            Duration::from_secs(600),
        ));
        out.push(accuracy_check(
            &with_framework(SAMPLE_CFG, fw),
            MIN_SAMPLE_ACCURACY - FRAMEWORK_SLACK,
            Duration::from_secs(300),
        ));
    }
    out
}

fn report(id: u32, name: &str, o: &Outcome) -> bool {
    println!("{} criterion {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn criterion_10_summary() -> Outcome {
    let names = ["class", "volume", "sample"];
    let mut pass = true;
    for (i, o) in criterion_10().iter().enumerate() {
        pass &= o.pass;
        println!("     criterion 10 {} ({}): {}", names[i % 3], if o.pass { "ok" } else { "fail" }, o.detail);
    }
    outcome(pass, "sisa k=5 and amnesiac, all three metrics")
}

fn main() -> ExitCode {
    // Positional arguments select criteria by number; flags from the test
    // runner are ignored, and there are no sub-tests to list.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 10] = [
        (1, "class verification", criterion_1),
        (2, "volume verification", criterion_2),
        (3, "sample verification", criterion_3),
        (4, "neglecting determinism", criterion_4),
        (5, "gradient oracle", criterion_5),
        (6, "sensitivity oracle", criterion_6),
        (7, "sisa isolation", criterion_7),
        (8, "volume-sensitivity monotonicity", criterion_8),
        (9, "determinism", criterion_9),
        (10, "framework generality", criterion_10_summary),
    ];
    let mut all = true;
    for (id, name, run) in criteria {
        if selected.is_empty() || selected.contains(&id) {
            all &= report(id, name, &run());
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
