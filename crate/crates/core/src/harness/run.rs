use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rayon::prelude::*;

use super::config::{DatasetConfig, Framework, MetricConfig, ScenarioConfig};
use super::report::{Aggregate, BenchmarkReport, GroundTruth, StageTimings, SweepPoint, TrialRecord, TrialStatus, Verdict};
use crate::adversary::{apply_behavior, ServerBehavior};
use crate::datasets::{gen_synthetic, load_idx, ClassId, LabeledDataset, Sample, UnlearnRequest};
use crate::error::{invalid, Error, Result};
use crate::metrics::{
    build_unlearning_measurement, build_unlearning_measurement_with, deviation, verify_class, verify_sample,
    verify_volume, ShadowSweep,
};
use crate::nnet::{init_model, train, ModelSpec, TrainConfig};
use crate::seed;
use crate::sensitivity::{AuxSource, AuxiliaryData};
use crate::unlearning::{amnesiac_unlearn, retrain_without, sisa_train, sisa_unlearn, Trained};

/// Environment variable capping the benchmark's worker threads.
pub const THREADS_ENV: &str = "TRUVRF_THREADS";

/// A validated scenario with any file-backed data loaded once.
struct Scenario {
    cfg: ScenarioConfig,
    fixed: Option<(LabeledDataset, LabeledDataset)>,
}

impl Scenario {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let fixed = match &cfg.dataset {
            DatasetConfig::Synthetic { .. } => None,
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                max_per_class,
            } => {
                let train = load_idx(train_images, train_labels)?;
                let test = load_idx(test_images, test_labels)?;
                Some(split_idx(train, test, *max_per_class)?)
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            fixed,
        })
    }

    fn data(&self, trial_seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match (&self.cfg.dataset, &self.fixed) {
            (_, Some(fixed)) => Ok(fixed.clone()),
            (
                DatasetConfig::Synthetic {
                    num_classes,
                    per_class,
                    test_per_class,
                    dim,
                    separation,
                },
                None,
            ) => {
                let totals: Vec<usize> = per_class.iter().map(|n| n + test_per_class).collect();
                let seed = seed::derive(trial_seed, &[seed::TAG_DATA]);
                let all = gen_synthetic(*num_classes, &totals, *dim, *separation, seed)?;
                Ok(split_head(&all, per_class))
            }
            (DatasetConfig::Idx { .. }, None) => unreachable!("IDX data is loaded up front"),
        }
    }
}

/// The first `counts[c]` samples of each class versus the rest.
fn split_head(data: &LabeledDataset, counts: &[usize]) -> (LabeledDataset, LabeledDataset) {
    let head: BTreeSet<u64> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| data.class_ids(c).iter().take(n).copied())
        .collect();
    (
        data.filter(|s| head.contains(&s.id)),
        data.filter(|s| !head.contains(&s.id)),
    )
}

/// Truncates both files per class and shifts test IDs past the training IDs
/// so that the two sets never share an ID.
fn split_idx(
    train: LabeledDataset,
    test: LabeledDataset,
    max_per_class: Option<usize>,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if train.dim() != test.dim() {
        return Err(invalid("train and test images differ in size"));
    }
    let classes = train.num_classes().max(test.num_classes());
    let limit = |d: &LabeledDataset| -> Vec<Sample> {
        let mut seen = vec![0usize; classes];
        d.iter()
            .filter(|s| {
                seen[s.label] += 1;
                max_per_class.is_none_or(|m| seen[s.label] <= m)
            })
            .cloned()
            .collect()
    };
    let train_samples = limit(&train);
    let offset = train.iter().map(|s| s.id + 1).max().unwrap_or(0);
    let test_samples = limit(&test)
        .into_iter()
        .map(|s| Sample { id: s.id + offset, ..s })
        .collect();
    Ok((
        LabeledDataset::new(classes, train.dim(), train_samples)?,
        LabeledDataset::new(classes, test.dim(), test_samples)?,
    ))
}

fn trial_seed(master: u64, trial_index: usize) -> u64 {
    seed::derive(master, &[seed::TAG_TRIAL, trial_index as u64])
}

fn calibration_seed(master: u64, run: usize) -> u64 {
    seed::derive(master, &[seed::TAG_CALIBRATION, run as u64])
}

/// Picks target classes and per-class sample IDs for one trial.
fn build_request(cfg: &ScenarioConfig, data: &LabeledDataset, trial_index: usize, seed: u64) -> Result<UnlearnRequest> {
    let mut rng = seed::derived_rng(seed, &[seed::TAG_REQUEST]);
    let classes: Vec<ClassId> = match &cfg.request.target_classes {
        Some(tc) => tc.clone(),
        None => {
            let all: Vec<ClassId> = (0..data.num_classes()).collect();
            if cfg.request.classes > all.len() {
                return Err(Error::Infeasible(format!(
                    "cannot target {} of {} classes",
                    cfg.request.classes,
                    all.len()
                )));
            }
            let mut picked: Vec<ClassId> = all.choose_multiple(&mut rng, cfg.request.classes).copied().collect();
            picked.sort_unstable();
            picked
        }
    };
    let volume = cfg.request.volume.for_trial(trial_index);
    let mut ids = Vec::new();
    for c in classes {
        if c >= data.num_classes() {
            return Err(invalid(format!("class {c} does not exist")));
        }
        let pool = data.class_ids(c);
        match volume {
            None => ids.extend_from_slice(pool),
            Some(v) if v > pool.len() => {
                return Err(Error::Infeasible(format!(
                    "class {c} has {} samples; cannot request {v}",
                    pool.len()
                )))
            }
            Some(v) => ids.extend(pool.choose_multiple(&mut rng, v).copied()),
        }
    }
    if ids.is_empty() {
        return Err(Error::Infeasible("the request is empty".into()));
    }
    UnlearnRequest::from_ids(data, ids)
}

/// `model_o` and the server's `model_u` for the executed request.
fn serve(
    cfg: &ScenarioConfig,
    data: &LabeledDataset,
    behavior: &ServerBehavior,
    executed: &UnlearnRequest,
    seed: u64,
) -> Result<(Trained, Trained, Duration)> {
    let spec = model_spec(cfg, data)?;
    let train_cfg = cfg.train.with_seed(seed::derive(seed, &[seed::TAG_SHUFFLE]));
    let init_seed = seed::derive(seed, &[seed::TAG_MODEL]);
    let neglect = matches!(behavior, ServerBehavior::Neglecting { .. });
    let started = Instant::now();
    let model_o = match cfg.framework {
        Framework::Sisa { k } => Trained::Ensemble(sisa_train(data, k, &spec, &train_cfg, init_seed)?),
        _ => Trained::Single(train(&init_model(&spec, init_seed), data, &train_cfg)?),
    };
    let trained_at = started.elapsed();
    // A neglecting server hands back the original model untouched.
    let model_u = if neglect {
        model_o.clone()
    } else {
        match (&model_o, cfg.framework) {
            (Trained::Ensemble(e), _) => Trained::Ensemble(sisa_unlearn(e, data, executed)?),
            (Trained::Single(m), Framework::Amnesiac { epochs }) => {
                let cont = TrainConfig {
                    epochs: epochs.unwrap_or(cfg.train.epochs),
                    shuffle_seed: seed::derive(seed, &[seed::TAG_RELABEL]),
                    ..train_cfg
                };
                amnesiac_unlearn(m, data, executed, &cont, seed)?.model_u
            }
            (Trained::Single(_), _) => {
                Trained::Single(retrain_without(data, executed, &spec, &train_cfg, init_seed)?)
            }
        }
    };
    Ok((model_o, model_u, trained_at))
}

fn model_spec(cfg: &ScenarioConfig, data: &LabeledDataset) -> Result<ModelSpec> {
    let mut spec = ModelSpec::new(data.dim(), cfg.model.hidden_layers.clone(), data.num_classes())?;
    spec.activation = cfg.model.activation;
    spec.init_scheme = cfg.model.init_scheme;
    Ok(spec)
}

/// The auditor's side of a trial. Receives models, auxiliary data and
/// calibration only; ground truth stays with the caller.
#[allow(clippy::too_many_arguments)]
fn audit(
    cfg: &ScenarioConfig,
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
    request: &UnlearnRequest,
    model_o: &Trained,
    model_u: &Trained,
    tau: Option<f64>,
    seed: u64,
) -> Result<Verdict> {
    let probe = cfg.probe.probe_config();
    let size = cfg.probe.size;
    match cfg.metric {
        MetricConfig::Class { threshold } => {
            let aux = AuxiliaryData::take(test_data, 0..test_data.num_classes(), size, AuxSource::TestData)?;
            Ok(Verdict::Class(verify_class(model_o, model_u, &aux, &probe, threshold)?))
        }
        MetricConfig::Volume {
            n, batch_volume, source, ..
        } => {
            let spec = model_spec(cfg, train_data)?;
            let mut estimates = Vec::new();
            for c in request.classes() {
                let aux = match source {
                    AuxSource::TestData => AuxiliaryData::take(test_data, [c], size, source)?,
                    AuxSource::TargetData => request_probe(train_data, request, c, size)?,
                };
                let target = train_data.class_slice(c);
                let others = train_data.filter(|s| s.label != c);
                let audit_seed = seed::derive(seed, &[seed::TAG_AUDIT, c as u64]);
                let shadow_cfg = cfg.train.with_seed(seed::derive(audit_seed, &[seed::TAG_SHUFFLE]));
                let sweep = ShadowSweep { n, batch_volume };
                let um = match cfg.framework {
                    Framework::Sisa { k } => build_unlearning_measurement_with(&target, &others, sweep, &aux, &probe, |d| {
                        Ok(Trained::Ensemble(sisa_train(d, k, &spec, &shadow_cfg, audit_seed)?))
                    })?,
                    _ => build_unlearning_measurement(&target, &others, &spec, &shadow_cfg, sweep, &aux, &probe, audit_seed)?,
                };
                estimates.push(verify_volume(model_o, model_u, &um, &aux, &probe)?);
            }
            Ok(Verdict::Volume { estimates })
        }
        MetricConfig::Sample { .. } => {
            let tau = tau.ok_or_else(|| invalid("the sample metric needs a calibrated tau"))?;
            let classes: Vec<ClassId> = request.classes().collect();
            let size = classes.iter().map(|&c| request.volume(c)).fold(size, usize::min);
            let mut slices = std::collections::BTreeMap::new();
            for &c in &classes {
                slices.insert(c, request_probe(train_data, request, c, size)?.slice(c).cloned().expect("class present"));
            }
            let target_aux = AuxiliaryData::new(AuxSource::TargetData, slices)?;
            let test_aux = AuxiliaryData::take(test_data, classes, size, AuxSource::TestData)?;
            Ok(Verdict::Sample(verify_sample(model_u, &target_aux, &test_aux, &probe, tau)?))
        }
    }
}

/// The first `size` requested samples of class `c`, in ID order.
fn request_probe(data: &LabeledDataset, request: &UnlearnRequest, c: ClassId, size: usize) -> Result<AuxiliaryData> {
    let ids = request
        .class_ids(c)
        .ok_or_else(|| invalid(format!("class {c} is not requested")))?;
    if ids.len() < size {
        return Err(Error::Infeasible(format!(
            "class {c} request has {} samples; the probe needs {size}",
            ids.len()
        )));
    }
    AuxiliaryData::from_ids(data, ids.iter().take(size).copied(), AuxSource::TargetData)
}

/// Whether the verdict matches what the server really did.
fn score(cfg: &ScenarioConfig, truth: &GroundTruth, verdict: &mut Verdict) -> Result<bool> {
    match verdict {
        Verdict::Class(v) => {
            // The verdict says "unlearned" when exactly the requested classes
            // changed; only an honest server deserves that.
            let requested: BTreeSet<ClassId> = truth.requested.classes().collect();
            Ok((v.flagged() == requested) == truth.honest)
        }
        Verdict::Volume { estimates } => {
            let MetricConfig::Volume { lazy_ratio, .. } = cfg.metric else {
                unreachable!("volume verdicts come from the volume metric")
            };
            let mut correct = true;
            for e in estimates.iter_mut() {
                let requested = truth.requested.volume(e.target_class) as u64;
                let forgotten = truth.forgotten.volume(e.target_class) as u64;
                if forgotten > 0 {
                    e.deviation = Some(deviation(forgotten, e.inferred_volume)?);
                }
                let claims_full = e.inferred_volume as f64 >= lazy_ratio * requested as f64;
                correct &= claims_full == (forgotten == requested);
            }
            Ok(correct)
        }
        Verdict::Sample(v) => Ok(v.honest == truth.honest),
    }
}

/// Runs one trial; `tau` is required by the sample metric.
fn run_in(scn: &Scenario, trial_index: usize, trial_seed: u64, behavior: ServerBehavior, tau: Option<f64>) -> TrialRecord {
    let cfg = &scn.cfg;
    let mut timings = StageTimings::default();
    let mut record = TrialRecord {
        trial_index,
        trial_seed,
        behavior: behavior.name().to_string(),
        ground_truth: None,
        status: TrialStatus::Skipped { reason: String::new() },
        timings: StageTimings::default(),
    };
    let result = (|| -> Result<(GroundTruth, Verdict, bool)> {
        let t = Instant::now();
        let (train_data, test_data) = scn.data(trial_seed)?;
        timings.data = t.elapsed();
        let request = build_request(cfg, &train_data, trial_index, trial_seed)?;
        let behavior = behavior.with_seed(seed::derive(trial_seed, &[seed::TAG_BEHAVIOR, behavior.seed()]));
        let executed = apply_behavior(&request, &behavior, &train_data)?;
        let truth = GroundTruth {
            honest: behavior.is_honest(),
            requested_volume: request.total_volume(),
            forgotten_volume: executed.total_volume(),
            requested: request.clone(),
            forgotten: executed.clone(),
        };
        let t = Instant::now();
        let (model_o, model_u, train_time) = serve(cfg, &train_data, &behavior, &executed, trial_seed)?;
        timings.train = train_time;
        timings.unlearn = t.elapsed().saturating_sub(train_time);
        let t = Instant::now();
        let mut verdict = audit(cfg, &train_data, &test_data, &request, &model_o, &model_u, tau, trial_seed)?;
        timings.verify = t.elapsed();
        let correct = score(cfg, &truth, &mut verdict)?;
        Ok((truth, verdict, correct))
    })();
    match result {
        Ok((truth, verdict, correct)) => {
            record.ground_truth = Some(truth);
            record.status = TrialStatus::Scored { verdict, correct };
        }
        Err(e) => record.status = TrialStatus::Skipped { reason: e.to_string() },
    }
    record.timings = timings;
    record
}

fn behavior_for(cfg: &ScenarioConfig, trial_index: usize) -> ServerBehavior {
    cfg.behaviors[trial_index % cfg.behaviors.len()]
}

fn resolved_tau(scn: &Scenario) -> Result<Option<f64>> {
    match scn.cfg.metric {
        MetricConfig::Sample { tau: Some(t), .. } => Ok(Some(t)),
        MetricConfig::Sample {
            tau: None,
            calibration_runs,
        } => calibrate_in(scn, calibration_runs).map(Some),
        _ => Ok(None),
    }
}

/// One trial of `cfg`. For the sample metric without a fixed tau this first
/// calibrates tau, exactly as [`run_benchmark`] would.
pub fn run_trial(cfg: &ScenarioConfig, trial_index: usize) -> Result<TrialRecord> {
    let scn = Scenario::new(cfg)?;
    let tau = resolved_tau(&scn)?;
    Ok(run_in(&scn, trial_index, trial_seed(cfg.master_seed, trial_index), behavior_for(cfg, trial_index), tau))
}

/// Nearest-rank 95th percentile of the honest gap ratios, over a seed
/// stream separate from the benchmark's trials.
pub fn calibrate_tau(cfg: &ScenarioConfig, honest_runs: usize) -> Result<f64> {
    let mut cfg = cfg.clone();
    cfg.metric = MetricConfig::Sample {
        tau: Some(f64::INFINITY),
        calibration_runs: honest_runs.max(10),
    };
    cfg.sweep = None;
    let scn = Scenario::new(&cfg)?;
    calibrate_in(&scn, honest_runs)
}

fn calibrate_in(scn: &Scenario, honest_runs: usize) -> Result<f64> {
    if honest_runs < 10 {
        return Err(invalid("calibrating tau needs at least 10 honest runs"));
    }
    let records: Vec<TrialRecord> = (0..honest_runs)
        .into_par_iter()
        .map(|i| {
            let honest = ServerBehavior::Honest { seed: 0 };
            run_in(scn, i, calibration_seed(scn.cfg.master_seed, i), honest, Some(f64::INFINITY))
        })
        .collect();
    let mut gaps = Vec::with_capacity(records.len());
    for r in records {
        match r.status {
            TrialStatus::Scored {
                verdict: Verdict::Sample(v),
                ..
            } => gaps.push(v.gap_ratio),
            TrialStatus::Scored { .. } => return Err(invalid("calibration needs the sample metric")),
            TrialStatus::Skipped { reason } => {
                return Err(Error::Calibration(format!("honest calibration run {} failed: {reason}", r.trial_index)))
            }
        }
    }
    Ok(nearest_rank(&mut gaps, 0.95))
}

/// The smallest value with at least `q` of the sample at or below it.
pub fn nearest_rank(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    values.sort_by(f64::total_cmp);
    let rank = (q * values.len() as f64).ceil().max(1.0) as usize;
    values[rank.min(values.len()) - 1]
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Runs every trial (and the sweep, if any) on a pool capped by
/// `TRUVRF_THREADS`.
pub fn run_benchmark(cfg: &ScenarioConfig) -> Result<BenchmarkReport> {
    run_benchmark_with_threads(cfg, threads_from_env()?)
}

/// As [`run_benchmark`] with an explicit worker count (`None`: one per core).
/// The report does not depend on the worker count.
pub fn run_benchmark_with_threads(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<BenchmarkReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| invalid(format!("cannot start workers: {e}")))?;
    pool.install(|| {
        let scn = Scenario::new(cfg)?;
        let mut report = battery(&scn)?;
        if let Some(sweep) = &cfg.sweep {
            let mut points = Vec::with_capacity(sweep.values.len());
            for &value in &sweep.values {
                let point = Scenario::new(&cfg.with_sweep_value(sweep.parameter, value)?)?;
                let r = battery(&point)?;
                points.push(SweepPoint {
                    value,
                    tau: r.tau,
                    aggregate: r.aggregate,
                });
            }
            report.sweep = Some(points);
        }
        Ok(report)
    })
}

fn battery(scn: &Scenario) -> Result<BenchmarkReport> {
    let cfg = &scn.cfg;
    let tau = resolved_tau(scn)?;
    let rows: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_in(scn, i, trial_seed(cfg.master_seed, i), behavior_for(cfg, i), tau))
        .collect();
    let aggregate = Aggregate::from_rows(&rows);
    if aggregate.scored == 0 {
        return Err(Error::EmptyReport(rows.len()));
    }
    Ok(BenchmarkReport {
        config: cfg.clone(),
        metric: cfg.metric.name().to_string(),
        framework: cfg.framework.name().to_string(),
        request_distribution: describe_requests(cfg),
        tau,
        aggregate,
        rows,
        sweep: None,
    })
}

fn describe_requests(cfg: &ScenarioConfig) -> String {
    let classes = match &cfg.request.target_classes {
        Some(tc) => format!("classes {tc:?}"),
        None => format!("{} class(es) drawn uniformly per trial", cfg.request.classes),
    };
    let volume = match cfg.request.volume.for_trial(0) {
        None => "whole class".to_string(),
        Some(_) => match &cfg.request.volume {
            super::config::VolumeSpec::Cycle(vs) => format!("volumes {vs:?} cycled by trial index, IDs uniform"),
            _ => format!("{} IDs uniform per class", cfg.request.volume.for_trial(0).unwrap_or(0)),
        },
    };
    let behaviors: Vec<&str> = cfg.behaviors.iter().map(ServerBehavior::name).collect();
    format!("{classes}; {volume}; behaviors {behaviors:?} cycled by trial index")
}
