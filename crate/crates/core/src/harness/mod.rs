//! Benchmark orchestration: seeded trial batteries over a scenario, scored
//! against ground truth the metrics never see.
//!
//! A trial generates (or loads) data, draws a request, lets the configured
//! server behaviour decide what is really forgotten, trains `model_o` and
//! `model_u` with the chosen framework, runs one metric and scores it.
//! Trials run in parallel; every random stream is derived from
//! `(master_seed, trial_index)`, so reports do not depend on worker count.

mod config;
mod report;
mod run;

pub use config::{
    AllKeyword, DatasetConfig, Framework, MetricConfig, ModelConfig, ProbeParams, RequestSpec, ScenarioConfig,
    Sweep, SweepParameter, TrainParams, VolumeSpec,
};
pub use report::{
    emit_report, write_plot_csv, write_trials_csv, Aggregate, BenchmarkReport, GroundTruth, ReportFormat,
    StageTimings, SweepPoint, TrialRecord, TrialStatus, Verdict,
};
pub use run::{calibrate_tau, nearest_rank, run_benchmark, run_benchmark_with_threads, run_trial, THREADS_ENV};
