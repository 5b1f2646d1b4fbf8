//! `truvrf`: generate data, train and unlearn models, audit them, and run
//! benchmark batteries.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or config,
//! 3 infeasible scenario, 4 calibration failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use truvrf_core::adversary::{apply_behavior, ServerBehavior};
use truvrf_core::datasets::{gen_synthetic, read_dataset, write_dataset, UnlearnRequest};
use truvrf_core::harness::{
    calibrate_tau, emit_report, run_benchmark, BenchmarkReport, ReportFormat, ScenarioConfig,
};
use truvrf_core::metrics::{
    build_unlearning_measurement, build_unlearning_measurement_with, verify_class, verify_sample, verify_volume,
    ShadowSweep,
};
use truvrf_core::nnet::{init_model, train, ModelSpec, TrainConfig};
use truvrf_core::sensitivity::{AuxSource, AuxiliaryData, ProbeConfig};
use truvrf_core::unlearning::{amnesiac_unlearn, retrain_without, sisa_train, sisa_unlearn, Trained};
use truvrf_core::{Error, Result};

#[derive(Parser)]
#[command(name = "truvrf", version, about = "Audit machine unlearning through model sensitivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-cluster dataset (training and test files).
    GenData(GenData),
    /// Train a model (or a SISA ensemble) on a dataset file.
    Train(TrainCmd),
    /// Produce the unlearned model for a request, optionally as a dishonest server.
    Unlearn(UnlearnCmd),
    /// Metric I: which classes were unlearned.
    VerifyClass(VerifyClass),
    /// Metric II: how many samples of a class were unlearned.
    VerifyVolume(VerifyVolume),
    /// Metric III: whether the requested samples are really gone.
    VerifySample(VerifySample),
    /// Calibrate the sample metric's threshold from honest runs of a scenario.
    Calibrate(Calibrate),
    /// Run a benchmark scenario and write its report.
    Bench(Bench),
    /// Convert a JSON benchmark report to CSV (or re-emit it as JSON).
    Report(ReportCmd),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Training samples per class; a comma list gives per-class counts.
    #[arg(long, value_delimiter = ',', default_value = "500")]
    per_class: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct TrainArgs {
    #[arg(long = "lr", default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long = "batch", default_value_t = 32)]
    batch_size: usize,
}

impl TrainArgs {
    fn config(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle_seed,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct ProbeArgs {
    #[arg(long, default_value_t = 50)]
    probe_size: usize,
    #[arg(long = "probe-alpha", default_value_t = 0.01)]
    alpha: f64,
    #[arg(long = "probe-passes", default_value_t = 1)]
    passes: usize,
}

impl ProbeArgs {
    fn config(&self) -> ProbeConfig {
        ProbeConfig {
            alpha: self.alpha,
            passes: self.passes,
        }
    }
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    data: PathBuf,
    /// Hidden layer widths, e.g. `32,16`; `none` for softmax regression.
    #[arg(long, default_value = "32,16", value_parser = parse_hidden)]
    hidden: Hidden,
    #[command(flatten)]
    train: TrainArgs,
    /// Train a SISA ensemble with this many shards.
    #[arg(long)]
    sisa_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameworkArg {
    Retrain,
    Sisa,
    Amnesiac,
}

#[derive(Args)]
struct UnlearnCmd {
    #[arg(long)]
    data: PathBuf,
    /// The original model or ensemble.
    #[arg(long)]
    model: PathBuf,
    /// JSON request, e.g. `{"3": [4, 9]}`.
    #[arg(long)]
    request: PathBuf,
    #[arg(long, value_enum, default_value = "retrain")]
    framework: FrameworkArg,
    /// Server behavior as JSON, e.g. `{"kind": "lazy", "keep_fraction": 0.5}`.
    #[arg(long)]
    behavior: Option<String>,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to record the request the server actually executed.
    #[arg(long)]
    executed_out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyClass {
    #[arg(long)]
    model_o: PathBuf,
    #[arg(long)]
    model_u: PathBuf,
    #[arg(long)]
    test_data: PathBuf,
    #[command(flatten)]
    probe: ProbeArgs,
    #[arg(long, default_value_t = truvrf_core::metrics::DEFAULT_CLASS_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct VerifyVolume {
    #[arg(long)]
    model_o: PathBuf,
    #[arg(long)]
    model_u: PathBuf,
    /// The auditor's copy of the training data, used for shadow models.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    batch_volume: usize,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    probe: ProbeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifySample {
    #[arg(long)]
    model_u: PathBuf,
    /// Dataset holding the requested samples.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    request: PathBuf,
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long)]
    tau: f64,
    #[command(flatten)]
    probe: ProbeArgs,
}

#[derive(Args)]
struct Calibrate {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 20)]
    runs: usize,
}

#[derive(Args)]
struct Bench {
    #[arg(long)]
    config: PathBuf,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a CSV report (and plot data for sweeps).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCmd {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone)]
struct Hidden(Vec<usize>);

fn parse_hidden(s: &str) -> std::result::Result<Hidden, String> {
    if s.is_empty() || s == "none" {
        return Ok(Hidden(Vec::new()));
    }
    s.split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|e| format!("bad width {w:?}: {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(Hidden)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_request(path: &Path) -> Result<UnlearnRequest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::from_json(&std::fs::read_to_string(path)?)
}

fn gen_data(a: GenData) -> Result<()> {
    let per_class = match a.per_class.as_slice() {
        [n] => vec![*n; a.classes],
        list => list.to_vec(),
    };
    let totals: Vec<usize> = per_class.iter().map(|n| n + a.test_per_class).collect();
    let all = gen_synthetic(a.classes, &totals, a.dim, a.separation, a.seed)?;
    let head: std::collections::BTreeSet<u64> = per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| all.class_ids(c)[..n].to_vec())
        .collect();
    write_dataset(&all.filter(|s| head.contains(&s.id)), &a.out)?;
    if let Some(test_out) = &a.test_out {
        write_dataset(&all.filter(|s| !head.contains(&s.id)), test_out)?;
    }
    Ok(())
}

fn train_cmd(a: TrainCmd) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let spec = ModelSpec::new(data.dim(), a.hidden.0, data.num_classes())?;
    let cfg = a.train.config(a.seed);
    let trained = match a.sisa_k {
        Some(k) => Trained::Ensemble(sisa_train(&data, k, &spec, &cfg, a.seed)?),
        None => Trained::Single(train(&init_model(&spec, a.seed), &data, &cfg)?),
    };
    trained.write(&a.out)?;
    eprintln!("training accuracy {:.4}", trained.accuracy(&data)?);
    Ok(())
}

fn unlearn_cmd(a: UnlearnCmd) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let model_o = Trained::read(&a.model)?;
    let request = read_request(&a.request)?;
    let behavior: ServerBehavior = match &a.behavior {
        Some(text) => serde_json::from_str(text)?,
        None => ServerBehavior::Honest { seed: 0 },
    };
    let executed = apply_behavior(&request, &behavior, &data)?;
    let model_u = match (&model_o, a.framework) {
        _ if matches!(behavior, ServerBehavior::Neglecting { .. }) => model_o.clone(),
        (Trained::Ensemble(e), FrameworkArg::Sisa) => Trained::Ensemble(sisa_unlearn(e, &data, &executed)?),
        (Trained::Single(m), FrameworkArg::Retrain) => {
            let init_seed = m.provenance().init_seed;
            Trained::Single(retrain_without(&data, &executed, m.spec(), &a.train.config(a.seed), init_seed)?)
        }
        (Trained::Single(m), FrameworkArg::Amnesiac) => {
            amnesiac_unlearn(m, &data, &executed, &a.train.config(a.seed), a.seed)?.model_u
        }
        (Trained::Ensemble(_), _) => return Err(Error::InvalidInput("an ensemble can only be unlearned with --framework sisa".into())),
        (Trained::Single(_), FrameworkArg::Sisa) => {
            return Err(Error::InvalidInput("--framework sisa needs an ensemble model".into()))
        }
    };
    model_u.write(&a.out)?;
    if let Some(path) = &a.executed_out {
        std::fs::write(path, serde_json::to_string(&executed)?)?;
    }
    Ok(())
}

fn verify_class_cmd(a: VerifyClass) -> Result<()> {
    let model_o = Trained::read(&a.model_o)?;
    let model_u = Trained::read(&a.model_u)?;
    let test = read_dataset(&a.test_data)?;
    let aux = AuxiliaryData::take(&test, 0..test.num_classes(), a.probe.probe_size, AuxSource::TestData)?;
    print_json(&verify_class(&model_o, &model_u, &aux, &a.probe.config(), a.threshold)?)
}

fn verify_volume_cmd(a: VerifyVolume) -> Result<()> {
    let model_o = Trained::read(&a.model_o)?;
    let model_u = Trained::read(&a.model_u)?;
    let data = read_dataset(&a.data)?;
    let test = read_dataset(&a.test_data)?;
    let aux = AuxiliaryData::take(&test, [a.class], a.probe.probe_size, AuxSource::TestData)?;
    let target = data.class_slice(a.class);
    let others = data.filter(|s| s.label != a.class);
    let sweep = ShadowSweep {
        n: a.n,
        batch_volume: a.batch_volume,
    };
    let spec = model_o.spec().clone();
    let cfg = a.train.config(a.seed);
    let probe = a.probe.config();
    let um = match &model_o {
        Trained::Ensemble(e) => {
            let k = e.k();
            build_unlearning_measurement_with(&target, &others, sweep, &aux, &probe, |d| {
                Ok(Trained::Ensemble(sisa_train(d, k, &spec, &cfg, a.seed)?))
            })?
        }
        Trained::Single(_) => build_unlearning_measurement(&target, &others, &spec, &cfg, sweep, &aux, &probe, a.seed)?,
    };
    print_json(&serde_json::json!({
        "measurement": um,
        "estimate": verify_volume(&model_o, &model_u, &um, &aux, &probe)?,
    }))
}

fn verify_sample_cmd(a: VerifySample) -> Result<()> {
    let model_u = Trained::read(&a.model_u)?;
    let data = read_dataset(&a.data)?;
    let test = read_dataset(&a.test_data)?;
    let request = read_request(&a.request)?;
    request.validate(&data)?;
    let size = request.classes().map(|c| request.volume(c)).fold(a.probe.probe_size, usize::min);
    let mut slices = std::collections::BTreeMap::new();
    for c in request.classes() {
        let ids = request.class_ids(c).into_iter().flatten().take(size).copied().collect();
        slices.insert(c, data.subset(&ids)?);
    }
    let target_aux = AuxiliaryData::new(AuxSource::TargetData, slices)?;
    let test_aux = AuxiliaryData::take(&test, request.classes(), size, AuxSource::TestData)?;
    print_json(&verify_sample(&model_u, &target_aux, &test_aux, &a.probe.config(), a.tau)?)
}

fn calibrate_cmd(a: Calibrate) -> Result<()> {
    let cfg = load_config(&a.config)?;
    print_json(&serde_json::json!({ "tau": calibrate_tau(&cfg, a.runs)?, "honest_runs": a.runs }))
}

fn bench_cmd(a: Bench) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let report = run_benchmark(&cfg)?;
    emit_report(&report, ReportFormat::Json, &a.out)?;
    if let Some(csv) = &a.csv {
        if let Some(plot) = emit_report(&report, ReportFormat::Csv, csv)? {
            eprintln!("plot data written to {}", plot.display());
        }
    }
    print_json(&report.aggregate)
}

fn report_cmd(a: ReportCmd) -> Result<()> {
    let report = BenchmarkReport::read_json(&a.input)?;
    emit_report(&report, a.format, &a.out)?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::Format(_) | Error::Json(_) => 2,
        Error::Infeasible(_) | Error::EmptyReport(_) => 3,
        Error::Calibration(_) => 4,
        Error::Io(_) => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Unlearn(a) => unlearn_cmd(a),
        Command::VerifyClass(a) => verify_class_cmd(a),
        Command::VerifyVolume(a) => verify_volume_cmd(a),
        Command::VerifySample(a) => verify_sample_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
