use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::datasets::UnlearnRequest;
use crate::error::{invalid, Error, Result};
use crate::metrics::{ClassVerdict, SampleVerdict, VolumeEstimate};

/// What the server really did. Filled before any metric runs and used only
/// for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub honest: bool,
    pub requested_volume: usize,
    pub forgotten_volume: usize,
    pub requested: UnlearnRequest,
    pub forgotten: UnlearnRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Class(ClassVerdict),
    Volume { estimates: Vec<VolumeEstimate> },
    Sample(SampleVerdict),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Scored { verdict: Verdict, correct: bool },
    /// The scenario could not be realised for this trial.
    Skipped { reason: String },
}

/// Wall-clock time per stage. Kept out of the JSON report so that equal
/// seeds give byte-identical reports.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub data: Duration,
    pub train: Duration,
    pub unlearn: Duration,
    pub verify: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.data + self.train + self.unlearn + self.verify
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub trial_seed: u64,
    pub behavior: String,
    pub ground_truth: Option<GroundTruth>,
    pub status: TrialStatus,
    #[serde(skip)]
    pub timings: StageTimings,
}

/// Equality ignores timings, like the JSON form does.
impl PartialEq for TrialRecord {
    fn eq(&self, other: &Self) -> bool {
        self.trial_index == other.trial_index
            && self.trial_seed == other.trial_seed
            && self.behavior == other.behavior
            && self.ground_truth == other.ground_truth
            && self.status == other.status
    }
}

impl TrialRecord {
    pub fn correct(&self) -> Option<bool> {
        match self.status {
            TrialStatus::Scored { correct, .. } => Some(correct),
            TrialStatus::Skipped { .. } => None,
        }
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        match &self.status {
            TrialStatus::Scored { verdict, .. } => Some(verdict),
            TrialStatus::Skipped { .. } => None,
        }
    }

    /// Eq.-7 deviations of every volume estimate with a nonzero true volume.
    pub fn deviations(&self) -> Vec<f64> {
        match self.verdict() {
            Some(Verdict::Volume { estimates }) => estimates.iter().filter_map(|e| e.deviation).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub scored: usize,
    pub skipped: usize,
    /// Fraction of scored trials whose verdict matched the server.
    pub accuracy: Option<f64>,
    pub mean_deviation: Option<f64>,
    pub median_deviation: Option<f64>,
}

impl Aggregate {
    pub fn from_rows(rows: &[TrialRecord]) -> Self {
        let scored: Vec<bool> = rows.iter().filter_map(TrialRecord::correct).collect();
        let accuracy = (!scored.is_empty())
            .then(|| scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64);
        let mut devs: Vec<f64> = rows.iter().flat_map(TrialRecord::deviations).collect();
        let mean_deviation = (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64);
        let median_deviation = (!devs.is_empty()).then(|| median(&mut devs));
        Self {
            trials: rows.len(),
            scored: scored.len(),
            skipped: rows.len() - scored.len(),
            accuracy,
            mean_deviation,
            median_deviation,
        }
    }

    /// The headline number: mean deviation for the volume metric, accuracy
    /// otherwise.
    pub fn score(&self, metric: &str) -> Option<f64> {
        if metric == "volume" {
            self.mean_deviation
        } else {
            self.accuracy
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ScenarioConfig,
    pub metric: String,
    pub framework: String,
    pub request_distribution: String,
    /// The sample metric's threshold, calibrated or configured.
    pub tau: Option<f64>,
    pub aggregate: Aggregate,
    pub rows: Vec<TrialRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(invalid(format!("unknown report format {s:?} (json or csv)"))),
        }
    }
}

/// Writes the report. CSV output also writes `<stem>.plot.csv` when the
/// scenario sweeps a parameter; the path of that file is returned.
pub fn emit_report(report: &BenchmarkReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<Option<PathBuf>> {
    let path = path.as_ref();
    if report.rows.is_empty() {
        return Err(Error::EmptyReport(0));
    }
    match format {
        ReportFormat::Json => {
            let mut out = BufWriter::new(File::create(path)?);
            out.write_all(report.to_json()?.as_bytes())?;
            out.write_all(b"\n")?;
            out.flush()?;
            Ok(None)
        }
        ReportFormat::Csv => {
            write_trials_csv(report, File::create(path)?)?;
            match &report.sweep {
                Some(points) => {
                    let plot = path.with_extension("plot.csv");
                    write_plot_csv(report, points, File::create(&plot)?)?;
                    Ok(Some(plot))
                }
                None => Ok(None),
            }
        }
    }
}

const TRIAL_COLUMNS: [&str; 14] = [
    "trial",
    "seed",
    "behavior",
    "server_honest",
    "requested_volume",
    "forgotten_volume",
    "status",
    "correct",
    "flagged_classes",
    "max_relative_change",
    "inferred_volume",
    "deviation",
    "gap_ratio",
    "reason",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per trial, then an `aggregate` footer row.
pub fn write_trials_csv(report: &BenchmarkReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(TRIAL_COLUMNS).map_err(csv_err)?;
    for r in &report.rows {
        let truth = r.ground_truth.as_ref();
        let mut row: Vec<String> = vec![
            r.trial_index.to_string(),
            r.trial_seed.to_string(),
            r.behavior.clone(),
            opt(truth.map(|t| t.honest)),
            opt(truth.map(|t| t.requested_volume)),
            opt(truth.map(|t| t.forgotten_volume)),
        ];
        let (mut flagged, mut rel, mut inferred, mut dev, mut gap, mut reason) =
            (String::new(), String::new(), String::new(), String::new(), String::new(), String::new());
        match &r.status {
            TrialStatus::Scored { verdict, correct } => {
                row.push("scored".into());
                row.push(correct.to_string());
                match verdict {
                    Verdict::Class(v) => {
                        flagged = v.flagged().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
                        rel = opt(v.classes.values().map(|e| e.relative_change).max_by(f64::total_cmp));
                    }
                    Verdict::Volume { estimates } => {
                        inferred = estimates.iter().map(|e| e.inferred_volume.to_string()).collect::<Vec<_>>().join(";");
                        dev = estimates.iter().map(|e| opt(e.deviation)).collect::<Vec<_>>().join(";");
                    }
                    Verdict::Sample(v) => gap = v.gap_ratio.to_string(),
                }
            }
            TrialStatus::Skipped { reason: why } => {
                row.push("skipped".into());
                row.push(String::new());
                reason = why.clone();
            }
        }
        row.extend([flagged, rel, inferred, dev, gap, reason]);
        w.write_record(&row).map_err(csv_err)?;
    }
    let a = &report.aggregate;
    let mut footer = vec![String::new(); TRIAL_COLUMNS.len()];
    footer[0] = "aggregate".into();
    footer[6] = format!("scored={} skipped={}", a.scored, a.skipped);
    footer[7] = opt(a.accuracy);
    footer[11] = opt(a.mean_deviation);
    footer[12] = opt(report.tau);
    w.write_record(&footer).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

/// `x` is the swept value, `y` the headline score at that value.
pub fn write_plot_csv(report: &BenchmarkReport, points: &[SweepPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let x = report.config.sweep.as_ref().map_or("value", |s| s.parameter.name());
    let y = if report.metric == "volume" { "mean_deviation" } else { "accuracy" };
    w.write_record([x, y]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.value.to_string(), opt(p.aggregate.score(&report.metric))])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize, correct: Option<bool>) -> TrialRecord {
        TrialRecord {
            trial_index: i,
            trial_seed: i as u64,
            behavior: "honest".into(),
            ground_truth: None,
            status: match correct {
                Some(c) => TrialStatus::Scored {
                    verdict: Verdict::Sample(SampleVerdict {
                        ms_u_test: 1.0,
                        ms_u_tar: 1.0,
                        gap_ratio: 0.0,
                        honest: true,
                        tau: 0.1,
                    }),
                    correct: c,
                },
                None => TrialStatus::Skipped { reason: "no spare samples".into() },
            },
            timings: StageTimings::default(),
        }
    }

    #[test]
    fn aggregate_counts_and_accuracy() {
        let rows = vec![row(0, Some(true)), row(1, Some(false)), row(2, None), row(3, Some(true))];
        let a = Aggregate::from_rows(&rows);
        assert_eq!((a.trials, a.scored, a.skipped), (4, 3, 1));
        assert_eq!(a.accuracy, Some(2.0 / 3.0));
        assert_eq!(a.mean_deviation, None);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn timings_stay_out_of_json() {
        let mut r = row(0, Some(true));
        r.timings.train = Duration::from_secs(3);
        let text = serde_json::to_string(&r).unwrap();
        assert!(!text.contains("timings"));
        let back: TrialRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.timings, StageTimings::default());
        assert_eq!(back.status, r.status);
    }
}
