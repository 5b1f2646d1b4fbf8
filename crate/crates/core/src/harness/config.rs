use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adversary::ServerBehavior;
use crate::datasets::ClassId;
use crate::error::{invalid, Result};
use crate::metrics::DEFAULT_CLASS_THRESHOLD;
use crate::nnet::{Activation, InitScheme, TrainConfig};
use crate::sensitivity::{AuxSource, ProbeConfig};

/// One benchmark scenario: data, model, server, request, metric and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainParams,
    #[serde(default)]
    pub framework: Framework,
    /// Trial `i` runs against `behaviors[i % behaviors.len()]`.
    pub behaviors: Vec<ServerBehavior>,
    pub request: RequestSpec,
    pub metric: MetricConfig,
    #[serde(default)]
    pub probe: ProbeParams,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Fresh Gaussian clusters for every trial. `per_class` counts training
    /// samples; another `test_per_class` per class are held out.
    Synthetic {
        num_classes: usize,
        per_class: Vec<usize>,
        test_per_class: usize,
        dim: usize,
        separation: f64,
    },
    /// Fixed IDX files shared by all trials, optionally truncated to the
    /// first `max_per_class` samples of each class.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_per_class: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_scheme: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![32, 16],
            activation: Activation::Relu,
            init_scheme: InitScheme::ScaledUniform,
        }
    }
}

/// Training hyper-parameters; shuffle seeds are derived per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainParams {
    pub fn with_seed(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Framework {
    #[default]
    Retrain,
    Sisa { k: usize },
    /// `epochs` of relabeled training on top of `model_o`; defaults to the
    /// scenario's training epochs.
    Amnesiac {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epochs: Option<usize>,
    },
}

impl Framework {
    pub fn name(&self) -> &'static str {
        match self {
            Framework::Retrain => "retrain",
            Framework::Sisa { .. } => "sisa",
            Framework::Amnesiac { .. } => "amnesiac",
        }
    }
}

/// Which samples a trial asks the server to forget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    /// Number of target classes, drawn at random per trial.
    #[serde(default = "one")]
    pub classes: usize,
    /// Fixed target classes; overrides the random draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_classes: Option<Vec<ClassId>>,
    pub volume: VolumeSpec,
}

fn one() -> usize {
    1
}

/// Per-class request volume: `"all"`, a fixed count, or a list cycled by
/// trial index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VolumeSpec {
    All(AllKeyword),
    Fixed(usize),
    Cycle(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllKeyword {
    #[serde(rename = "all")]
    All,
}

impl VolumeSpec {
    pub fn all() -> Self {
        VolumeSpec::All(AllKeyword::All)
    }

    /// `None` means the whole class.
    pub fn for_trial(&self, trial_index: usize) -> Option<usize> {
        match self {
            VolumeSpec::All(_) => None,
            VolumeSpec::Fixed(v) => Some(*v),
            VolumeSpec::Cycle(vs) => Some(vs[trial_index % vs.len()]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricConfig {
    Class {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Volume {
        n: usize,
        batch_volume: usize,
        /// Below this inferred/requested ratio the server is declared lazy.
        #[serde(default = "default_lazy_ratio")]
        lazy_ratio: f64,
        #[serde(default = "default_volume_source")]
        source: AuxSource,
    },
    Sample {
        /// Calibrated from honest runs when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau: Option<f64>,
        #[serde(default = "default_calibration_runs")]
        calibration_runs: usize,
    },
}

fn default_threshold() -> f64 {
    DEFAULT_CLASS_THRESHOLD
}

fn default_lazy_ratio() -> f64 {
    0.75
}

fn default_volume_source() -> AuxSource {
    AuxSource::TestData
}

fn default_calibration_runs() -> usize {
    20
}

impl MetricConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MetricConfig::Class { .. } => "class",
            MetricConfig::Volume { .. } => "volume",
            MetricConfig::Sample { .. } => "sample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeParams {
    /// Samples per class in every probe set.
    pub size: usize,
    pub alpha: f64,
    #[serde(default = "one")]
    pub passes: usize,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            size: 50,
            alpha: 0.01,
            passes: 1,
        }
    }
}

impl ProbeParams {
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            alpha: self.alpha,
            passes: self.passes,
        }
    }
}

/// Re-run the battery once per value of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    RequestClasses,
    RequestVolume,
    Threshold,
    Tau,
    KeepFraction,
    Separation,
    Epochs,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::RequestClasses => "request_classes",
            SweepParameter::RequestVolume => "request_volume",
            SweepParameter::Threshold => "threshold",
            SweepParameter::Tau => "tau",
            SweepParameter::KeepFraction => "keep_fraction",
            SweepParameter::Separation => "separation",
            SweepParameter::Epochs => "epochs",
        }
    }
}

fn as_count(value: f64, what: &str) -> Result<usize> {
    if value.is_finite() && value >= 0.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(invalid(format!("{what} sweep value {value} is not a whole number")))
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks. Whether a request can be honoured against a
    /// particular trial's data is decided per trial.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.behaviors.is_empty() {
            return Err(invalid("at least one server behavior is required"));
        }
        for b in &self.behaviors {
            b.validate()?;
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                per_class,
                test_per_class,
                dim,
                separation,
            } => {
                if *num_classes < 2 {
                    return Err(invalid("need at least two classes"));
                }
                if per_class.len() != *num_classes {
                    return Err(invalid(format!(
                        "per_class has {} entries for {num_classes} classes",
                        per_class.len()
                    )));
                }
                if per_class.contains(&0) {
                    return Err(invalid("every class needs training samples"));
                }
                if *test_per_class < self.probe.size {
                    return Err(invalid(format!(
                        "test_per_class {test_per_class} is smaller than the probe size {}",
                        self.probe.size
                    )));
                }
                if dim < num_classes {
                    return Err(invalid(format!("dim {dim} cannot separate {num_classes} classes")));
                }
                if !(separation.is_finite() && *separation > 0.0) {
                    return Err(invalid("separation must be positive"));
                }
            }
            DatasetConfig::Idx { max_per_class, .. } => {
                if *max_per_class == Some(0) {
                    return Err(invalid("max_per_class must be positive"));
                }
            }
        }
        if self.model.hidden_layers.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        self.train.with_seed(0).validate()?;
        if let Framework::Sisa { k } = self.framework {
            if k == 0 {
                return Err(invalid("SISA needs k >= 1"));
            }
        }
        if self.probe.size == 0 {
            return Err(invalid("probe size must be positive"));
        }
        self.probe.probe_config().validate()?;
        if self.request.classes == 0 {
            return Err(invalid("a request needs at least one class"));
        }
        if let Some(tc) = &self.request.target_classes {
            if tc.is_empty() {
                return Err(invalid("target_classes is empty"));
            }
            let mut sorted = tc.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != tc.len() {
                return Err(invalid("target_classes repeats a class"));
            }
        }
        match &self.request.volume {
            VolumeSpec::Fixed(0) => return Err(invalid("request volume must be positive")),
            VolumeSpec::Cycle(vs) if vs.is_empty() || vs.contains(&0) => {
                return Err(invalid("request volumes must be a nonempty list of positive counts"))
            }
            _ => {}
        }
        match self.metric {
            MetricConfig::Class { threshold } => {
                if !(threshold.is_finite() && threshold >= 0.0) {
                    return Err(invalid("threshold must be a nonnegative number"));
                }
            }
            MetricConfig::Volume {
                n,
                batch_volume,
                lazy_ratio,
                ..
            } => {
                if n < 2 {
                    return Err(invalid("volume metric needs n >= 2 shadow models"));
                }
                if batch_volume == 0 {
                    return Err(invalid("batch_volume must be positive"));
                }
                if !(0.0..=1.0).contains(&lazy_ratio) {
                    return Err(invalid("lazy_ratio must lie in [0, 1]"));
                }
            }
            MetricConfig::Sample {
                tau,
                calibration_runs,
            } => {
                if tau.is_some_and(f64::is_nan) {
                    return Err(invalid("tau must be a number"));
                }
                if tau.is_none() && calibration_runs < 10 {
                    return Err(invalid("calibrating tau needs at least 10 honest runs"));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep has no values"));
            }
            for &v in &sweep.values {
                self.with_sweep_value(sweep.parameter, v)?;
            }
        }
        Ok(())
    }

    /// A copy of this scenario with one parameter replaced (and no sweep).
    pub fn with_sweep_value(&self, parameter: SweepParameter, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        match parameter {
            SweepParameter::RequestClasses => {
                cfg.request.classes = as_count(value, "request_classes")?;
                cfg.request.target_classes = None;
            }
            SweepParameter::RequestVolume => {
                cfg.request.volume = VolumeSpec::Fixed(as_count(value, "request_volume")?)
            }
            SweepParameter::Threshold => match &mut cfg.metric {
                MetricConfig::Class { threshold } => *threshold = value,
                _ => return Err(invalid("threshold sweeps need the class metric")),
            },
            SweepParameter::Tau => match &mut cfg.metric {
                MetricConfig::Sample { tau, .. } => *tau = Some(value),
                _ => return Err(invalid("tau sweeps need the sample metric")),
            },
            SweepParameter::KeepFraction => {
                let mut any = false;
                for b in &mut cfg.behaviors {
                    if let ServerBehavior::Lazy { keep_fraction, .. } = b {
                        *keep_fraction = value;
                        any = true;
                    }
                }
                if !any {
                    return Err(invalid("keep_fraction sweeps need a lazy behavior"));
                }
            }
            SweepParameter::Separation => match &mut cfg.dataset {
                DatasetConfig::Synthetic { separation, .. } => *separation = value,
                _ => return Err(invalid("separation sweeps need a synthetic dataset")),
            },
            SweepParameter::Epochs => cfg.train.epochs = as_count(value, "epochs")?,
        }
        if cfg.request.classes == 0 {
            return Err(invalid("request_classes sweep values must be positive"));
        }
        for b in &cfg.behaviors {
            b.validate()?;
        }
        Ok(cfg)
    }
}
