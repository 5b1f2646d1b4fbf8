//! The three verification metrics.
//!
//! - Class verification compares per-class sensitivity of the original and
//!   unlearned models on held-out data and flags classes whose sensitivity
//!   moved by at least a relative threshold.
//! - Volume verification converts the sensitivity increase of one class into
//!   a forgotten-sample count, using a per-batch measurement calibrated on
//!   shadow models trained with increasing class volumes.
//! - Sample verification compares the unlearned model's sensitivity to the
//!   requested samples against equally many held-out samples. Samples the
//!   model still remembers move it less.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{ClassId, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::nnet::{init_model, train, ModelSpec, TrainConfig};
use crate::seed;
use crate::sensitivity::{
    extract_sensitivity, sensitivity_difference, AuxiliaryData, Probe, ProbeConfig,
};
use crate::unlearning::Trained;

/// Lower bound on denominators of relative quantities.
pub const EPS_FLOOR: f64 = 1e-12;

/// Default relative-change threshold for class verification.
pub const DEFAULT_CLASS_THRESHOLD: f64 = 0.01;

fn check_layouts<P: Probe + ?Sized>(a: &P, b: &P) -> Result<()> {
    if a.layout() != b.layout() {
        return Err(invalid("original and unlearned models have different architectures"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub ms_o: f64,
    pub ms_u: f64,
    pub ds: f64,
    /// `|ds| / max(ms_o, EPS_FLOOR)`
    pub relative_change: f64,
    pub unlearned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVerdict {
    pub threshold: f64,
    pub classes: BTreeMap<ClassId, ClassEntry>,
}

impl ClassVerdict {
    pub fn flagged(&self) -> BTreeSet<ClassId> {
        self.classes
            .iter()
            .filter(|(_, e)| e.unlearned)
            .map(|(&c, _)| c)
            .collect()
    }
}

/// Flags every class whose sensitivity changed by at least `threshold`
/// relative to the original model.
pub fn verify_class<P: Probe + ?Sized>(
    model_o: &P,
    model_u: &P,
    test_aux: &AuxiliaryData,
    probe: &ProbeConfig,
    threshold: f64,
) -> Result<ClassVerdict> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(invalid("threshold must be a nonnegative number"));
    }
    check_layouts(model_o, model_u)?;
    let prof_o = extract_sensitivity(model_o, test_aux, probe)?;
    let prof_u = extract_sensitivity(model_u, test_aux, probe)?;
    let ds = sensitivity_difference(&prof_u, &prof_o)?;
    let classes = ds
        .into_iter()
        .map(|(c, ds)| {
            let ms_o = prof_o.ms[&c];
            let relative_change = ds.abs() / ms_o.max(EPS_FLOOR);
            let entry = ClassEntry {
                ms_o,
                ms_u: prof_u.ms[&c],
                ds,
                relative_change,
                // An unchanged class is never flagged, even at threshold 0.
                unlearned: relative_change > 0.0 && relative_change >= threshold,
            };
            (c, entry)
        })
        .collect();
    Ok(ClassVerdict { threshold, classes })
}

/// Calibrated sensitivity increase per `batch_volume` forgotten samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearningMeasurement {
    pub target_class: ClassId,
    pub um_batch: f64,
    pub batch_volume: usize,
    pub shadow_count: usize,
    /// Target-class sensitivity of shadow `j`, trained with
    /// `(j + 1) * batch_volume` target samples.
    pub shadow_ms: Vec<f64>,
}

/// Mean of the consecutive shadow differences, oriented so that falling
/// sensitivity with growing volume gives a positive value. The sum
/// telescopes to `(first - last) / (n - 1)`.
pub fn measurement_from_shadows(shadow_ms: &[f64]) -> Result<f64> {
    let n = shadow_ms.len();
    if n < 2 {
        return Err(invalid("need at least two shadow models"));
    }
    let um = (shadow_ms[0] - shadow_ms[n - 1]) / (n - 1) as f64;
    if um.is_nan() || um <= 0.0 {
        return Err(Error::Calibration(format!(
            "shadow sensitivities do not fall with volume (UM_batch = {um}); \
             increase the shadow count or batch volume"
        )));
    }
    Ok(um)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowSweep {
    /// Number of shadow models (>= 2).
    pub n: usize,
    pub batch_volume: usize,
}

/// Trains the shadow models with the default single-network trainer.
#[allow(clippy::too_many_arguments)]
pub fn build_unlearning_measurement(
    target_class_data: &LabeledDataset,
    other_class_data: &LabeledDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    sweep: ShadowSweep,
    test_aux: &AuxiliaryData,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<UnlearningMeasurement> {
    let init = init_model(spec, seed::derive(seed, &[seed::TAG_SHADOW]));
    build_unlearning_measurement_with(target_class_data, other_class_data, sweep, test_aux, probe, |data| {
        Ok(Trained::Single(train(&init, data, cfg)?))
    })
}

/// Shadow calibration with a caller-supplied trainer, so shadows can mirror
/// the server's framework (e.g. a SISA ensemble). Shadow `j` sees the first
/// `j * batch_volume` target samples plus all of `other_class_data`.
pub fn build_unlearning_measurement_with<F>(
    target_class_data: &LabeledDataset,
    other_class_data: &LabeledDataset,
    sweep: ShadowSweep,
    test_aux: &AuxiliaryData,
    probe: &ProbeConfig,
    train_shadow: F,
) -> Result<UnlearningMeasurement>
where
    F: Fn(&LabeledDataset) -> Result<Trained> + Sync,
{
    let ShadowSweep { n, batch_volume } = sweep;
    if n < 2 {
        return Err(invalid("need at least two shadow models"));
    }
    if batch_volume == 0 {
        return Err(invalid("batch volume must be positive"));
    }
    let target_class = single_class(target_class_data)?;
    if other_class_data.iter().any(|s| s.label == target_class) {
        return Err(invalid("other-class data contains target-class samples"));
    }
    if target_class_data.len() < n * batch_volume {
        return Err(invalid(format!(
            "{} target samples cannot fill {n} shadows of {batch_volume}",
            target_class_data.len()
        )));
    }
    let probe_slice = test_aux
        .slice(target_class)
        .ok_or_else(|| invalid(format!("probe data has no class {target_class}")))?;
    let shadow_ms = (1..=n)
        .into_par_iter()
        .map(|j| {
            let part = target_class_data.take_class(target_class, j * batch_volume)?;
            let model = train_shadow(&part.concat(other_class_data)?)?;
            model.probe(probe_slice, probe)
        })
        .collect::<Result<Vec<_>>>()?;
    let um_batch = measurement_from_shadows(&shadow_ms)?;
    Ok(UnlearningMeasurement {
        target_class,
        um_batch,
        batch_volume,
        shadow_count: n,
        shadow_ms,
    })
}

fn single_class(data: &LabeledDataset) -> Result<ClassId> {
    let first = data
        .samples()
        .first()
        .ok_or_else(|| invalid("target-class data is empty"))?
        .label;
    if data.iter().any(|s| s.label != first) {
        return Err(invalid("target-class data mixes classes"));
    }
    Ok(first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub target_class: ClassId,
    pub ms_o: f64,
    pub ms_u: f64,
    pub ds: f64,
    pub um_batch: f64,
    pub batch_volume: usize,
    pub inferred_volume: u64,
    /// Filled in by the harness once ground truth is known.
    #[serde(default)]
    pub deviation: Option<f64>,
}

/// `ceil(ds / um_batch) * batch_volume`, or 0 when sensitivity did not rise.
pub fn infer_volume(ds: f64, um_batch: f64, batch_volume: usize) -> u64 {
    if ds.is_nan() || ds <= 0.0 {
        return 0;
    }
    let batches = (ds / um_batch).ceil();
    // Saturating: a ratio beyond u64 is meaningless anyway.
    (batches as u64).saturating_mul(batch_volume as u64)
}

pub fn verify_volume<P: Probe + ?Sized>(
    model_o: &P,
    model_u: &P,
    um: &UnlearningMeasurement,
    target_aux: &AuxiliaryData,
    probe: &ProbeConfig,
) -> Result<VolumeEstimate> {
    if !(um.um_batch > 0.0 && um.um_batch.is_finite()) {
        return Err(invalid("unlearning measurement must be positive"));
    }
    if um.batch_volume == 0 {
        return Err(invalid("batch volume must be positive"));
    }
    check_layouts(model_o, model_u)?;
    let slice = target_aux
        .slice(um.target_class)
        .ok_or_else(|| invalid(format!("probe data has no class {}", um.target_class)))?;
    probe.validate()?;
    let ms_o = model_o.probe(slice, probe)?;
    let ms_u = model_u.probe(slice, probe)?;
    let ds = ms_u - ms_o;
    Ok(VolumeEstimate {
        target_class: um.target_class,
        ms_o,
        ms_u,
        ds,
        um_batch: um.um_batch,
        batch_volume: um.batch_volume,
        inferred_volume: infer_volume(ds, um.um_batch, um.batch_volume),
        deviation: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub ms_u_test: f64,
    pub ms_u_tar: f64,
    /// `(ms_u_test - ms_u_tar) / max(ms_u_test, EPS_FLOOR)`
    pub gap_ratio: f64,
    pub honest: bool,
    pub tau: f64,
}

pub fn gap_ratio(ms_test: f64, ms_tar: f64) -> f64 {
    (ms_test - ms_tar) / ms_test.max(EPS_FLOOR)
}

/// Judges the unlearning honest when the target data moves the model about
/// as much as unseen test data does.
pub fn verify_sample<P: Probe + ?Sized>(
    model_u: &P,
    target_aux: &AuxiliaryData,
    test_aux: &AuxiliaryData,
    probe: &ProbeConfig,
    tau: f64,
) -> Result<SampleVerdict> {
    if tau.is_nan() {
        return Err(invalid("tau must be a number"));
    }
    if target_aux.per_class_count() != test_aux.per_class_count()
        || !target_aux.classes().eq(test_aux.classes())
    {
        return Err(invalid("target and test probes must have equal sizes over the same classes"));
    }
    let ms_u_tar = extract_sensitivity(model_u, target_aux, probe)?.total();
    let ms_u_test = extract_sensitivity(model_u, test_aux, probe)?.total();
    let gap_ratio = gap_ratio(ms_u_test, ms_u_tar);
    Ok(SampleVerdict {
        ms_u_test,
        ms_u_tar,
        gap_ratio,
        honest: gap_ratio <= tau,
        tau,
    })
}

/// `|true - inferred| / true`
pub fn deviation(true_volume: u64, inferred_volume: u64) -> Result<f64> {
    if true_volume == 0 {
        return Err(invalid("true volume must be positive"));
    }
    Ok(true_volume.abs_diff(inferred_volume) as f64 / true_volume as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_synthetic;
    use crate::nnet::{init_model, Model};
    use crate::sensitivity::AuxSource;

    #[test]
    fn deviation_values() {
        assert!((deviation(500, 470).unwrap() - 0.06).abs() < 1e-12);
        assert_eq!(deviation(1000, 1000).unwrap(), 0.0);
        assert!((deviation(1000, 1300).unwrap() - 0.3).abs() < 1e-12);
        assert!(deviation(0, 10).is_err());
    }

    #[test]
    fn measurement_arithmetic() {
        assert_eq!(measurement_from_shadows(&[10.0, 8.0, 6.0, 4.0]).unwrap(), 2.0);
        assert_eq!(measurement_from_shadows(&[3.0, 1.5]).unwrap(), 1.5);
        assert!(matches!(
            measurement_from_shadows(&[1.0, 2.0]),
            Err(Error::Calibration(_))
        ));
        assert!(measurement_from_shadows(&[1.0]).is_err());
    }

    #[test]
    fn volume_arithmetic() {
        assert_eq!(infer_volume(5.0, 2.0, 100), 300);
        assert_eq!(infer_volume(4.0, 2.0, 100), 200);
        assert_eq!(infer_volume(0.0, 2.0, 100), 0);
        assert_eq!(infer_volume(-1.0, 2.0, 100), 0);
        assert_eq!(infer_volume(1e-9, 2.0, 100), 100);
    }

    fn fixture() -> (Model, AuxiliaryData) {
        let d = gen_synthetic(3, &[10, 10, 10], 3, 3.0, 1).unwrap();
        let m = init_model(&ModelSpec::new(3, vec![4], 3).unwrap(), 5);
        let aux = AuxiliaryData::take(&d, 0..3, 10, AuxSource::TestData).unwrap();
        (m, aux)
    }

    #[test]
    fn identical_models_change_nothing() {
        let (m, aux) = fixture();
        let probe = ProbeConfig::new(0.01);
        let v = verify_class(&m, &m.clone(), &aux, &probe, 0.01).unwrap();
        assert!(v.flagged().is_empty());
        assert!(v.classes.values().all(|e| e.relative_change == 0.0));

        let um = UnlearningMeasurement {
            target_class: 1,
            um_batch: 1.0,
            batch_volume: 100,
            shadow_count: 2,
            shadow_ms: vec![2.0, 1.0],
        };
        let est = verify_volume(&m, &m, &um, &aux, &probe).unwrap();
        assert_eq!(est.ds, 0.0);
        assert_eq!(est.inferred_volume, 0);
        let bad = UnlearningMeasurement { um_batch: 0.0, ..um };
        assert!(verify_volume(&m, &m, &bad, &aux, &probe).is_err());
    }

    #[test]
    fn zero_threshold_flags_any_change() {
        let (m, aux) = fixture();
        let mut params = m.params().to_vec();
        params[0] += 0.5;
        let moved = Model::from_params(m.spec().clone(), params, m.provenance()).unwrap();
        let v = verify_class(&m, &moved, &aux, &ProbeConfig::new(0.01), 0.0).unwrap();
        let changed: BTreeSet<_> = v.classes.iter().filter(|(_, e)| e.ds != 0.0).map(|(c, _)| *c).collect();
        assert!(!changed.is_empty());
        assert_eq!(v.flagged(), changed);
    }

    #[test]
    fn mismatched_architectures_are_rejected() {
        let (m, aux) = fixture();
        let other = init_model(&ModelSpec::new(3, vec![5], 3).unwrap(), 5);
        assert!(verify_class(&m, &other, &aux, &ProbeConfig::new(0.01), 0.01).is_err());
    }

    #[test]
    fn same_probe_sets_give_zero_gap() {
        let (m, aux) = fixture();
        let v = verify_sample(&m, &aux, &aux, &ProbeConfig::new(0.01), 0.0).unwrap();
        assert_eq!(v.gap_ratio, 0.0);
        assert!(v.honest);
    }

    #[test]
    fn unequal_probe_sizes_are_rejected() {
        let d = gen_synthetic(3, &[10, 10, 10], 3, 3.0, 1).unwrap();
        let (m, _) = fixture();
        let a = AuxiliaryData::take(&d, [0], 5, AuxSource::TargetData).unwrap();
        let b = AuxiliaryData::take(&d, [0], 6, AuxSource::TestData).unwrap();
        assert!(verify_sample(&m, &a, &b, &ProbeConfig::new(0.01), 0.1).is_err());
    }
}
