//! Per-class model sensitivity.
//!
//! A copy of the model takes `passes` full-batch gradient steps at rate
//! `alpha` on the class's auxiliary samples. The class sensitivity is the
//! total absolute parameter displacement divided by `alpha`. With one pass
//! this is exactly the L1 norm of the mean-loss gradient on those samples.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{ClassId, LabeledDataset, SampleId};
use crate::error::{invalid, Result};
use crate::nnet::{descend, Model, ModelSpec};
use crate::unlearning::{SisaEnsemble, Trained};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub alpha: f64,
    #[serde(default = "default_passes")]
    pub passes: usize,
}

fn default_passes() -> usize {
    1
}

impl ProbeConfig {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, passes: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(invalid("probe learning rate must be positive"));
        }
        if self.passes == 0 {
            return Err(invalid("probe needs at least one pass"));
        }
        Ok(())
    }
}

/// Architecture of something that can be probed; two models are only
/// comparable when their layouts match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeLayout {
    pub spec: ModelSpec,
    /// 1 for a single network, `k` for a SISA ensemble.
    pub members: usize,
}

pub trait Probe: Sync {
    fn layout(&self) -> ProbeLayout;

    /// Sensitivity of this model to `data` (which may mix classes).
    fn probe(&self, data: &LabeledDataset, cfg: &ProbeConfig) -> Result<f64>;
}

impl Probe for Model {
    fn layout(&self) -> ProbeLayout {
        ProbeLayout {
            spec: self.spec().clone(),
            members: 1,
        }
    }

    fn probe(&self, data: &LabeledDataset, cfg: &ProbeConfig) -> Result<f64> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(invalid("probe data is empty"));
        }
        // The copy moves; `self` never does.
        let moved = descend(self, data, cfg.alpha, cfg.passes)?;
        let displacement: f64 = self
            .params()
            .iter()
            .zip(moved.params())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(displacement / cfg.alpha)
    }
}

/// An ensemble's parameter vector is the concatenation of its members', so
/// its sensitivity is the sum over sub-models.
impl Probe for SisaEnsemble {
    fn layout(&self) -> ProbeLayout {
        ProbeLayout {
            spec: self.spec().clone(),
            members: self.k(),
        }
    }

    fn probe(&self, data: &LabeledDataset, cfg: &ProbeConfig) -> Result<f64> {
        self.sub_models()
            .iter()
            .map(|m| m.probe(data, cfg))
            .sum()
    }
}

impl Probe for Trained {
    fn layout(&self) -> ProbeLayout {
        match self {
            Trained::Single(m) => m.layout(),
            Trained::Ensemble(e) => e.layout(),
        }
    }

    fn probe(&self, data: &LabeledDataset, cfg: &ProbeConfig) -> Result<f64> {
        match self {
            Trained::Single(m) => m.probe(data, cfg),
            Trained::Ensemble(e) => e.probe(data, cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxSource {
    /// Samples named in the unlearning request.
    TargetData,
    /// Held-out samples the server never trained on.
    TestData,
}

/// Balanced per-class probe sets.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryData {
    source: AuxSource,
    per_class_count: usize,
    slices: BTreeMap<ClassId, LabeledDataset>,
}

impl AuxiliaryData {
    /// Checks that every slice is nonempty, single-class and of equal size.
    pub fn new(source: AuxSource, slices: BTreeMap<ClassId, LabeledDataset>) -> Result<Self> {
        let per_class_count = slices.values().next().map_or(0, LabeledDataset::len);
        if slices.is_empty() || per_class_count == 0 {
            return Err(invalid("auxiliary data needs at least one nonempty class slice"));
        }
        for (&c, slice) in &slices {
            if slice.len() != per_class_count {
                return Err(invalid(format!(
                    "class {c} slice has {} samples, expected {per_class_count}",
                    slice.len()
                )));
            }
            if slice.iter().any(|s| s.label != c) {
                return Err(invalid(format!("class {c} slice holds samples of another class")));
            }
        }
        Ok(Self {
            source,
            per_class_count,
            slices,
        })
    }

    /// The first `per_class_count` samples of each listed class.
    pub fn take(
        data: &LabeledDataset,
        classes: impl IntoIterator<Item = ClassId>,
        per_class_count: usize,
        source: AuxSource,
    ) -> Result<Self> {
        let slices = classes
            .into_iter()
            .map(|c| Ok((c, data.take_class(c, per_class_count)?)))
            .collect::<Result<_>>()?;
        Self::new(source, slices)
    }

    /// Groups the given samples of `data` by class.
    pub fn from_ids(
        data: &LabeledDataset,
        ids: impl IntoIterator<Item = SampleId>,
        source: AuxSource,
    ) -> Result<Self> {
        let ids = ids.into_iter().collect();
        let subset = data.subset(&ids)?;
        let slices = (0..subset.num_classes())
            .filter(|&c| subset.class_count(c) > 0)
            .map(|c| (c, subset.class_slice(c)))
            .collect();
        Self::new(source, slices)
    }

    pub fn source(&self) -> AuxSource {
        self.source
    }

    pub fn per_class_count(&self) -> usize {
        self.per_class_count
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.slices.keys().copied()
    }

    pub fn slice(&self, c: ClassId) -> Option<&LabeledDataset> {
        self.slices.get(&c)
    }

    pub fn slices(&self) -> &BTreeMap<ClassId, LabeledDataset> {
        &self.slices
    }

    pub fn descriptor(&self) -> AuxDescriptor {
        AuxDescriptor {
            kind: self.source,
            per_class_count: self.per_class_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxDescriptor {
    pub kind: AuxSource,
    pub per_class_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub alpha: f64,
    pub probe_passes: usize,
    pub source: AuxDescriptor,
    pub ms: BTreeMap<ClassId, f64>,
}

impl SensitivityProfile {
    pub fn get(&self, c: ClassId) -> Option<f64> {
        self.ms.get(&c).copied()
    }

    pub fn total(&self) -> f64 {
        self.ms.values().sum()
    }

    /// Profiles are comparable when they were extracted with the same rate,
    /// pass count and probe size over the same classes.
    pub fn check_comparable(&self, other: &Self) -> Result<()> {
        if self.alpha.to_bits() != other.alpha.to_bits() || self.probe_passes != other.probe_passes {
            return Err(invalid("profiles were extracted with different probe settings"));
        }
        if self.source.per_class_count != other.source.per_class_count {
            return Err(invalid(format!(
                "profiles use different probe sizes ({} vs {})",
                self.source.per_class_count, other.source.per_class_count
            )));
        }
        if !self.ms.keys().eq(other.ms.keys()) {
            return Err(invalid("profiles cover different classes"));
        }
        Ok(())
    }
}

pub fn extract_sensitivity<P: Probe + ?Sized>(
    model: &P,
    aux: &AuxiliaryData,
    cfg: &ProbeConfig,
) -> Result<SensitivityProfile> {
    cfg.validate()?;
    let ms = aux
        .slices
        .par_iter()
        .map(|(&c, slice)| Ok((c, model.probe(slice, cfg)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();
    Ok(SensitivityProfile {
        alpha: cfg.alpha,
        probe_passes: cfg.passes,
        source: aux.descriptor(),
        ms,
    })
}

/// `MS_u - MS_o` per class, sign preserved.
pub fn sensitivity_difference(
    prof_u: &SensitivityProfile,
    prof_o: &SensitivityProfile,
) -> Result<BTreeMap<ClassId, f64>> {
    prof_u.check_comparable(prof_o)?;
    Ok(prof_u
        .ms
        .iter()
        .map(|(&c, &u)| (c, u - prof_o.ms[&c]))
        .collect())
}
