//! Labeled datasets with stable sample identities, plus unlearning requests.
//!
//! Every sample carries an integer ID that never changes under slicing, so a
//! request to forget "samples 12, 40 and 77" means the same thing before and
//! after any filtering, sharding or substitution.

mod format;
pub mod idx;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

pub use format::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATA_MAGIC};
pub use idx::{idx_dataset, load_idx, parse_idx_images, parse_idx_labels, IdxImages};
pub use synthetic::{gen_synthetic, SyntheticSpec};

pub type SampleId = u64;
pub type ClassId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub label: ClassId,
}

/// An immutable collection of samples with a per-class ID index.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    num_classes: usize,
    dim: usize,
    samples: Vec<Sample>,
    class_index: Vec<Vec<SampleId>>,
    positions: HashMap<SampleId, usize>,
}

impl PartialEq for LabeledDataset {
    fn eq(&self, other: &Self) -> bool {
        self.num_classes == other.num_classes && self.dim == other.dim && self.samples == other.samples
    }
}

impl LabeledDataset {
    /// Builds a dataset, checking ID uniqueness, feature width, label range
    /// and finiteness of every feature.
    pub fn new(num_classes: usize, dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if num_classes < 2 {
            return Err(invalid(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if dim == 0 {
            return Err(invalid("feature dimension must be >= 1"));
        }
        let mut class_index = vec![Vec::new(); num_classes];
        let mut positions = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(invalid(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(invalid(format!(
                    "sample {} has label {} >= num_classes {num_classes}",
                    s.id, s.label
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("sample {} has a non-finite feature", s.id)));
            }
            if positions.insert(s.id, pos).is_some() {
                return Err(invalid(format!("duplicate sample id {}", s.id)));
            }
            class_index[s.label].push(s.id);
        }
        Ok(Self {
            num_classes,
            dim,
            samples,
            class_index,
            positions,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// IDs of class `c` in dataset order.
    pub fn class_ids(&self, c: ClassId) -> &[SampleId] {
        self.class_index.get(c).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn class_count(&self, c: ClassId) -> usize {
        self.class_ids(c).len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_index.iter().map(Vec::len).collect()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.positions.contains_key(&id)
    }

    pub fn get(&self, id: SampleId) -> Option<&Sample> {
        self.positions.get(&id).map(|&p| &self.samples[p])
    }

    fn rebuild(&self, samples: Vec<Sample>) -> Self {
        // Samples come from an already-validated dataset.
        Self::new(self.num_classes, self.dim, samples).expect("subset of a valid dataset")
    }

    /// Keeps the samples matching `keep`, preserving order and IDs.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Self {
        self.rebuild(self.samples.iter().filter(|s| keep(s)).cloned().collect())
    }

    /// The samples with the given IDs, in dataset order.
    pub fn subset(&self, ids: &BTreeSet<SampleId>) -> Result<Self> {
        if let Some(missing) = ids.iter().find(|id| !self.contains(**id)) {
            return Err(invalid(format!("unknown sample id {missing}")));
        }
        Ok(self.filter(|s| ids.contains(&s.id)))
    }

    /// All samples of class `c`.
    pub fn class_slice(&self, c: ClassId) -> Self {
        self.filter(|s| s.label == c)
    }

    /// The first `n` samples of class `c` (in dataset order).
    pub fn take_class(&self, c: ClassId, n: usize) -> Result<Self> {
        let ids = self.class_ids(c);
        if ids.len() < n {
            return Err(invalid(format!(
                "class {c} has {} samples, {n} requested",
                ids.len()
            )));
        }
        self.subset(&ids[..n].iter().copied().collect())
    }

    /// Concatenates two datasets with disjoint IDs.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.num_classes != other.num_classes || self.dim != other.dim {
            return Err(invalid("cannot concatenate datasets of different shape"));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Self::new(self.num_classes, self.dim, samples)
    }

    /// Returns a copy with the labels of the given samples replaced.
    pub fn relabel(&self, new_labels: &BTreeMap<SampleId, ClassId>) -> Result<Self> {
        for (&id, &label) in new_labels {
            if !self.contains(id) {
                return Err(invalid(format!("unknown sample id {id}")));
            }
            if label >= self.num_classes {
                return Err(invalid(format!("label {label} out of range")));
            }
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                label: new_labels.get(&s.id).copied().unwrap_or(s.label),
                ..s.clone()
            })
            .collect();
        Self::new(self.num_classes, self.dim, samples)
    }
}

/// The samples a contributor asks to forget, grouped by class.
///
/// Per-class volume is always the size of the ID set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    from = "BTreeMap<ClassId, BTreeSet<SampleId>>",
    into = "BTreeMap<ClassId, BTreeSet<SampleId>>"
)]
pub struct UnlearnRequest {
    per_class: BTreeMap<ClassId, BTreeSet<SampleId>>,
}

impl From<BTreeMap<ClassId, BTreeSet<SampleId>>> for UnlearnRequest {
    fn from(map: BTreeMap<ClassId, BTreeSet<SampleId>>) -> Self {
        Self::from_map(map)
    }
}

impl From<UnlearnRequest> for BTreeMap<ClassId, BTreeSet<SampleId>> {
    fn from(req: UnlearnRequest) -> Self {
        req.per_class
    }
}

impl UnlearnRequest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a request; empty ID sets are dropped.
    pub fn from_map(per_class: BTreeMap<ClassId, BTreeSet<SampleId>>) -> Self {
        let per_class = per_class.into_iter().filter(|(_, ids)| !ids.is_empty()).collect();
        Self { per_class }
    }

    /// Groups the given IDs by their label in `data`.
    pub fn from_ids(data: &LabeledDataset, ids: impl IntoIterator<Item = SampleId>) -> Result<Self> {
        let mut per_class: BTreeMap<ClassId, BTreeSet<SampleId>> = BTreeMap::new();
        for id in ids {
            let s = data
                .get(id)
                .ok_or_else(|| invalid(format!("unknown sample id {id}")))?;
            per_class.entry(s.label).or_default().insert(id);
        }
        Ok(Self::from_map(per_class))
    }

    /// Every sample of class `c`.
    pub fn whole_class(data: &LabeledDataset, c: ClassId) -> Self {
        let ids = data.class_ids(c).iter().copied().collect();
        Self::from_map(BTreeMap::from([(c, ids)]))
    }

    pub fn is_empty(&self) -> bool {
        self.per_class.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.per_class.keys().copied()
    }

    pub fn class_ids(&self, c: ClassId) -> Option<&BTreeSet<SampleId>> {
        self.per_class.get(&c)
    }

    pub fn per_class(&self) -> &BTreeMap<ClassId, BTreeSet<SampleId>> {
        &self.per_class
    }

    pub fn volume(&self, c: ClassId) -> usize {
        self.per_class.get(&c).map_or(0, BTreeSet::len)
    }

    pub fn total_volume(&self) -> usize {
        self.per_class.values().map(BTreeSet::len).sum()
    }

    pub fn ids(&self) -> BTreeSet<SampleId> {
        self.per_class.values().flatten().copied().collect()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.per_class.values().any(|ids| ids.contains(&id))
    }

    /// Checks that every referenced ID exists in `data` with the stated class.
    pub fn validate(&self, data: &LabeledDataset) -> Result<()> {
        for (&c, ids) in &self.per_class {
            for &id in ids {
                match data.get(id) {
                    None => return Err(invalid(format!("unknown sample id {id}"))),
                    Some(s) if s.label != c => {
                        return Err(invalid(format!(
                            "sample {id} is class {}, request lists it under class {c}",
                            s.label
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.per_class.iter().all(|(c, ids)| {
            other
                .per_class
                .get(c)
                .is_some_and(|o| ids.is_subset(o))
        })
    }
}

/// `data` without the requested samples.
pub fn remove(data: &LabeledDataset, request: &UnlearnRequest) -> Result<LabeledDataset> {
    request.validate(data)?;
    Ok(data.filter(|s| !request.contains(s.id)))
}

/// Draws, for every class in `request`, the same number of different samples
/// of that class from `data`. This is what a deceiving server forgets instead.
pub fn sample_disjoint(
    data: &LabeledDataset,
    request: &UnlearnRequest,
    seed: u64,
) -> Result<UnlearnRequest> {
    request.validate(data)?;
    let mut out = BTreeMap::new();
    for (&c, ids) in request.per_class() {
        let available = data.class_count(c);
        if available < 2 * ids.len() {
            return Err(Error::Infeasible(format!(
                "class {c} has {available} samples; substituting {} requires at least {}",
                ids.len(),
                2 * ids.len()
            )));
        }
        let mut pool: Vec<SampleId> = data
            .class_ids(c)
            .iter()
            .copied()
            .filter(|id| !ids.contains(id))
            .collect();
        let mut rng = seed::derived_rng(seed, &[seed::TAG_DISJOINT, c as u64]);
        pool.shuffle(&mut rng);
        out.insert(c, pool.into_iter().take(ids.len()).collect());
    }
    Ok(UnlearnRequest::from_map(out))
}
