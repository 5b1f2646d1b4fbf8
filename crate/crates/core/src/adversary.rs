//! What a server actually forgets when handed an unlearning request.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{sample_disjoint, LabeledDataset, SampleId, UnlearnRequest};
use crate::error::{invalid, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerBehavior {
    Honest {
        #[serde(default)]
        seed: u64,
    },
    /// Ignores the request and returns the original model.
    Neglecting {
        #[serde(default)]
        seed: u64,
    },
    /// Keeps `keep_fraction` of each requested class and forgets the rest.
    Lazy {
        keep_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Forgets the same number of different samples from each class.
    Deceiving {
        #[serde(default)]
        seed: u64,
    },
}

impl ServerBehavior {
    pub fn name(&self) -> &'static str {
        match self {
            ServerBehavior::Honest { .. } => "honest",
            ServerBehavior::Neglecting { .. } => "neglecting",
            ServerBehavior::Lazy { .. } => "lazy",
            ServerBehavior::Deceiving { .. } => "deceiving",
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            ServerBehavior::Honest { seed }
            | ServerBehavior::Neglecting { seed }
            | ServerBehavior::Lazy { seed, .. }
            | ServerBehavior::Deceiving { seed } => seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            ServerBehavior::Honest { .. } => ServerBehavior::Honest { seed },
            ServerBehavior::Neglecting { .. } => ServerBehavior::Neglecting { seed },
            ServerBehavior::Lazy { keep_fraction, .. } => ServerBehavior::Lazy { keep_fraction, seed },
            ServerBehavior::Deceiving { .. } => ServerBehavior::Deceiving { seed },
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, ServerBehavior::Honest { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let ServerBehavior::Lazy { keep_fraction, .. } = *self {
            if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
                return Err(invalid(format!(
                    "lazy keep_fraction must lie strictly between 0 and 1, got {keep_fraction}"
                )));
            }
        }
        Ok(())
    }
}

/// The request the server really executes under `behavior`.
pub fn apply_behavior(
    request: &UnlearnRequest,
    behavior: &ServerBehavior,
    data: &LabeledDataset,
) -> Result<UnlearnRequest> {
    behavior.validate()?;
    request.validate(data)?;
    match *behavior {
        ServerBehavior::Honest { .. } => Ok(request.clone()),
        ServerBehavior::Neglecting { .. } => Ok(UnlearnRequest::new()),
        ServerBehavior::Lazy { keep_fraction, seed } => {
            let mut out: BTreeMap<_, BTreeSet<SampleId>> = BTreeMap::new();
            for (&c, ids) in request.per_class() {
                let forget = ((1.0 - keep_fraction) * ids.len() as f64).floor() as usize;
                let mut pool: Vec<SampleId> = ids.iter().copied().collect();
                let mut rng = seed::derived_rng(seed, &[seed::TAG_LAZY, c as u64]);
                pool.shuffle(&mut rng);
                out.insert(c, pool.into_iter().take(forget).collect());
            }
            Ok(UnlearnRequest::from_map(out))
        }
        ServerBehavior::Deceiving { seed } => sample_disjoint(data, request, seed),
    }
}
