//! Server-side unlearning: retraining from scratch, SISA sharded retraining
//! and amnesiac relabeling.

mod amnesiac;
mod sisa;

use crate::datasets::{remove, LabeledDataset, UnlearnRequest};
use crate::error::{format_err, invalid, Result};
use crate::nnet::{decode_model, encode_model, init_model, train, Model, ModelSpec, TrainConfig, MODEL_MAGIC};

pub use amnesiac::{amnesiac_relabel, amnesiac_unlearn};
pub use sisa::{
    decode_ensemble, encode_ensemble, read_ensemble, sisa_predict, sisa_train, sisa_unlearn,
    write_ensemble, Shard, SisaEnsemble, ENSEMBLE_MAGIC,
};

/// A model as returned by the server: a single network or a SISA ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Single(Model),
    Ensemble(SisaEnsemble),
}

impl Trained {
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        match self {
            Trained::Single(m) => m.predict(features),
            Trained::Ensemble(e) => sisa_predict(e, features),
        }
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(invalid("cannot evaluate on an empty dataset"));
        }
        let mut correct = 0usize;
        for s in data.iter() {
            if self.predict(&s.features)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

impl Trained {
    pub fn spec(&self) -> &ModelSpec {
        match self {
            Trained::Single(m) => m.spec(),
            Trained::Ensemble(e) => e.spec(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Trained::Single(m) => encode_model(m),
            Trained::Ensemble(e) => encode_ensemble(e),
        }
    }

    /// Decodes a model or an ensemble file, told apart by their magic.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(ENSEMBLE_MAGIC) {
            decode_ensemble(bytes).map(Trained::Ensemble)
        } else if bytes.starts_with(MODEL_MAGIC) {
            decode_model(bytes).map(Trained::Single)
        } else {
            Err(format_err("neither a model nor an ensemble file"))
        }
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model_o: Trained,
    pub model_u: Trained,
    /// What the server actually removed.
    pub executed_request: UnlearnRequest,
}

/// Trains `M_o` on `data` and `M_u` from the same initialisation on
/// `data` minus the request.
pub fn retrain_unlearn(
    data: &LabeledDataset,
    request: &UnlearnRequest,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<UnlearnOutcome> {
    let model_o = train(&init_model(spec, seed), data, cfg)?;
    let model_u = retrain_without(data, request, spec, cfg, seed)?;
    Ok(UnlearnOutcome {
        model_o: Trained::Single(model_o),
        model_u: Trained::Single(model_u),
        executed_request: request.clone(),
    })
}

/// Just the unlearned half of [`retrain_unlearn`].
pub fn retrain_without(
    data: &LabeledDataset,
    request: &UnlearnRequest,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Model> {
    let reduced = remove(data, request)?;
    if reduced.is_empty() {
        return Err(invalid("request removes the entire training set"));
    }
    train(&init_model(spec, seed), &reduced, cfg)
}
