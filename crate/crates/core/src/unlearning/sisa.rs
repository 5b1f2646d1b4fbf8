//! SISA: sharded, isolated training. Each shard trains its own sub-model, so
//! forgetting a sample only retrains the shard that held it.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use crate::datasets::{LabeledDataset, SampleId, UnlearnRequest};
use crate::error::{format_err, invalid, Result};
use crate::nnet::{argmax, init_model, read_model_from_wire, train, Model, ModelSpec, TrainConfig};
use crate::seed;
use crate::wire::Reader;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub id: u32,
    pub ids: BTreeSet<SampleId>,
    /// How many times this shard has been retrained.
    pub generation: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SisaEnsemble {
    shards: Vec<Shard>,
    sub_models: Vec<Model>,
    train_cfg: TrainConfig,
    base_seed: u64,
}

impl SisaEnsemble {
    pub fn k(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn sub_models(&self) -> &[Model] {
        &self.sub_models
    }

    pub fn spec(&self) -> &ModelSpec {
        self.sub_models[0].spec()
    }

    pub fn train_cfg(&self) -> &TrainConfig {
        &self.train_cfg
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn training_ids(&self) -> BTreeSet<SampleId> {
        self.shards.iter().flat_map(|s| s.ids.iter().copied()).collect()
    }
}

/// A shard always restarts from the same initialisation and shuffle order,
/// so retraining it is retraining from scratch on the reduced shard, exactly
/// as for a single model.
fn shard_seed(base: u64, shard: u32) -> u64 {
    seed::derive(base, &[seed::TAG_SHARD, u64::from(shard)])
}

fn train_shard(
    data: &LabeledDataset,
    shard: &Shard,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<Model> {
    let part = data.subset(&shard.ids)?;
    if part.is_empty() {
        return Err(invalid(format!("shard {} has no samples left", shard.id)));
    }
    let s = shard_seed(base_seed, shard.id);
    let shard_cfg = TrainConfig {
        shuffle_seed: seed::derive(cfg.shuffle_seed, &[u64::from(shard.id)]),
        ..*cfg
    };
    train(&init_model(spec, s), &part, &shard_cfg)
}

/// Round-robin sharding in ascending ID order, then one sub-model per shard.
pub fn sisa_train(
    data: &LabeledDataset,
    k: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SisaEnsemble> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if data.len() < k {
        return Err(invalid(format!("{} samples cannot fill {k} shards", data.len())));
    }
    let mut ids: Vec<SampleId> = data.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    let mut shards: Vec<Shard> = (0..k as u32)
        .map(|id| Shard {
            id,
            ids: BTreeSet::new(),
            generation: 0,
        })
        .collect();
    for (i, id) in ids.into_iter().enumerate() {
        shards[i % k].ids.insert(id);
    }
    let sub_models = shards
        .par_iter()
        .map(|s| train_shard(data, s, spec, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SisaEnsemble {
        shards,
        sub_models,
        train_cfg: *cfg,
        base_seed: seed,
    })
}

/// Drops the requested samples and retrains only the shards they touched,
/// each from a fresh initialisation. `data` is the server's training store;
/// it must hold every sample still assigned to a touched shard.
pub fn sisa_unlearn(
    ensemble: &SisaEnsemble,
    data: &LabeledDataset,
    request: &UnlearnRequest,
) -> Result<SisaEnsemble> {
    let forget = request.ids();
    let known = ensemble.training_ids();
    if let Some(id) = forget.iter().find(|id| !known.contains(id)) {
        return Err(invalid(format!("sample {id} is not in the ensemble's training set")));
    }
    let spec = ensemble.spec().clone();
    let mut next = ensemble.clone();
    let touched: Vec<usize> = next
        .shards
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.ids.is_disjoint(&forget))
        .map(|(i, _)| i)
        .collect();
    for &i in &touched {
        let shard = &mut next.shards[i];
        shard.ids.retain(|id| !forget.contains(id));
        shard.generation += 1;
    }
    let retrained = touched
        .par_iter()
        .map(|&i| train_shard(data, &next.shards[i], &spec, &next.train_cfg, next.base_seed))
        .collect::<Result<Vec<_>>>()?;
    for (i, m) in touched.into_iter().zip(retrained) {
        next.sub_models[i] = m;
    }
    Ok(next)
}

/// Majority vote over sub-model predictions; ties go to the lowest class.
pub fn sisa_predict(ensemble: &SisaEnsemble, features: &[f64]) -> Result<usize> {
    let mut votes = vec![0.0; ensemble.spec().num_classes];
    for m in &ensemble.sub_models {
        votes[m.predict(features)?] += 1.0;
    }
    Ok(argmax(&votes))
}

pub const ENSEMBLE_MAGIC: &[u8; 15] = b"TRUVRF-ENSEMBLE";
const VERSION: u32 = 1;

/// Container layout:
///
/// ```text
/// "TRUVRF-ENSEMBLE"        15 bytes
/// version                  u32 LE (= 1)
/// shard count k            u32 LE
/// learning rate            f64 LE
/// epochs, batch size       u64 LE each
/// shuffle seed, base seed  u64 LE each
/// k times:
///   shard id, generation   u32 LE each
///   id count               u64 LE, then that many u64 LE sample IDs
///   sub-model              a complete TRUVRF-MODEL record
/// ```
pub fn encode_ensemble(e: &SisaEnsemble) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ENSEMBLE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(e.k() as u32).to_le_bytes());
    out.extend_from_slice(&e.train_cfg.learning_rate.to_le_bytes());
    out.extend_from_slice(&(e.train_cfg.epochs as u64).to_le_bytes());
    out.extend_from_slice(&(e.train_cfg.batch_size as u64).to_le_bytes());
    out.extend_from_slice(&e.train_cfg.shuffle_seed.to_le_bytes());
    out.extend_from_slice(&e.base_seed.to_le_bytes());
    for (shard, model) in e.shards.iter().zip(&e.sub_models) {
        out.extend_from_slice(&shard.id.to_le_bytes());
        out.extend_from_slice(&shard.generation.to_le_bytes());
        out.extend_from_slice(&(shard.ids.len() as u64).to_le_bytes());
        for id in &shard.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend_from_slice(&crate::nnet::encode_model(model));
    }
    out
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<SisaEnsemble> {
    let mut r = Reader::new(bytes);
    r.expect_magic(ENSEMBLE_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported ensemble version {version}")));
    }
    let k = r.u32()? as usize;
    if k == 0 {
        return Err(format_err("ensemble has no shards"));
    }
    let to_usize = |v: u64| usize::try_from(v).map_err(|_| format_err("value overflows usize"));
    let train_cfg = TrainConfig {
        learning_rate: r.f64()?,
        epochs: to_usize(r.u64()?)?,
        batch_size: to_usize(r.u64()?)?,
        shuffle_seed: r.u64()?,
    };
    train_cfg.validate().map_err(|e| format_err(e.to_string()))?;
    let base_seed = r.u64()?;
    let mut shards = Vec::new();
    let mut sub_models: Vec<Model> = Vec::new();
    let mut seen = BTreeSet::new();
    for _ in 0..k {
        let id = r.u32()?;
        let generation = r.u32()?;
        let n = to_usize(r.u64()?)?;
        r.require(n.saturating_mul(8))?;
        let mut ids = BTreeSet::new();
        for _ in 0..n {
            let sample = r.u64()?;
            if !seen.insert(sample) {
                return Err(format_err(format!("sample {sample} appears in two shards")));
            }
            ids.insert(sample);
        }
        let model = read_model_from_wire(&mut r)?;
        if let Some(first) = sub_models.first() {
            if first.spec() != model.spec() {
                return Err(format_err("sub-models disagree on architecture"));
            }
        }
        shards.push(Shard { id, ids, generation });
        sub_models.push(model);
    }
    r.finish()?;
    Ok(SisaEnsemble {
        shards,
        sub_models,
        train_cfg,
        base_seed,
    })
}

pub fn write_ensemble(e: &SisaEnsemble, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_ensemble(e))?;
    Ok(())
}

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<SisaEnsemble> {
    decode_ensemble(&std::fs::read(path)?)
}
