//! Self-describing model files.
//!
//! ```text
//! "TRUVRF-MODEL"           12 bytes
//! version                  u32 LE (= 1)
//! input_dim, num_classes   u32 LE each
//! activation, init_scheme  u8 each (0 = ReLU, 0 = scaled uniform)
//! hidden count             u32 LE, then one u32 LE width per hidden layer
//! init seed, step count    u64 LE each
//! parameter count          u64 LE
//! parameters               f64 LE, canonical layer order
//! ```

use std::path::Path;

use super::{Activation, InitScheme, Model, ModelSpec, Provenance};
use crate::error::{format_err, Result};
use crate::wire::Reader;

pub const MODEL_MAGIC: &[u8; 12] = b"TRUVRF-MODEL";
const VERSION: u32 = 1;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::with_capacity(64 + 4 * spec.hidden_layers.len() + 8 * model.params().len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.num_classes as u32).to_le_bytes());
    out.push(match spec.activation {
        Activation::Relu => 0,
    });
    out.push(match spec.init_scheme {
        InitScheme::ScaledUniform => 0,
    });
    out.extend_from_slice(&(spec.hidden_layers.len() as u32).to_le_bytes());
    for &w in &spec.hidden_layers {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    let prov = model.provenance();
    out.extend_from_slice(&prov.init_seed.to_le_bytes());
    out.extend_from_slice(&prov.steps.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Decodes one model from the front of `r`; used directly by the ensemble
/// container.
pub(crate) fn read_model_from(r: &mut Reader<'_>) -> Result<Model> {
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported model version {version}")));
    }
    let input_dim = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let activation = match r.u8()? {
        0 => Activation::Relu,
        a => return Err(format_err(format!("unknown activation code {a}"))),
    };
    let init_scheme = match r.u8()? {
        0 => InitScheme::ScaledUniform,
        s => return Err(format_err(format!("unknown init scheme code {s}"))),
    };
    let hidden = r.u32()? as usize;
    r.require(hidden.saturating_mul(4))?;
    let hidden_layers = (0..hidden)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec {
        input_dim,
        hidden_layers,
        num_classes,
        activation,
        init_scheme,
    };
    spec.validate().map_err(|e| format_err(e.to_string()))?;
    let provenance = Provenance {
        init_seed: r.u64()?,
        steps: r.u64()?,
    };
    let count = r.u64()?;
    let expected = checked_parameter_count(&spec)
        .ok_or_else(|| format_err("declared architecture is too large"))?;
    if count != expected as u64 {
        return Err(format_err(format!(
            "file declares {count} parameters, architecture needs {expected}"
        )));
    }
    r.require(expected.saturating_mul(8))?;
    let params = (0..expected).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Model::from_params(spec, params, provenance).map_err(|e| format_err(e.to_string()))
}

fn checked_parameter_count(spec: &ModelSpec) -> Option<usize> {
    let widths: Vec<usize> = spec.widths().collect();
    widths.windows(2).try_fold(0usize, |acc, w| {
        w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc)
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    let model = read_model_from(&mut r)?;
    r.finish()?;
    Ok(model)
}

pub fn write_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&std::fs::read(path)?)
}
