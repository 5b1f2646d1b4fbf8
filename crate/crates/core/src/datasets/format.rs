//! Columnar binary dataset files.
//!
//! ```text
//! "TRUVRF-DATA"            11 bytes
//! version                  u32 LE (= 1)
//! num_classes, dim         u32 LE each
//! count                    u64 LE
//! ids                      count x u64 LE
//! labels                   count x u32 LE
//! feature columns          dim x count x f64 LE (column j holds feature j of every sample)
//! ```

use std::path::Path;

use super::{LabeledDataset, Sample};
use crate::error::{format_err, Result};
use crate::wire::Reader;

pub const DATA_MAGIC: &[u8; 11] = b"TRUVRF-DATA";
const VERSION: u32 = 1;

pub fn encode_dataset(data: &LabeledDataset) -> Vec<u8> {
    let n = data.len();
    let mut out = Vec::with_capacity(31 + n * (12 + 8 * data.dim()));
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(data.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(data.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for s in data.iter() {
        out.extend_from_slice(&s.id.to_le_bytes());
    }
    for s in data.iter() {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
    }
    for j in 0..data.dim() {
        for s in data.iter() {
            out.extend_from_slice(&s.features[j].to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader::new(bytes);
    r.expect_magic(DATA_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported dataset version {version}")));
    }
    let num_classes = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let count = usize::try_from(count).map_err(|_| format_err("sample count overflows"))?;
    let row_bytes = dim
        .checked_mul(8)
        .and_then(|b| b.checked_add(12))
        .ok_or_else(|| format_err("dimension overflows"))?;
    r.require(count.checked_mul(row_bytes).ok_or_else(|| format_err("size overflows"))?)?;

    let ids: Vec<u64> = (0..count).map(|_| r.u64()).collect::<Result<_>>()?;
    let labels: Vec<u32> = (0..count).map(|_| r.u32()).collect::<Result<_>>()?;
    let mut features = vec![Vec::with_capacity(dim); count];
    for _ in 0..dim {
        for f in features.iter_mut() {
            f.push(r.f64()?);
        }
    }
    r.finish()?;
    let samples = ids
        .into_iter()
        .zip(labels)
        .zip(features)
        .map(|((id, label), features)| Sample {
            id,
            features,
            label: label as usize,
        })
        .collect();
    LabeledDataset::new(num_classes, dim, samples).map_err(|e| format_err(e.to_string()))
}

pub fn write_dataset(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(data))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    decode_dataset(&std::fs::read(path)?)
}
