//! IDX image/label files (the MNIST family layout).
//!
//! Header: two zero bytes, a type code, the number of dimensions, then one
//! big-endian `u32` per dimension. Only unsigned-byte payloads are accepted:
//! magic `0x00000803` for 3-D image tensors and `0x00000801` for label vectors.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::{LabeledDataset, Sample};
use crate::error::{format_err, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// One flat `rows * cols` vector per image, scaled to `[0, 1]`.
    pub pixels: Vec<Vec<f64>>,
}

fn read_u32(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    cur.read_u32::<BigEndian>()
        .map_err(|_| format_err(format!("truncated header: missing {what}")))
}

fn payload<'a>(cur: &Cursor<&'a [u8]>, expected: usize) -> Result<&'a [u8]> {
    let rest = &cur.get_ref()[cur.position() as usize..];
    if rest.len() < expected {
        return Err(format_err(format!(
            "truncated payload: {} bytes present, {expected} declared",
            rest.len()
        )));
    }
    if rest.len() > expected {
        return Err(format_err(format!(
            "{} trailing bytes after payload",
            rest.len() - expected
        )));
    }
    Ok(rest)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(format!(
            "bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut cur, "item count")? as usize;
    let rows = read_u32(&mut cur, "row count")? as usize;
    let cols = read_u32(&mut cur, "column count")? as usize;
    let per_image = rows
        .checked_mul(cols)
        .filter(|&n| n > 0)
        .ok_or_else(|| format_err("image dimensions must be nonzero"))?;
    let total = per_image
        .checked_mul(count)
        .ok_or_else(|| format_err("declared size overflows"))?;
    let data = payload(&cur, total)?;
    let pixels = if count == 0 {
        Vec::new()
    } else {
        data.chunks_exact(per_image)
            .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
            .collect()
    };
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(format_err(format!(
            "bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut cur, "item count")? as usize;
    Ok(payload(&cur, count)?.to_vec())
}

/// Pairs an image file with a label file. IDs follow file order and the
/// class count is one more than the largest label (at least two).
pub fn idx_dataset(images: IdxImages, labels: &[u8]) -> Result<LabeledDataset> {
    if images.pixels.len() != labels.len() {
        return Err(format_err(format!(
            "{} images but {} labels",
            images.pixels.len(),
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().map_or(2, |m| (m as usize + 1).max(2));
    let dim = images.rows * images.cols;
    let samples = images
        .pixels
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (features, &label))| Sample {
            id: i as u64,
            features,
            label: label as usize,
        })
        .collect();
    LabeledDataset::new(num_classes, dim, samples).map_err(|e| format_err(e.to_string()))
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let read = |p: &Path| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        std::fs::File::open(p)?.read_to_end(&mut buf)?;
        Ok(buf)
    };
    let images = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    idx_dataset(images, &labels)
}

/// Encoders, used to build fixtures and fuzz seeds.
pub fn encode_idx_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture_round_trip() {
        let imgs = vec![vec![0u8, 255, 51, 102], vec![1, 2, 3, 4]];
        let img_bytes = encode_idx_images(2, 2, &imgs);
        let lbl_bytes = encode_idx_labels(&[7, 2]);
        let images = parse_idx_images(&img_bytes).unwrap();
        assert_eq!((images.rows, images.cols), (2, 2));
        assert_eq!(images.pixels[0], vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(images.pixels[1][3], 4.0 / 255.0);
        let d = idx_dataset(images, &parse_idx_labels(&lbl_bytes).unwrap()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.num_classes(), 8);
        assert_eq!(d.get(0).unwrap().label, 7);
        assert_eq!(d.get(1).unwrap().label, 2);
    }

    #[test]
    fn truncated_files_fail() {
        let img_bytes = encode_idx_images(2, 2, &[vec![1, 2, 3, 4]]);
        for cut in [0, 3, 10, img_bytes.len() - 1] {
            assert!(parse_idx_images(&img_bytes[..cut]).is_err(), "cut at {cut}");
        }
        let lbl = encode_idx_labels(&[1, 2, 3]);
        assert!(parse_idx_labels(&lbl[..lbl.len() - 1]).is_err());
    }

    #[test]
    fn wrong_magic_fails() {
        let lbl = encode_idx_labels(&[1]);
        assert!(parse_idx_images(&lbl).is_err());
        let img = encode_idx_images(1, 1, &[vec![0]]);
        assert!(parse_idx_labels(&img).is_err());
    }

    #[test]
    fn count_mismatch_fails() {
        let images = parse_idx_images(&encode_idx_images(1, 1, &[vec![0], vec![1]])).unwrap();
        assert!(idx_dataset(images, &[0]).is_err());
    }

    #[test]
    fn huge_declared_count_does_not_allocate() {
        let mut bytes = IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [u32::MAX, u32::MAX, u32::MAX] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert!(parse_idx_images(&bytes).is_err());
    }
}
