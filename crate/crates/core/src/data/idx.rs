//! Big-endian IDX image/label ingestion (the MNIST container format).

use std::fs;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

use super::LabeledDataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parse an IDX image/label pair into a labeled dataset.
///
/// Pixel bytes are scaled to `[0, 1]` and flattened row-major. With
/// `downsample_to_16` set and 28x28 inputs, images are zero-padded to 32x32
/// and reduced by 2x2 average pooling to 16x16.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    downsample_to_16: bool,
) -> Result<LabeledDataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;

    let img_magic = read_be_u32(&images, 0, images_path)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: img_magic,
        });
    }
    let n = read_be_u32(&images, 4, images_path)? as usize;
    let rows = read_be_u32(&images, 8, images_path)? as usize;
    let cols = read_be_u32(&images, 12, images_path)? as usize;
    let pixel_bytes = n
        .checked_mul(rows * cols)
        .ok_or_else(|| Error::Data("image dimensions overflow".into()))?;
    if images.len() < 16 + pixel_bytes {
        return Err(Error::TruncatedFile {
            path: images_path.to_path_buf(),
            needed: 16 + pixel_bytes,
            available: images.len(),
        });
    }

    let lbl_magic = read_be_u32(&labels, 0, labels_path)?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: lbl_magic,
        });
    }
    let n_labels = read_be_u32(&labels, 4, labels_path)? as usize;
    if labels.len() < 8 + n_labels {
        return Err(Error::TruncatedFile {
            path: labels_path.to_path_buf(),
            needed: 8 + n_labels,
            available: labels.len(),
        });
    }
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let downsample = downsample_to_16 && rows == 28 && cols == 28;
    let out_dim = if downsample { 256 } else { rows * cols };
    let mut features = Vec::with_capacity(n * out_dim);
    for i in 0..n {
        let raw = &images[16 + i * rows * cols..16 + (i + 1) * rows * cols];
        if downsample {
            downsample_28_to_16(raw, &mut features);
        } else {
            features.extend(raw.iter().map(|&b| b as f64 / 255.0));
        }
    }

    let label_vec: Vec<usize> = labels[8..8 + n].iter().map(|&b| b as usize).collect();
    let k = label_vec.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::new(Tensor::matrix(n, out_dim, features)?, label_vec, k)
}

fn read_be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32> {
    if bytes.len() < off + 4 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            needed: off + 4,
            available: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(
        bytes[off..off + 4].try_into().expect("4 bytes"),
    ))
}

/// Zero-pad a 28x28 image to 32x32 (2 pixels each side), then 2x2 average
/// pool to 16x16 and scale to `[0, 1]`.
fn downsample_28_to_16(raw: &[u8], out: &mut Vec<f64>) {
    let at = |r: isize, c: isize| -> f64 {
        if (0..28).contains(&r) && (0..28).contains(&c) {
            raw[(r * 28 + c) as usize] as f64 / 255.0
        } else {
            0.0
        }
    };
    for pr in 0..16 {
        for pc in 0..16 {
            let r = 2 * pr as isize - 2;
            let c = 2 * pc as isize - 2;
            let sum = at(r, c) + at(r, c + 1) + at(r + 1, c) + at(r + 1, c + 1);
            out.push(sum / 4.0);
        }
    }
}

/// Serialize a dataset back to IDX bytes, quantizing features to `u8` over
/// `[0, 1]`. Inverse of [`load_idx`] on byte-valued data; used by fixtures
/// and round-trip tests.
pub fn to_idx_bytes(ds: &LabeledDataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != ds.dim() {
        return Err(Error::Data(format!(
            "{rows}x{cols} does not match feature dim {}",
            ds.dim()
        )));
    }
    let n = ds.len();
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in ds.features.data() {
        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}
