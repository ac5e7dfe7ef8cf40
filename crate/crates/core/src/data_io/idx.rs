//! IDX files: big-endian magic, counts and unsigned bytes.

use std::path::Path;

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(Error::Length {
            expected: (offset + 4) as u64,
            found: bytes.len() as u64,
        }),
    }
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("magic {magic}, expected {expected}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Length {
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 4,
            message: format!("empty image extent {n}x{rows}x{cols}"),
        });
    }
    check_len(bytes, 16 + n * rows * cols)?;
    let px = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((n, rows, cols, px))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    check_len(bytes, 8 + n)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_labeled(images: &[u8], labels: &[u8], split: Split) -> Result<LabeledDataset> {
    let (n, rows, cols, px) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(1, |&m| m + 1).max(2);
    let images = Tensor::new([n, rows * cols], px)?;
    LabeledDataset::new(images, labels, rows, cols, classes, split)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = read(images_path.as_ref())?;
    let labels = read(labels_path.as_ref())?;
    parse_labeled(&images, &labels, Split::Other)
}

/// Loads `train-*` or `t10k-*` files from an MNIST-layout directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let prefix = match split {
        Split::Train => "train",
        _ => "t10k",
    };
    let dir = dir.as_ref();
    let images = read(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    parse_labeled(&images, &labels, split)
}

/// Serializes images (rounded to bytes) and labels back to IDX.
pub fn encode(data: &LabeledDataset) -> (Vec<u8>, Vec<u8>) {
    let n = data.len() as u32;
    let mut img = Vec::with_capacity(16 + data.images.len());
    for v in [IMAGE_MAGIC, n, data.height as u32, data.width as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(data.images.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(data.labels.iter().map(|&l| l as u8));
    (img, lab)
}
