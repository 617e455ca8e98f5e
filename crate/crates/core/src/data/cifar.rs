//! CIFAR-10 binary batches: fixed 3073-byte records, one label byte then
//! the 32×32 image as three 1024-byte planes (R, G, B).

use std::path::Path;

use super::{normalize_to_unit, Dataset, LabeledImage, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR10_RECORD_LEN: usize = 1 + 3 * 32 * 32;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    /// 3072 bytes, channel-major.
    pub pixels: Vec<u8>,
}

pub fn parse_cifar10_records(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_LEN) {
        return Err(Error::Length {
            what: "cifar-10 batch",
            expected: bytes.len().div_ceil(CIFAR10_RECORD_LEN) * CIFAR10_RECORD_LEN,
            actual: bytes.len(),
        });
    }
    bytes
        .chunks_exact(CIFAR10_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] > 9 {
                return Err(Error::Format(format!("record {i}: label byte {} > 9", rec[0])));
            }
            Ok(CifarRecord {
                label: rec[0],
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

pub fn write_cifar10_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR10_RECORD_LEN);
    for rec in records {
        out.push(rec.label);
        out.extend_from_slice(&rec.pixels);
    }
    out
}

/// Parses one batch file into `[3×32×32]` images in `[0,1]`.
pub fn parse_cifar10_batch(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    parse_cifar10_records(bytes)?
        .into_iter()
        .map(|rec| {
            Ok(LabeledImage {
                pixels: Tensor::new([3, 32, 32], normalize_to_unit(&rec.pixels))?,
                label: rec.label as usize,
            })
        })
        .collect()
}

/// Loads `data_batch_{1..5}.bin` or `test_batch.bin` from `dir`, or from a
/// `cifar-10-batches-bin` directory inside it.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let mut images = Vec::new();
    for name in files {
        let path = dir.join(&name);
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        images.extend(parse_cifar10_batch(&bytes)?);
    }
    if images.is_empty() {
        return Err(Error::Format(format!(
            "cifar-10 {split} split in {} is empty",
            dir.display()
        )));
    }
    let names = CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect();
    Dataset::new("cifar10", split, images, names)
}
