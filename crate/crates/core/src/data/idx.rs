//! MNIST IDX files: big-endian `u32` header fields followed by unsigned
//! bytes. Gzip input is detected by its magic and inflated transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{digit_class_names, normalize_to_unit, Dataset, LabeledImage, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw image stack from an IDX3 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        match self.rows * self.cols {
            0 => 0,
            n => self.pixels.len() / n,
        }
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    let field = bytes.get(offset..offset + 4).ok_or(Error::Length {
        what,
        expected: offset + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(field.try_into().expect("4-byte slice")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<()> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "{what}: bad magic 0x{magic:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    const WHAT: &str = "idx images";
    check_magic(bytes, IDX_IMAGES_MAGIC, WHAT)?;
    let count = read_u32(bytes, 4, WHAT)? as usize;
    let rows = read_u32(bytes, 8, WHAT)? as usize;
    let cols = read_u32(bytes, 12, WHAT)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Length {
            what: WHAT,
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "idx labels";
    check_magic(bytes, IDX_LABELS_MAGIC, WHAT)?;
    let count = read_u32(bytes, 4, WHAT)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Length {
            what: WHAT,
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count() as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn decompress_if_gzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if !bytes.starts_with(&GZIP_MAGIC) {
        return Ok(bytes);
    }
    let mut out = Vec::new();
    GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
    Ok(out)
}

/// Pairs an image stack with its labels (image `i` ↔ label `i`).
pub fn mnist_from_idx(images: &IdxImages, labels: &[u8], split: Split) -> Result<Dataset> {
    if images.count() != labels.len() {
        return Err(Error::Format(format!(
            "idx image count {} does not match label count {}",
            images.count(),
            labels.len()
        )));
    }
    let shape = [1, images.rows, images.cols];
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            if label > 9 {
                return Err(Error::Format(format!("label {label} at index {i} is not a digit")));
            }
            Ok(LabeledImage {
                pixels: Tensor::new(shape, normalize_to_unit(images.image(i)))?,
                label: label as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("mnist", split, samples, digit_class_names())
}

fn read_maybe_gz(dir: &Path, stem: &str) -> Result<Vec<u8>> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    let path = if plain.exists() { plain } else { gz };
    let bytes = std::fs::read(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decompress_if_gzip(bytes)
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = parse_idx_images(&read_maybe_gz(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = parse_idx_labels(&read_maybe_gz(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    let ds = mnist_from_idx(&images, &labels, split)?;
    if ds.is_empty() {
        return Err(Error::Format(format!(
            "mnist {split} split in {} is empty",
            dir.display()
        )));
    }
    Ok(ds)
}
