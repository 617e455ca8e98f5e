//! Labeled image datasets: MNIST IDX and CIFAR-10 binary parsers, plus
//! seeded synthetic fixtures.

mod cifar;
mod idx;
mod synthetic;

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cifar::{
    load_cifar10, parse_cifar10_batch, parse_cifar10_records, write_cifar10_records, CifarRecord, CIFAR10_CLASSES,
    CIFAR10_RECORD_LEN,
};
pub use idx::{
    decompress_if_gzip, load_mnist, mnist_from_idx, parse_idx_images, parse_idx_labels, write_idx_images,
    write_idx_labels, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synthetic::{make_synthetic_dataset, SyntheticSpec};

/// An image with pixels in `[0,1]`, shaped `[C×H×W]`, and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub images: Vec<LabeledImage>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Checks that every image shares one shape, pixels are in `[0,1]` and
    /// labels index `class_names`.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        images: Vec<LabeledImage>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if let Some(first) = images.first() {
            let shape = first.pixels.shape();
            for (i, img) in images.iter().enumerate() {
                if img.pixels.shape() != shape {
                    return Err(Error::Dimension {
                        op: "dataset",
                        lhs: shape.to_vec(),
                        rhs: img.pixels.shape().to_vec(),
                    });
                }
                if img.label >= class_names.len() {
                    return Err(Error::Format(format!(
                        "image {i}: label {} outside {} classes",
                        img.label,
                        class_names.len()
                    )));
                }
                if img.pixels.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Format(format!("image {i}: pixel outside [0,1]")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            split,
            images,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|img| img.pixels.shape())
    }

    /// Samples at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let images = indices
            .iter()
            .map(|&i| {
                self.images
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("index {i} out of range 0..{}", self.images.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: self.name.clone(),
            split: self.split,
            images,
            class_names: self.class_names.clone(),
        })
    }

    /// First `n` samples (all when `n >= len`).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            name: self.name.clone(),
            split: self.split,
            images: self.images.iter().take(n).cloned().collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Maps raw bytes to `[0,1]` as `byte / 255`.
pub fn normalize_to_unit(raw: &[u8]) -> Vec<f32> {
    raw.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Inverse of [`normalize_to_unit`] for values in `[0,1]`: `round(v·255)`.
pub fn quantize_to_byte(value: f32) -> u8 {
    (value.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn digit_class_names() -> Vec<String> {
    (0..10).map(|d| d.to_string()).collect()
}
