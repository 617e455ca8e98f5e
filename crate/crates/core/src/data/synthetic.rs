use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LabeledImage, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters for [`make_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub count: usize,
    /// `[C, H, W]`; `W` must be at least `classes`.
    pub shape: [usize; 3],
    /// Gap between the brightest background pixel and the darkest pixel of
    /// the class stripe. Values above 1 behave like 1.
    pub separation: f32,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, count: usize, separation: f32, seed: u64) -> Self {
        Self {
            classes,
            count,
            shape: [1, 28, 28],
            separation,
            seed,
        }
    }
}

/// Seeded, linearly separable images.
///
/// Image `i` has label `i % classes`. Column stripe `c` (of `classes` equal
/// stripes) is bright for class `c`: stripe pixels are drawn from
/// `[(1+s)/2, 1]`, everything else from `[0, (1-s)/2]`, so the mean of the
/// labeled stripe always exceeds the mean of any other stripe by at least `s`.
pub fn make_synthetic_dataset(spec: &SyntheticSpec, split: Split) -> Result<Dataset> {
    if spec.separation.is_nan() || spec.separation <= 0.0 {
        return Err(Error::Argument(format!(
            "separation must be positive, got {}",
            spec.separation
        )));
    }
    let [c, h, w] = spec.shape;
    if spec.classes == 0 || w < spec.classes {
        return Err(Error::Argument(format!(
            "{} classes need at least that many image columns, got width {w}",
            spec.classes
        )));
    }
    let s = spec.separation.min(1.0);
    let low_max = 0.5 * (1.0 - s);
    let high_min = 0.5 * (1.0 + s);
    let stripe = w / spec.classes;
    let split_salt = match split {
        Split::Train => 0,
        Split::Test => 0x9e37_79b9_7f4a_7c15,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ split_salt);
    let images = (0..spec.count)
        .map(|i| {
            let label = i % spec.classes;
            let pixels = Tensor::from_fn([c, h, w], |idx| {
                let col = idx % w;
                let u: f32 = rng.random();
                if col / stripe == label && col < stripe * spec.classes {
                    high_min + u * (1.0 - high_min)
                } else {
                    u * low_max
                }
            });
            LabeledImage { pixels, label }
        })
        .collect();
    let names = (0..spec.classes).map(|k| format!("class{k}")).collect();
    Dataset::new("synthetic", split, images, names)
}
