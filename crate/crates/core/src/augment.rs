//! Training-set augmentation: random rotation, block effect and random
//! translation, and the 4x expansion that pairs every sample with one variant
//! of each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{AugmentTag, LabeledSample};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::vision::{resize, Image};

pub const MAX_ROTATION_DEGREES: f64 = 45.0;
pub const MAX_SHIFT: i32 = 5;
const FILL: f64 = 1.0;

/// Transform identifiers mixed into the per-sample seed. The block effect is
/// deterministic and needs none.
const ROTATE_ID: u64 = 1;
const TRANSLATE_ID: u64 = 3;

fn sample_or_fill(img: &Image, y: isize, x: isize) -> f64 {
    if y < 0 || x < 0 || y >= img.height() as isize || x >= img.width() as isize {
        FILL
    } else {
        f64::from(img.get(y as usize, x as usize))
    }
}

/// Rotates counter-clockwise by `degrees` about the image centre with bilinear
/// resampling. Pixels mapped from outside the frame are white.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = (1.0 - fx) * sample_or_fill(img, y0, x0) + fx * sample_or_fill(img, y0, x0 + 1);
            let bot = (1.0 - fx) * sample_or_fill(img, y0 + 1, x0) + fx * sample_or_fill(img, y0 + 1, x0 + 1);
            pixels.push(((1.0 - fy) * top + fy * bot).clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(h, w, pixels).expect("clamped pixels")
}

pub fn rotation_angle(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).gen_range(-MAX_ROTATION_DEGREES..MAX_ROTATION_DEGREES)
}

/// Rotation by an angle drawn uniformly from (-45°, +45°).
pub fn rotate_random(img: &Image, seed: u64) -> Image {
    rotate(img, rotation_angle(seed))
}

/// Down-then-up resampling that discards fine detail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockEffect {
    pub height: usize,
    pub width: usize,
}

impl Default for BlockEffect {
    fn default() -> Self {
        Self {
            height: 14,
            width: 14,
        }
    }
}

impl BlockEffect {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        let small = resize(img, self.height, self.width)?;
        resize(&small, img.height(), img.width())
    }
}

/// Bilinear 28x28 -> 14x14 -> 28x28.
pub fn block_effect(img: &Image) -> Result<Image> {
    if (img.height(), img.width()) != (28, 28) {
        return Err(Error::InvalidArgument(format!(
            "block effect expects a 28x28 image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    BlockEffect::default().apply(img)
}

/// Integer shift by `(dx, dy)` pixels; vacated pixels are white.
pub fn translate(img: &Image, dx: i32, dy: i32) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            pixels.push(sample_or_fill(img, y - dy as isize, x - dx as isize) as f32);
        }
    }
    Image::new(h, w, pixels).expect("pixels copied from a valid image")
}

pub fn translation_offsets(seed: u64) -> (i32, i32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dx = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
    let dy = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
    (dx, dy)
}

/// Translation by offsets drawn uniformly from `-5..=5` on each axis.
pub fn translate_random(img: &Image, seed: u64) -> Image {
    let (dx, dy) = translation_offsets(seed);
    translate(img, dx, dy)
}

/// A training split expanded with augmented copies.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSet {
    pub samples: Vec<LabeledSample>,
    pub master_seed: u64,
}

/// Emits, for each sample, the original followed by one rotated, one blocked
/// and one translated copy. Seeds are derived from `master_seed`, the
/// sample's stable id and the transform, so the result does not depend on
/// the order of `train`.
pub fn expand_training_set(
    train: &[LabeledSample],
    master_seed: u64,
    block: BlockEffect,
) -> Result<AugmentedSet> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let groups: Vec<[LabeledSample; 4]> = train
        .par_iter()
        .map(|s| -> Result<[LabeledSample; 4]> {
            let variant = |image: Image, tag: AugmentTag| LabeledSample {
                image,
                augmentation: tag,
                ..s.clone()
            };
            let rotated = rotate_random(&s.image, derive_seed(master_seed, &[s.id, ROTATE_ID]));
            let blocked = block.apply(&s.image)?;
            let translated = translate_random(&s.image, derive_seed(master_seed, &[s.id, TRANSLATE_ID]));
            Ok([
                s.clone(),
                variant(rotated, AugmentTag::Rotated),
                variant(blocked, AugmentTag::Blocked),
                variant(translated, AugmentTag::Translated),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(AugmentedSet {
        samples: groups.into_iter().flatten().collect(),
        master_seed,
    })
}
