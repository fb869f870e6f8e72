//! Corpus ingestion, unification into train/validation/test splits,
//! preprocessing and persistence.

pub mod idx;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vision::{self, decode_pgm, ensure_white_background, thicken_strokes, Image};

pub use store::{load_dataset, save_dataset, DATASET_FORMAT_VERSION};

/// Side length every preprocessed sample is resized to.
pub const INPUT_SIZE: usize = 28;
pub const NUM_CLASSES: usize = 10;
/// Bumped whenever `preprocess` changes its output.
pub const PREPROCESSING_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentTag {
    #[default]
    Original,
    Rotated,
    Blocked,
    Translated,
}

impl AugmentTag {
    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => AugmentTag::Original,
            1 => AugmentTag::Rotated,
            2 => AugmentTag::Blocked,
            3 => AugmentTag::Translated,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    /// Stable identity, unique within a unified dataset.
    pub id: u64,
    pub image: Image,
    pub label: u8,
    /// Name of the corpus the sample came from.
    pub source: String,
    pub augmentation: AugmentTag,
}

impl LabeledSample {
    pub fn new(id: u64, image: Image, label: u8, source: impl Into<String>) -> Result<Self> {
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::InvalidArgument(format!("label {label} outside 0..=9")));
        }
        Ok(Self {
            id,
            image,
            label,
            source: source.into(),
            augmentation: AugmentTag::Original,
        })
    }
}

/// One ingested source corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub samples: Vec<LabeledSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, validation or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusCount {
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Provenance record persisted next to the pixel payloads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub corpora: Vec<CorpusCount>,
    pub split_counts: SplitCounts,
    /// 0 for an unprocessed merge.
    pub preprocessing_version: u32,
    #[serde(default)]
    pub augmented: bool,
    #[serde(default)]
    pub augment_seed: Option<u64>,
    /// SHA-256 of each payload file, keyed by file name. Filled in on save.
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedDataset {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub manifest: Manifest,
}

impl UnifiedDataset {
    pub fn split(&self, split: Split) -> &[LabeledSample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn split_counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
        }
    }
}

/// Reads an IDX image/label pair. Pixels are scaled from bytes to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledSample>> {
    let images = idx::read_idx_images(images_path)?;
    let labels = idx::read_idx_labels(labels_path)?;
    if images.count() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count(),
            labels: labels.len(),
        });
    }
    let source = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let image = Image::from_u8(images.rows, images.cols, images.image(i))?;
            LabeledSample::new(i as u64, image, label, source.clone())
        })
        .collect()
}

/// Decodes one grayscale PNG or PGM file.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let decode_err = |reason: String| Error::ImageDecode {
        path: path.to_owned(),
        reason,
    };
    match ext.as_str() {
        "pgm" => decode_pgm(&bytes).map_err(|e| decode_err(e.to_string())),
        "png" => {
            let luma = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| decode_err(e.to_string()))?
                .to_luma8();
            Image::from_u8(luma.height() as usize, luma.width() as usize, luma.as_raw())
        }
        other => Err(decode_err(format!("unsupported extension `{other}`"))),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Loads `root/<digit>/*.{png,pgm}`; the directory name is the label.
///
/// Plain files directly under `root` are ignored; hidden entries are skipped.
pub fn load_image_dir(root: &Path) -> Result<Vec<LabeledSample>> {
    let source = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut samples = Vec::new();
    for class_dir in sorted_entries(root)? {
        let name = class_dir.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !class_dir.path().is_dir() {
            continue;
        }
        let label = match name.parse::<u8>() {
            Ok(d) if d <= 9 && name.len() == 1 => d,
            _ => {
                return Err(Error::ClassDirName {
                    root: root.to_owned(),
                    name,
                })
            }
        };
        for file in sorted_entries(&class_dir.path())? {
            if file.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            let image = load_image(&file.path())?;
            samples.push(LabeledSample::new(
                samples.len() as u64,
                image,
                label,
                source.clone(),
            )?);
        }
    }
    Ok(samples)
}

/// Split sizes for a pool of `n`: floor(80%) train, floor(15%) validation,
/// remainder test.
pub fn split_sizes(n: usize) -> SplitCounts {
    let train = n * 80 / 100;
    let validation = n * 15 / 100;
    SplitCounts {
        train,
        validation,
        test: n - train - validation,
    }
}

/// Concatenates the corpora, shuffles with a seeded permutation and splits
/// 80/15/5. Sample ids are reassigned to their position in the concatenation
/// and `source` to the corpus name.
pub fn unify(corpora: Vec<Corpus>, seed: u64) -> Result<UnifiedDataset> {
    let counts: Vec<CorpusCount> = corpora
        .iter()
        .map(|c| CorpusCount {
            name: c.name.clone(),
            count: c.samples.len(),
        })
        .collect();
    let mut pool: Vec<LabeledSample> = corpora
        .into_iter()
        .flat_map(|c| {
            let name = c.name;
            c.samples.into_iter().map(move |mut s| {
                s.source = name.clone();
                s
            })
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::Empty("sample pool"));
    }
    for (i, s) in pool.iter_mut().enumerate() {
        s.id = i as u64;
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes = split_sizes(pool.len());
    let test = pool.split_off(sizes.train + sizes.validation);
    let validation = pool.split_off(sizes.train);
    Ok(UnifiedDataset {
        train: pool,
        validation,
        test,
        manifest: Manifest {
            version: DATASET_FORMAT_VERSION,
            seed,
            corpora: counts,
            split_counts: sizes,
            preprocessing_version: 0,
            augmented: false,
            augment_seed: None,
            checksums: BTreeMap::new(),
        },
    })
}

/// Resize to 28x28, force a white background, thicken strokes.
pub fn preprocess_image(img: &Image) -> Result<Image> {
    let resized = vision::resize(img, INPUT_SIZE, INPUT_SIZE)?;
    let (white, _) = ensure_white_background(&resized);
    Ok(thicken_strokes(&white))
}

fn preprocess_split(samples: Vec<LabeledSample>) -> Result<Vec<LabeledSample>> {
    samples
        .into_par_iter()
        .map(|mut s| {
            s.image = preprocess_image(&s.image)?;
            Ok(s)
        })
        .collect()
}

/// Applies `preprocess_image` to every sample; split membership is unchanged.
pub fn preprocess(mut ds: UnifiedDataset) -> Result<UnifiedDataset> {
    ds.train = preprocess_split(ds.train)?;
    ds.validation = preprocess_split(ds.validation)?;
    ds.test = preprocess_split(ds.test)?;
    ds.manifest.preprocessing_version = PREPROCESSING_VERSION;
    Ok(ds)
}
