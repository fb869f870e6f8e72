//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<split>-images.idx   byte IDX stack (pixels quantized to 8 bits)
//! <dir>/<split>-labels.idx   byte IDX vector
//! <dir>/<split>-meta.bin     u32 count, then per sample: id u64, augmentation u8, corpus index u16 (LE)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::idx::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels};
use super::{AugmentTag, LabeledSample, Manifest, Split, UnifiedDataset};
use crate::error::{Error, Result};
use crate::vision::Image;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const META_RECORD: usize = 11;

fn file_names(split: Split) -> [String; 3] {
    let s = split.name();
    [
        format!("{s}-images.idx"),
        format!("{s}-labels.idx"),
        format!("{s}-meta.bin"),
    ]
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "dataset",
        detail: detail.into(),
    }
}

fn encode_split(samples: &[LabeledSample], manifest: &Manifest) -> Result<[Vec<u8>; 3]> {
    let (rows, cols) = samples
        .first()
        .map(|s| (s.image.height(), s.image.width()))
        .unwrap_or((0, 0));
    let mut pixels = Vec::with_capacity(samples.len());
    let mut meta = Vec::with_capacity(4 + samples.len() * META_RECORD);
    let count = u32::try_from(samples.len()).map_err(|_| malformed("too many samples"))?;
    meta.extend_from_slice(&count.to_le_bytes());
    for s in samples {
        if (s.image.height(), s.image.width()) != (rows, cols) {
            return Err(malformed(format!(
                "sample {} is {}x{}, expected {rows}x{cols}",
                s.id,
                s.image.height(),
                s.image.width()
            )));
        }
        pixels.push(s.image.to_u8());
        let source = manifest
            .corpora
            .iter()
            .position(|c| c.name == s.source)
            .ok_or_else(|| malformed(format!("sample {} has unknown source `{}`", s.id, s.source)))?;
        let source = u16::try_from(source).map_err(|_| malformed("too many corpora"))?;
        meta.extend_from_slice(&s.id.to_le_bytes());
        meta.push(s.augmentation.code());
        meta.extend_from_slice(&source.to_le_bytes());
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let pixels: Vec<&[u8]> = pixels.iter().map(Vec::as_slice).collect();
    Ok([
        encode_idx_images(rows, cols, &pixels)?,
        encode_idx_labels(&labels)?,
        meta,
    ])
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{suffix}-{}", std::process::id()));
    dir.with_file_name(name)
}

/// Writes into a scratch directory next to `dir` and renames it into place,
/// so readers never observe a half-written dataset.
pub fn save_dataset(ds: &UnifiedDataset, dir: &Path) -> Result<()> {
    let mut manifest = ds.manifest.clone();
    manifest.version = DATASET_FORMAT_VERSION;
    manifest.split_counts = ds.split_counts();
    manifest.checksums.clear();

    let tmp = sibling(dir, "tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(format!("clearing {}", tmp.display()), e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    let result = (|| {
        for split in Split::ALL {
            let payloads = encode_split(ds.split(split), &manifest)?;
            for (name, bytes) in file_names(split).iter().zip(&payloads) {
                write_file(&tmp.join(name), bytes)?;
                manifest.checksums.insert(name.clone(), sha256_hex(bytes));
            }
        }
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Json {
            context: "manifest".into(),
            source: e,
        })?;
        write_file(&tmp.join(MANIFEST), &json)?;

        let old = sibling(dir, "old");
        if dir.exists() {
            fs::rename(dir, &old).map_err(|e| Error::io(format!("moving aside {}", dir.display()), e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(format!("publishing {}", dir.display()), e))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(format!("removing {}", old.display()), e))?;
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let want = manifest
        .checksums
        .get(name)
        .ok_or_else(|| malformed(format!("manifest has no checksum for {name}")))?;
    if &sha256_hex(&bytes) != want {
        return Err(Error::Checksum { file: name.into() });
    }
    Ok(bytes)
}

fn decode_split(
    dir: &Path,
    split: Split,
    manifest: &Manifest,
    expected: usize,
) -> Result<Vec<LabeledSample>> {
    let [img_name, lbl_name, meta_name] = file_names(split);
    let img_path = dir.join(&img_name);
    let stack = parse_idx_images(&read_checked(dir, &img_name, manifest)?, &img_path)?;
    let (rows, cols) = (stack.rows, stack.cols);
    let labels = parse_idx_labels(&read_checked(dir, &lbl_name, manifest)?, &dir.join(&lbl_name))?;
    let meta = read_checked(dir, &meta_name, manifest)?;

    let images = stack.count();
    if images != labels.len() {
        return Err(Error::CountMismatch {
            images,
            labels: labels.len(),
        });
    }
    if labels.len() != expected {
        return Err(malformed(format!(
            "{split} holds {} samples, manifest says {expected}",
            labels.len()
        )));
    }
    let meta_count = meta
        .get(..4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| malformed(format!("{meta_name} is truncated")))?;
    if meta_count != expected || meta.len() != 4 + expected * META_RECORD {
        return Err(malformed(format!(
            "{meta_name} does not describe {expected} samples"
        )));
    }

    meta[4..]
        .chunks_exact(META_RECORD)
        .zip(&labels)
        .enumerate()
        .map(|(i, (rec, &label))| {
            let id = u64::from_le_bytes(rec[..8].try_into().expect("8-byte slice"));
            let augmentation = AugmentTag::from_code(rec[8])
                .ok_or_else(|| malformed(format!("augmentation code {}", rec[8])))?;
            let source = u16::from_le_bytes([rec[9], rec[10]]) as usize;
            let source = manifest
                .corpora
                .get(source)
                .ok_or_else(|| malformed(format!("corpus index {source}")))?
                .name
                .clone();
            let image = Image::from_u8(rows, cols, stack.image(i))?;
            let mut s = LabeledSample::new(id, image, label, source)?;
            s.augmentation = augmentation;
            Ok(s)
        })
        .collect()
}

/// Loads and verifies a dataset written by [`save_dataset`]. Pixels come back
/// at 8-bit resolution.
pub fn load_dataset(dir: &Path) -> Result<UnifiedDataset> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    if manifest.version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            what: "dataset manifest",
            found: manifest.version,
            supported: DATASET_FORMAT_VERSION,
        });
    }
    let c = manifest.split_counts;
    Ok(UnifiedDataset {
        train: decode_split(dir, Split::Train, &manifest, c.train)?,
        validation: decode_split(dir, Split::Validation, &manifest, c.validation)?,
        test: decode_split(dir, Split::Test, &manifest, c.test)?,
        manifest,
    })
}
