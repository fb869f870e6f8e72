//! IDX container reading and writing (the MNIST distribution format).
//!
//! Headers are big-endian: a magic word `0x000008TT` where `TT` is the number
//! of dimensions (3 for image stacks, 1 for label vectors), followed by one
//! `u32` extent per dimension and the raw unsigned-byte payload. Gzipped files
//! are detected by their magic bytes and decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, one image after another.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len().checked_div(self.rows * self.cols).unwrap_or(0)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("decompressing {}", path.display()), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_owned(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_owned(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let end = header + len;
    if bytes.len() < end {
        return Err(Error::Truncated {
            path: path.to_owned(),
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..end])
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels = payload(bytes, 16, n * rows * cols, path)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, n, path)?.to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_maybe_gz(path)?, path)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_maybe_gz(path)?, path)
}

pub fn encode_idx_images(rows: usize, cols: usize, images: &[&[u8]]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        let v =
            u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("IDX extent {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "image of {} bytes in a {rows}x{cols} IDX stack",
                img.len()
            )));
        }
        out.extend_from_slice(img);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let n =
        u32::try_from(labels.len()).map_err(|_| Error::InvalidArgument("too many labels for IDX".into()))?;
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_big_endian() {
        let bytes = encode_idx_images(2, 3, &[&[1, 2, 3, 4, 5, 6]]).unwrap();
        assert_eq!(&bytes[..16], &[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3]);
        let back = parse_idx_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.count(), 1);
        assert_eq!(back.image(0), &[1, 2, 3, 4, 5, 6]);

        let labels = encode_idx_labels(&[7, 1]).unwrap();
        assert_eq!(&labels[..8], &[0, 0, 8, 1, 0, 0, 0, 2]);
    }

    #[test]
    fn truncated_header_and_payload() {
        let p = Path::new("mem");
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8], p),
            Err(Error::Truncated { .. })
        ));
        let mut bytes = encode_idx_labels(&[1, 2, 3]).unwrap();
        bytes.pop();
        assert!(matches!(
            parse_idx_labels(&bytes, p),
            Err(Error::Truncated {
                expected: 11,
                found: 10,
                ..
            })
        ));
    }

    #[test]
    fn swapped_files_fail_on_magic() {
        let labels = encode_idx_labels(&[1]).unwrap();
        assert!(matches!(
            parse_idx_images(&labels, Path::new("mem")),
            Err(Error::BadMagic { found: 0x801, .. })
        ));
    }
}
