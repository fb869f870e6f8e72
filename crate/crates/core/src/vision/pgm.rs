//! Netpbm graymap (PGM) encoding and decoding.

use super::Image;
use crate::error::{Error, Result};

/// Encodes as binary `P5` with an 8-bit maxval.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_u8());
    out
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "PGM",
        detail: detail.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| malformed("non-ASCII header"))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse().map_err(|_| malformed(format!("bad number `{t}`")))
    }
}

/// Decodes `P5` (binary, 8- or 16-bit) and `P2` (ASCII) graymaps.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut hdr = Header { bytes, pos: 0 };
    let magic = hdr.token()?.to_owned();
    let width = hdr.number()?;
    let height = hdr.number()?;
    let maxval = hdr.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let scale = maxval as f32;
    let values: Vec<f32> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates header and raster
            let body = &bytes[(hdr.pos + 1).min(bytes.len())..];
            let wide = maxval > 255;
            let need = if wide { 2 * n } else { n };
            if body.len() < need {
                return Err(malformed(format!("raster has {} bytes, need {need}", body.len())));
            }
            if wide {
                body[..need]
                    .chunks_exact(2)
                    .map(|c| f32::from(u16::from_be_bytes([c[0], c[1]])) / scale)
                    .collect()
            } else {
                body[..n].iter().map(|&b| f32::from(b) / scale).collect()
            }
        }
        "P2" => {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(hdr.number()? as f32 / scale);
            }
            v
        }
        other => return Err(malformed(format!("unsupported magic `{other}`"))),
    };
    if values.iter().any(|&v| v > 1.0) {
        return Err(malformed("sample exceeds maxval"));
    }
    Image::new(height, width, values)
}
