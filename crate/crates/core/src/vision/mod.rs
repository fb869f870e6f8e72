//! Grayscale image container and the classical image operations used by the
//! data pipeline: resizing, background normalisation, stroke thickening and
//! edge extraction.

mod edges;
mod pgm;

use crate::error::{Error, Result};

pub use edges::{canny, extract_edges, log_edges, sobel_edges, EdgeMethod, EdgeParams};
pub use pgm::{decode_pgm, encode_pgm};

/// Row-major grayscale image with values in `[0, 1]`.
///
/// White (`1.0`) is the background convention after preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Panics on zero extents or a value outside `[0, 1]`.
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("valid fill")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    /// Quantises to 8 bits with round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with replicate padding.
    pub fn get_clamped(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn inverted(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| 1.0 - v).collect(),
        }
    }

    /// Mean over the one-pixel frame around the image.
    pub fn border_mean(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                    sum += f64::from(self.get(y, x));
                    count += 1;
                }
            }
        }
        sum / count as f64
    }
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let rows = axis(out_h, img.height);
    let cols = axis(out_w, img.width);
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = (1.0 - fx) * f64::from(img.get(y0, x0)) + fx * f64::from(img.get(y0, x1));
            let bot = (1.0 - fx) * f64::from(img.get(y1, x0)) + fx * f64::from(img.get(y1, x1));
            pixels.push(((1.0 - fy) * top + fy * bot).clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(out_h, out_w, pixels)
}

/// Inverts dark-background images so ink is dark on white.
///
/// Returns the normalised image and whether it was inverted. A border mean of
/// exactly 0.5 is left as is.
pub fn ensure_white_background(img: &Image) -> (Image, bool) {
    if img.border_mean() < 0.5 {
        (img.inverted(), true)
    } else {
        (img.clone(), false)
    }
}

/// 3x3 minimum filter with replicate borders. On a white-background image
/// this grows the dark strokes by one pixel in every direction.
pub fn thicken_strokes(img: &Image) -> Image {
    let (h, w) = (img.height as isize, img.width as isize);
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::INFINITY;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    m = m.min(img.get_clamped(y + dy, x + dx));
                }
            }
            pixels.push(m);
        }
    }
    Image {
        height: img.height,
        width: img.width,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Image::new(1, 2, vec![0.0]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn resize_constant_and_identity() {
        let c = Image::filled(7, 5, 0.3);
        let r = resize(&c, 28, 28).unwrap();
        assert!(r.pixels().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let g = Image::from_fn(4, 6, |y, x| ((y * 6 + x) as f32) / 24.0).unwrap();
        assert_eq!(resize(&g, 4, 6).unwrap(), g);
        assert!(resize(&g, 0, 3).is_err());
    }

    #[test]
    fn resize_two_by_two_to_two_by_four() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize(&img, 2, 4).unwrap();
        // source x = (d + 0.5) * 0.5 - 0.5 clamped to [0, 1]
        let want = [0.0, 0.25, 0.75, 1.0];
        for y in 0..2 {
            for (x, w) in want.iter().enumerate() {
                assert!((r.get(y, x) - w).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn white_background_rules() {
        let mnist_like = Image::from_fn(6, 6, |y, x| {
            if (2..4).contains(&y) && (2..4).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let (out, inverted) = ensure_white_background(&mnist_like);
        assert!(inverted);
        assert!(out.border_mean() > 0.5);

        let white = mnist_like.inverted();
        let (out, inverted) = ensure_white_background(&white);
        assert!(!inverted);
        assert_eq!(out, white);

        let half = Image::filled(4, 4, 0.5);
        assert_eq!(ensure_white_background(&half), (half.clone(), false));
    }

    #[test]
    fn thicken_single_pixel() {
        let mut px = vec![1.0; 25];
        px[12] = 0.0;
        let img = Image::new(5, 5, px).unwrap();
        let t = thicken_strokes(&img);
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(t.get(y, x), if inside { 0.0 } else { 1.0 });
            }
        }
        let c = Image::filled(4, 4, 0.25);
        assert_eq!(thicken_strokes(&c), c);
    }
}
