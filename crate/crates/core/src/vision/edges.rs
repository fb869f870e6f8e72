//! Canny, Sobel and Laplacian-of-Gaussian edge maps.
//!
//! All filters work on the image scaled to `0..=255` so thresholds are on the
//! familiar 8-bit gradient scale. Borders are replicate-padded. Every
//! correlation sums its taps in row-major kernel order.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeMethod {
    Canny,
    Sobel,
    Log,
    None,
}

impl EdgeMethod {
    pub fn name(self) -> &'static str {
        match self {
            EdgeMethod::Canny => "canny",
            EdgeMethod::Sobel => "sobel",
            EdgeMethod::Log => "log",
            EdgeMethod::None => "none",
        }
    }
}

impl fmt::Display for EdgeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EdgeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "canny" => Ok(EdgeMethod::Canny),
            "sobel" | "sobel3" => Ok(EdgeMethod::Sobel),
            "log" | "log3" => Ok(EdgeMethod::Log),
            "none" => Ok(EdgeMethod::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown edge method `{other}` (expected canny, sobel, log or none)"
            ))),
        }
    }
}

/// Edge extractor settings. Thresholds are on the 0-255 gradient scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeParams {
    pub method: EdgeMethod,
    pub min_val: f64,
    pub max_val: f64,
    pub aperture: usize,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            method: EdgeMethod::Canny,
            min_val: 100.0,
            max_val: 200.0,
            aperture: 3,
        }
    }
}

impl EdgeParams {
    pub fn with_method(method: EdgeMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min_val && self.min_val <= self.max_val && self.max_val <= 1020.0) {
            return Err(Error::InvalidArgument(format!(
                "edge thresholds need 0 <= min ({}) <= max ({}) <= 1020",
                self.min_val, self.max_val
            )));
        }
        if self.aperture != 3 {
            return Err(Error::InvalidArgument(format!(
                "only a 3x3 Sobel aperture is supported, got {}",
                self.aperture
            )));
        }
        Ok(())
    }
}

/// Working buffer in f64.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }
}

pub(crate) fn scaled(img: &Image) -> Plane {
    Plane {
        h: img.height(),
        w: img.width(),
        data: img.pixels().iter().map(|&v| f64::from(v) * 255.0).collect(),
    }
}

/// Correlates with a square `size x size` kernel over a replicate-padded copy.
fn correlate(src: &Plane, kernel: &[f64], size: usize) -> Plane {
    let r = size / 2;
    let (pw, ph) = (src.w + 2 * r, src.h + 2 * r);
    let mut padded = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let y = py.saturating_sub(r).min(src.h - 1);
        for px in 0..pw {
            let x = px.saturating_sub(r).min(src.w - 1);
            padded.push(src.at(y, x));
        }
    }
    let mut data = Vec::with_capacity(src.h * src.w);
    for y in 0..src.h {
        for x in 0..src.w {
            let mut acc = 0.0;
            for ky in 0..size {
                let row = &padded[(y + ky) * pw + x..];
                for kx in 0..size {
                    acc += kernel[ky * size + kx] * row[kx];
                }
            }
            data.push(acc);
        }
    }
    Plane {
        h: src.h,
        w: src.w,
        data,
    }
}

pub(crate) const CANNY_SIGMA: f64 = 1.4;

pub(crate) fn gaussian_kernel5(sigma: f64) -> [f64; 25] {
    let mut k = [0.0; 25];
    for (i, v) in k.iter_mut().enumerate() {
        let (dy, dx) = ((i / 5) as f64 - 2.0, (i % 5) as f64 - 2.0);
        *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

pub(crate) fn gaussian_blur5(src: &Plane) -> Plane {
    correlate(src, &gaussian_kernel5(CANNY_SIGMA), 5)
}

const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
const BINOMIAL3: [f64; 9] = [
    1.0 / 16.0,
    2.0 / 16.0,
    1.0 / 16.0,
    2.0 / 16.0,
    4.0 / 16.0,
    2.0 / 16.0,
    1.0 / 16.0,
    2.0 / 16.0,
    1.0 / 16.0,
];
const LAPLACIAN3: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

pub(crate) fn sobel_gradients(src: &Plane) -> (Plane, Plane) {
    (correlate(src, &SOBEL_X, 3), correlate(src, &SOBEL_Y, 3))
}

fn magnitude(gx: &Plane, gy: &Plane) -> Vec<f64> {
    gx.data
        .iter()
        .zip(&gy.data)
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect()
}

fn binary_image(h: usize, w: usize, mask: &[bool]) -> Image {
    Image::new(h, w, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
        .expect("binary pixels are in range")
}

const TAN_22_5: f64 = 0.414_213_562_373_095_03;
const TAN_67_5: f64 = 2.414_213_562_373_095;

/// Thins the magnitude map to ridge pixels along the quantised gradient
/// direction. A pixel survives if it is strictly above its neighbour that
/// comes first in raster order and not below the other one, so plateaus two
/// pixels wide keep a single pixel.
fn non_maximum_suppression(mag: &[f64], gx: &Plane, gy: &Plane) -> Vec<f64> {
    let (h, w) = (gx.h as isize, gx.w as isize);
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h || x >= w {
            0.0
        } else {
            mag[(y * w + x) as usize]
        }
    };
    let mut out = vec![0.0; mag.len()];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let (ax, ay) = (gx.data[i].abs(), gy.data[i].abs());
            // (dy, dx) of the raster-earlier neighbour; the other is mirrored
            let (dy, dx) = if ay <= ax * TAN_22_5 {
                (0, -1)
            } else if ay > ax * TAN_67_5 {
                (-1, 0)
            } else if gx.data[i] * gy.data[i] > 0.0 {
                (-1, -1)
            } else {
                (-1, 1)
            };
            let m = mag[i];
            if m > at(y + dy, x + dx) && m >= at(y - dy, x - dx) {
                out[i] = m;
            }
        }
    }
    out
}

/// Keeps pixels above `high`, plus pixels above `low` that are 8-connected to
/// a kept pixel.
fn hysteresis(nms: &[f64], h: usize, w: usize, low: f64, high: f64) -> Vec<bool> {
    let mut edge = vec![false; nms.len()];
    let mut queue = VecDeque::new();
    for (i, &m) in nms.iter().enumerate() {
        if m > high {
            edge[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && nms[j] > low {
                    edge[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edge
}

/// Canny edge detector: 5x5 Gaussian blur (sigma 1.4), 3x3 Sobel, L2
/// magnitude, 4-direction non-maximum suppression and hysteresis between
/// `min_val` and `max_val`. Returns a binary map with 1 on edges.
pub fn canny(img: &Image, params: &EdgeParams) -> Result<Image> {
    params.validate()?;
    if img.height() < 5 || img.width() < 5 {
        return Err(Error::InvalidArgument(format!(
            "canny needs at least 5x5 pixels, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let blurred = gaussian_blur5(&scaled(img));
    let (gx, gy) = sobel_gradients(&blurred);
    let mag = magnitude(&gx, &gy);
    let thin = non_maximum_suppression(&mag, &gx, &gy);
    let mask = hysteresis(&thin, img.height(), img.width(), params.min_val, params.max_val);
    Ok(binary_image(img.height(), img.width(), &mask))
}

/// Sobel magnitude of the unblurred image, thresholded at `min_val`.
pub fn sobel_edges(img: &Image, params: &EdgeParams) -> Image {
    let (gx, gy) = sobel_gradients(&scaled(img));
    let mask: Vec<bool> = magnitude(&gx, &gy)
        .into_iter()
        .map(|m| m > params.min_val)
        .collect();
    binary_image(img.height(), img.width(), &mask)
}

/// Zero crossings of a 3x3 Laplacian applied after a 3x3 binomial blur.
///
/// A pixel is an edge when its response is positive, some 4-neighbour's is
/// negative, and the jump between them exceeds `min_val`.
pub fn log_edges(img: &Image, params: &EdgeParams) -> Image {
    let lap = correlate(&correlate(&scaled(img), &BINOMIAL3, 3), &LAPLACIAN3, 3);
    let (h, w) = (lap.h as isize, lap.w as isize);
    let mut mask = vec![false; lap.data.len()];
    for y in 0..h {
        for x in 0..w {
            let v = lap.data[(y * w + x) as usize];
            if v <= 0.0 {
                continue;
            }
            mask[(y * w + x) as usize] = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h || nx >= w {
                    return false;
                }
                let q = lap.data[(ny * w + nx) as usize];
                q < 0.0 && v - q > params.min_val
            });
        }
    }
    binary_image(img.height(), img.width(), &mask)
}

/// Dispatches on `params.method`; `None` yields an all-zero map.
pub fn extract_edges(img: &Image, params: &EdgeParams) -> Result<Image> {
    params.validate()?;
    match params.method {
        EdgeMethod::Canny => canny(img, params),
        EdgeMethod::Sobel => Ok(sobel_edges(img, params)),
        EdgeMethod::Log => Ok(log_edges(img, params)),
        EdgeMethod::None => Ok(Image::filled(img.height(), img.width(), 0.0)),
    }
}
