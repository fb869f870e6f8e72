//! Brute-force reference implementations of the classical vision ops, written
//! pixel by pixel with clamped indexing.

use edgenet::vision::Image;

pub type Grid = Vec<Vec<f64>>;

pub fn to_grid(img: &Image) -> Grid {
    (0..img.height())
        .map(|y| {
            (0..img.width())
                .map(|x| f64::from(img.get(y, x)) * 255.0)
                .collect()
        })
        .collect()
}

fn clamped(g: &Grid, y: isize, x: isize) -> f64 {
    let y = y.clamp(0, g.len() as isize - 1) as usize;
    let x = x.clamp(0, g[0].len() as isize - 1) as usize;
    g[y][x]
}

/// Correlation with an odd square kernel given as rows.
pub fn filter(g: &Grid, k: &[Vec<f64>]) -> Grid {
    let r = (k.len() / 2) as isize;
    let mut out = vec![vec![0.0; g[0].len()]; g.len()];
    for (y, row) in out.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, krow) in k.iter().enumerate() {
                for (j, &kv) in krow.iter().enumerate() {
                    acc += kv * clamped(g, y as isize + i as isize - r, x as isize + j as isize - r);
                }
            }
            *v = acc;
        }
    }
    out
}

pub fn gaussian5(sigma: f64) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (-2..=2)
        .map(|dy: i32| {
            (-2..=2)
                .map(|dx: i32| (-f64::from(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp())
                .collect()
        })
        .collect();
    let total: f64 = raw.iter().flatten().sum();
    raw.into_iter()
        .map(|r| r.into_iter().map(|v| v / total).collect())
        .collect()
}

pub fn sobel_x() -> Vec<Vec<f64>> {
    vec![vec![-1.0, 0.0, 1.0], vec![-2.0, 0.0, 2.0], vec![-1.0, 0.0, 1.0]]
}

pub fn sobel_y() -> Vec<Vec<f64>> {
    vec![vec![-1.0, -2.0, -1.0], vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 1.0]]
}

pub fn magnitude(gx: &Grid, gy: &Grid) -> Grid {
    gx.iter()
        .zip(gy)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p * p + q * q).sqrt()).collect())
        .collect()
}

fn to_image(mask: &[Vec<bool>]) -> Image {
    Image::from_fn(
        mask.len(),
        mask[0].len(),
        |y, x| if mask[y][x] { 1.0 } else { 0.0 },
    )
    .unwrap()
}

/// Blurred Sobel magnitude as used by Canny, with its components.
pub fn canny_gradients(img: &Image) -> (Grid, Grid, Grid) {
    let blurred = filter(&to_grid(img), &gaussian5(1.4));
    let gx = filter(&blurred, &sobel_x());
    let gy = filter(&blurred, &sobel_y());
    let mag = magnitude(&gx, &gy);
    (gx, gy, mag)
}

pub fn canny(img: &Image, low: f64, high: f64) -> Image {
    let (gx, gy, mag) = canny_gradients(img);
    let (h, w) = (mag.len() as isize, mag[0].len() as isize);
    let m = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h || x >= w {
            0.0
        } else {
            mag[y as usize][x as usize]
        }
    };
    let mut thin = vec![vec![0.0; w as usize]; h as usize];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (gx[y as usize][x as usize], gy[y as usize][x as usize]);
            let angle = b.abs().atan2(a.abs()).to_degrees();
            // neighbour pair along the gradient, raster-earlier one first
            let (p, q) = if angle <= 22.5 {
                ((y, x - 1), (y, x + 1))
            } else if angle > 67.5 {
                ((y - 1, x), (y + 1, x))
            } else if a * b > 0.0 {
                ((y - 1, x - 1), (y + 1, x + 1))
            } else {
                ((y - 1, x + 1), (y + 1, x - 1))
            };
            let v = m(y, x);
            if v > m(p.0, p.1) && v >= m(q.0, q.1) {
                thin[y as usize][x as usize] = v;
            }
        }
    }
    let mut edge: Vec<Vec<bool>> = thin
        .iter()
        .map(|r| r.iter().map(|&v| v > high).collect())
        .collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if edge[y as usize][x as usize] || thin[y as usize][x as usize] <= low {
                    continue;
                }
                let touches = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (ny, nx) = (y + dy, x + dx);
                        ny >= 0 && nx >= 0 && ny < h && nx < w && edge[ny as usize][nx as usize]
                    })
                });
                if touches {
                    edge[y as usize][x as usize] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    to_image(&edge)
}

pub fn sobel(img: &Image, threshold: f64) -> Image {
    let g = to_grid(img);
    let mag = magnitude(&filter(&g, &sobel_x()), &filter(&g, &sobel_y()));
    let mask: Vec<Vec<bool>> = mag
        .iter()
        .map(|r| r.iter().map(|&v| v > threshold).collect())
        .collect();
    to_image(&mask)
}

pub fn log(img: &Image, threshold: f64) -> Image {
    let binomial: Vec<Vec<f64>> = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]
        .iter()
        .map(|r| r.iter().map(|v| v / 16.0).collect())
        .collect();
    let laplacian = vec![vec![0.0, 1.0, 0.0], vec![1.0, -4.0, 1.0], vec![0.0, 1.0, 0.0]];
    let lap = filter(&filter(&to_grid(img), &binomial), &laplacian);
    let (h, w) = (lap.len() as isize, lap[0].len() as isize);
    let mask: Vec<Vec<bool>> = (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    let v = lap[y as usize][x as usize];
                    v > 0.0
                        && [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)]
                            .iter()
                            .any(|&(ny, nx)| {
                                ny >= 0 && nx >= 0 && ny < h && nx < w && {
                                    let q = lap[ny as usize][nx as usize];
                                    q < 0.0 && v - q > threshold
                                }
                            })
                })
                .collect()
        })
        .collect();
    to_image(&mask)
}

/// 3x3 sliding-window minimum with replicate borders.
pub fn window_min(img: &Image) -> Image {
    let (h, w) = (img.height() as isize, img.width() as isize);
    Image::from_fn(img.height(), img.width(), |y, x| {
        let mut m = f32::INFINITY;
        for yy in y as isize - 1..=y as isize + 1 {
            for xx in x as isize - 1..=x as isize + 1 {
                m = m.min(img.get(yy.clamp(0, h - 1) as usize, xx.clamp(0, w - 1) as usize));
            }
        }
        m
    })
    .unwrap()
}

/// Fixed 28x28 test images: a ring, a thick diagonal stroke, a "7" glyph and
/// seeded noise.
pub fn fixtures() -> Vec<(&'static str, Image)> {
    let ring = Image::from_fn(28, 28, |y, x| {
        let d = ((y as f64 - 13.5).powi(2) + (x as f64 - 13.5).powi(2)).sqrt();
        if (6.0..10.0).contains(&d) {
            0.0
        } else {
            1.0
        }
    })
    .unwrap();
    let stroke = Image::from_fn(28, 28, |y, x| {
        let t = (y as f64 - x as f64).abs();
        (t / 3.0).min(1.0) as f32
    })
    .unwrap();
    let seven = Image::from_fn(28, 28, |y, x| {
        let bar = (5..9).contains(&y) && (6..22).contains(&x);
        let stem = (5..24).contains(&y) && {
            let cx = 21.0 - (y as f64 - 5.0) * 0.45;
            (x as f64 - cx).abs() < 2.0
        };
        if bar || stem {
            0.05
        } else {
            0.97
        }
    })
    .unwrap();
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let noise = Image::from_fn(28, 28, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u64 << 24) as f32
    })
    .unwrap();
    vec![
        ("ring", ring),
        ("stroke", stroke),
        ("seven", seven),
        ("noise", noise),
    ]
}
