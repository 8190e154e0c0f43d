//! Pixel-exact image operations used by resizing, augmentation, and
//! preprocessing. Geometric warps use inverse mapping with bilinear sampling
//! and reflected borders; axis-aligned flips and quarter turns are exact
//! index permutations.

use super::DataError;
use image::{Rgb, RgbImage};

/// Round half up and clamp to the 8-bit range.
fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Reflects an out-of-range coordinate back into `[0, n)`, mirroring at the
/// borders (edge pixels included).
fn reflect(mut x: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    x = x.rem_euclid(period);
    if x >= n {
        period - 1 - x
    } else {
        x
    }
}

fn pixel_reflect(img: &RgbImage, x: i64, y: i64) -> [u8; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    img.get_pixel(reflect(x, w) as u32, reflect(y, h) as u32).0
}

/// Bilinear sample at fractional coordinates with reflected borders.
pub fn bilinear_sample(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let p00 = pixel_reflect(img, x0, y0);
    let p10 = pixel_reflect(img, x0 + 1, y0);
    let p01 = pixel_reflect(img, x0, y0 + 1);
    let p11 = pixel_reflect(img, x0 + 1, y0 + 1);
    let mut out = [0.0f64; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Plain bilinear resize (corner-aligned sampling, aspect ratio ignored).
/// Resizing to the current size returns the image unchanged.
pub fn resize_bilinear(img: &RgbImage, height: u32, width: u32) -> RgbImage {
    assert!(
        height >= 1 && width >= 1,
        "resize target must be at least 1x1"
    );
    if (width, height) == img.dimensions() {
        return img.clone();
    }
    let scale = |dst: u32, dst_n: u32, src_n: u32| -> f64 {
        if dst_n <= 1 {
            0.0
        } else {
            dst as f64 * (src_n as f64 - 1.0) / (dst_n as f64 - 1.0)
        }
    };
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let sy = scale(y, height, img.height());
        for x in 0..width {
            let sx = scale(x, width, img.width());
            let sample = bilinear_sample(img, sx, sy);
            out.put_pixel(
                x,
                y,
                Rgb([
                    quantize(sample[0]),
                    quantize(sample[1]),
                    quantize(sample[2]),
                ]),
            );
        }
    }
    out
}

/// Exact horizontal mirror.
pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(w - 1 - x, y, *img.get_pixel(x, y));
        }
    }
    out
}

/// Exact vertical mirror.
pub fn flip_vertical(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x, h - 1 - y, *img.get_pixel(x, y));
        }
    }
    out
}

/// Exact rotation by `quarter_turns * 90` degrees clockwise.
pub fn rotate_quarter(img: &RgbImage, quarter_turns: u8) -> RgbImage {
    let (w, h) = img.dimensions();
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => {
            let mut out = RgbImage::new(h, w);
            for y in 0..h {
                for x in 0..w {
                    out.put_pixel(h - 1 - y, x, *img.get_pixel(x, y));
                }
            }
            out
        }
        2 => {
            let mut out = RgbImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    out.put_pixel(w - 1 - x, h - 1 - y, *img.get_pixel(x, y));
                }
            }
            out
        }
        _ => {
            let mut out = RgbImage::new(h, w);
            for y in 0..h {
                for x in 0..w {
                    out.put_pixel(y, w - 1 - x, *img.get_pixel(x, y));
                }
            }
            out
        }
    }
}

/// Applies an inverse-mapped warp: `source` maps destination coordinates to
/// source coordinates.
fn warp(img: &RgbImage, source: impl Fn(f64, f64) -> (f64, f64)) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source(x as f64, y as f64);
            let sample = bilinear_sample(img, sx, sy);
            out.put_pixel(
                x,
                y,
                Rgb([
                    quantize(sample[0]),
                    quantize(sample[1]),
                    quantize(sample[2]),
                ]),
            );
        }
    }
    out
}

/// Rotation about the image centre by an arbitrary angle (degrees,
/// counter-clockwise), borders filled by reflection.
pub fn rotate_degrees(img: &RgbImage, degrees: f64) -> RgbImage {
    let theta = degrees.to_radians();
    let (cos, sin) = (theta.cos(), theta.sin());
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    warp(img, move |x, y| {
        let dx = x - cx;
        let dy = y - cy;
        (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    })
}

/// Shear about the centre: the inverse map of `[[1, sx], [sy, 1]]`.
pub fn shear(img: &RgbImage, sx: f64, sy: f64) -> RgbImage {
    let det = 1.0 - sx * sy;
    assert!(det.abs() > 1e-6, "degenerate shear");
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    warp(img, move |x, y| {
        let dx = x - cx;
        let dy = y - cy;
        (cx + (dx - sx * dy) / det, cy + (dy - sy * dx) / det)
    })
}

/// Trapezoidal skew: rows are scaled horizontally by a factor that grows
/// linearly from the top edge to the bottom edge.
pub fn skew(img: &RgbImage, strength: f64) -> RgbImage {
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let h = (img.height() as f64 - 1.0).max(1.0);
    warp(img, move |x, y| {
        let scale = 1.0 + strength * (y / h);
        (cx + (x - cx) / scale, y)
    })
}

/// Smooth elastic warp: a coarse grid of random displacements (at most
/// `amplitude` pixels) is bilinearly interpolated into a dense field.
pub fn elastic_distortion(img: &RgbImage, amplitude: f64, seed: u64) -> RgbImage {
    use rand::{Rng, SeedableRng};
    let cells = 4usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let nodes = cells + 1;
    let field: Vec<(f64, f64)> = (0..nodes * nodes)
        .map(|_| {
            (
                rng.random_range(-amplitude..=amplitude),
                rng.random_range(-amplitude..=amplitude),
            )
        })
        .collect();
    let (w, h) = (img.width() as f64, img.height() as f64);
    let displacement = move |x: f64, y: f64| -> (f64, f64) {
        let gx = (x / (w - 1.0).max(1.0)) * cells as f64;
        let gy = (y / (h - 1.0).max(1.0)) * cells as f64;
        let x0 = (gx.floor() as usize).min(cells - 1);
        let y0 = (gy.floor() as usize).min(cells - 1);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let at = |ix: usize, iy: usize| field[iy * nodes + ix];
        let (d00x, d00y) = at(x0, y0);
        let (d10x, d10y) = at(x0 + 1, y0);
        let (d01x, d01y) = at(x0, y0 + 1);
        let (d11x, d11y) = at(x0 + 1, y0 + 1);
        let dx =
            (d00x * (1.0 - fx) + d10x * fx) * (1.0 - fy) + (d01x * (1.0 - fx) + d11x * fx) * fy;
        let dy =
            (d00y * (1.0 - fx) + d10y * fx) * (1.0 - fy) + (d01y * (1.0 - fx) + d11y * fx) * fy;
        (dx, dy)
    };
    warp(img, move |x, y| {
        let (dx, dy) = displacement(x, y);
        (x + dx, y + dy)
    })
}

/// Affine intensity shift: `v -> clamp(v * factor + offset)` per channel.
pub fn intensity(img: &RgbImage, factor: f64, offset: f64) -> RgbImage {
    let mut out = img.clone();
    for pixel in out.pixels_mut() {
        for c in 0..3 {
            pixel.0[c] = quantize(pixel.0[c] as f64 * factor + offset);
        }
    }
    out
}

/// Preprocessing filters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "filter", rename_all = "snake_case")]
pub enum Filter {
    Gaussian { sigma: f64 },
    Median { kernel: usize },
    LinearContrast { alpha: f64 },
    ContrastEnhance,
}

/// Applies one preprocessing filter, validating its parameter.
pub fn preprocess_filter(img: &RgbImage, filter: &Filter) -> Result<RgbImage, DataError> {
    match filter {
        Filter::Gaussian { sigma } => {
            if *sigma <= 0.0 {
                return Err(DataError::FilterParam(format!(
                    "gaussian sigma must be positive, got {sigma}"
                )));
            }
            Ok(gaussian_blur(img, *sigma))
        }
        Filter::Median { kernel } => {
            if *kernel < 3 || kernel % 2 == 0 {
                return Err(DataError::FilterParam(format!(
                    "median kernel must be odd and at least 3, got {kernel}"
                )));
            }
            Ok(median_filter(img, *kernel))
        }
        Filter::LinearContrast { alpha } => {
            if *alpha <= 0.0 {
                return Err(DataError::FilterParam(format!(
                    "linear contrast alpha must be positive, got {alpha}"
                )));
            }
            Ok(linear_contrast(img, *alpha))
        }
        Filter::ContrastEnhance => Ok(equalize_histogram(img)),
    }
}

/// Separable gaussian blur with reflected borders; kernel radius `ceil(3σ)`.
fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }

    let (w, h) = (img.width() as i64, img.height() as i64);
    // Horizontal pass into a float buffer, then vertical pass.
    let mut mid = vec![0.0f64; (w * h * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x + ki as i64 - radius, w);
                let p = img.get_pixel(sx as u32, y as u32).0;
                for c in 0..3 {
                    acc[c] += p[c] as f64 * kv;
                }
            }
            for c in 0..3 {
                mid[((y * w + x) * 3) as usize + c] = acc[c];
            }
        }
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y + ki as i64 - radius, h);
                for c in 0..3 {
                    acc[c] += mid[((sy * w + x) * 3) as usize + c] * kv;
                }
            }
            out.put_pixel(
                x as u32,
                y as u32,
                Rgb([quantize(acc[0]), quantize(acc[1]), quantize(acc[2])]),
            );
        }
    }
    out
}

/// Per-channel k x k median with reflected borders.
fn median_filter(img: &RgbImage, kernel: usize) -> RgbImage {
    let radius = (kernel / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = RgbImage::new(w as u32, h as u32);
    let mut window = Vec::with_capacity(kernel * kernel);
    for y in 0..h {
        for x in 0..w {
            let mut pixel = [0u8; 3];
            for (c, slot) in pixel.iter_mut().enumerate() {
                window.clear();
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        window.push(pixel_reflect(img, x + dx, y + dy)[c]);
                    }
                }
                window.sort_unstable();
                *slot = window[window.len() / 2];
            }
            out.put_pixel(x as u32, y as u32, Rgb(pixel));
        }
    }
    out
}

/// `v -> clamp(128 + alpha * (v - 128))`; `alpha = 1` is the identity.
fn linear_contrast(img: &RgbImage, alpha: f64) -> RgbImage {
    let mut out = img.clone();
    for pixel in out.pixels_mut() {
        for c in 0..3 {
            pixel.0[c] = quantize(128.0 + alpha * (pixel.0[c] as f64 - 128.0));
        }
    }
    out
}

/// Per-channel histogram equalization; constant channels are left unchanged.
fn equalize_histogram(img: &RgbImage) -> RgbImage {
    let total = (img.width() * img.height()) as u64;
    let mut luts = [[0u8; 256]; 3];
    for c in 0..3 {
        let mut hist = [0u64; 256];
        for pixel in img.pixels() {
            hist[pixel.0[c] as usize] += 1;
        }
        let cdf_min = hist
            .iter()
            .scan(0u64, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .find(|&v| v > 0)
            .unwrap_or(0);
        if cdf_min == total {
            // Single-valued channel: equalization is undefined, keep as-is.
            for (v, slot) in luts[c].iter_mut().enumerate() {
                *slot = v as u8;
            }
            continue;
        }
        let mut cdf = 0u64;
        for (v, &count) in hist.iter().enumerate() {
            cdf += count;
            if cdf == 0 {
                luts[c][v] = 0;
            } else {
                let num = (cdf - cdf_min) as f64 * 255.0;
                luts[c][v] = quantize(num / (total - cdf_min) as f64);
            }
        }
    }
    let mut out = img.clone();
    for pixel in out.pixels_mut() {
        for c in 0..3 {
            pixel.0[c] = luts[c][pixel.0[c] as usize];
        }
    }
    out
}
