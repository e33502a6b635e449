//! Grayscale images and the similarity metrics used for scoring and for the
//! auxiliary regression target.

use crate::error::{Error, Result};

/// Row-major grayscale image; pixel `(i, j)` is at `data[j * width + i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image must have at least one pixel"));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("image contains non-finite values"));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0);
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                data.push(f(i, j));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.width + i]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rescales to `[0, 1]`; a constant image maps to all zeros.
    pub fn min_max_normalized(&self) -> Image {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        if range <= 0.0 {
            return Image::filled(self.width, self.height, 0.0);
        }
        self.map(|v| (v - lo) / range)
    }

    /// Writes a binary portable graymap (P5), values clamped to `[0, 1]`.
    pub fn write_pgm(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// Variance below this is treated as a constant image.
const VARIANCE_FLOOR: f64 = 1e-18;

/// Zero-normalized cross-correlation, in `[-1, 1]`.
pub fn ncc(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.len() as f64;
    let (ma, mb) = (a.mean(), b.mean());
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    let (va, vb) = (saa / n, sbb / n);
    if va <= VARIANCE_FLOOR || vb <= VARIANCE_FLOOR {
        return Err(Error::ZeroVariance);
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

/// Normalized 1-D Gaussian taps. Images smaller than the window get the
/// largest odd window that fits.
pub(crate) fn ssim_kernel(width: usize, height: usize) -> Vec<f64> {
    let mut size = SSIM_WINDOW.min(width).min(height);
    if size % 2 == 0 {
        size -= 1;
    }
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|k| {
            let x = k as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Mean SSIM over all fully-contained Gaussian windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let kernel = ssim_kernel(a.width, a.height);
    let k = kernel.len();
    let (w, h) = a.dims();
    let (ow, oh) = (w - k + 1, h - k + 1);

    // separable "valid" filtering of the five moment images
    let moments: [Vec<f64>; 5] = [
        a.data.clone(),
        b.data.clone(),
        a.data.iter().map(|x| x * x).collect(),
        b.data.iter().map(|y| y * y).collect(),
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    ];
    let filtered: Vec<Vec<f64>> = moments
        .iter()
        .map(|m| {
            let mut rows = vec![0.0; ow * h];
            for j in 0..h {
                for i in 0..ow {
                    let mut acc = 0.0;
                    for (t, &g) in kernel.iter().enumerate() {
                        acc += g * m[j * w + i + t];
                    }
                    rows[j * ow + i] = acc;
                }
            }
            let mut out = vec![0.0; ow * oh];
            for j in 0..oh {
                for i in 0..ow {
                    let mut acc = 0.0;
                    for (t, &g) in kernel.iter().enumerate() {
                        acc += g * rows[(j + t) * ow + i];
                    }
                    out[j * ow + i] = acc;
                }
            }
            out
        })
        .collect();

    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let mut total = 0.0;
    for idx in 0..ow * oh {
        let (mu_a, mu_b) = (filtered[0][idx], filtered[1][idx]);
        let var_a = filtered[2][idx] - mu_a * mu_a;
        let var_b = filtered[3][idx] - mu_b * mu_b;
        let cov = filtered[4][idx] - mu_a * mu_b;
        total += ssim_term(mu_a, mu_b, var_a, var_b, cov, c1, c2);
    }
    Ok(total / (ow * oh) as f64)
}

pub(crate) fn ssim_term(
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Block-mean pooling by an integer factor.
pub fn downsample(a: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || a.width % factor != 0 || a.height % factor != 0 {
        return Err(Error::IndivisibleFactor {
            factor,
            width: a.width,
            height: a.height,
        });
    }
    if factor == 1 {
        return Ok(a.clone());
    }
    let (w, h) = (a.width / factor, a.height / factor);
    let scale = 1.0 / (factor * factor) as f64;
    let mut data = vec![0.0; w * h];
    for (j, row) in data.chunks_mut(w).enumerate() {
        for (i, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dj in 0..factor {
                let base = (j * factor + dj) * a.width + i * factor;
                acc += a.data[base..base + factor].iter().sum::<f64>();
            }
            *out = acc * scale;
        }
    }
    Ok(Image {
        width: w,
        height: h,
        data,
    })
}

/// Concatenates equally-sized images channel after channel.
pub fn stack(images: &[&Image]) -> Result<Vec<f64>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(first.len() * images.len());
    for img in images {
        check_dims(first, img)?;
        out.extend_from_slice(&img.data);
    }
    Ok(out)
}
