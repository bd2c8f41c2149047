use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{sobel_gradients, GrayImage};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarrisConfig {
    /// Corner-response constant in `det − k·trace²`.
    #[serde(default = "HarrisConfig::default_k")]
    pub k: f64,
    /// Gaussian window radius; σ is half of it.
    #[serde(default = "HarrisConfig::default_radius")]
    pub window_radius: usize,
    /// Keep maxima above this fraction of the strongest response.
    #[serde(default = "HarrisConfig::default_fraction")]
    pub threshold_fraction: f64,
    /// Fixed feature length.
    #[serde(default = "HarrisConfig::default_top")]
    pub top_count: usize,
}

impl HarrisConfig {
    fn default_k() -> f64 {
        0.04
    }
    fn default_radius() -> usize {
        2
    }
    fn default_fraction() -> f64 {
        0.01
    }
    fn default_top() -> usize {
        128
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k < 0.25) {
            return Err(Error::invalid(format!("harris k = {} outside (0, 0.25)", self.k)));
        }
        if self.top_count == 0 {
            return Err(Error::invalid("harris top_count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.threshold_fraction) {
            return Err(Error::invalid(format!(
                "harris threshold_fraction {} outside [0, 1)",
                self.threshold_fraction
            )));
        }
        if self.window_radius == 0 {
            return Err(Error::invalid("harris window_radius must be positive"));
        }
        Ok(())
    }
}

impl Default for HarrisConfig {
    fn default() -> Self {
        HarrisConfig {
            k: Self::default_k(),
            window_radius: Self::default_radius(),
            threshold_fraction: Self::default_fraction(),
            top_count: Self::default_top(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner<T> {
    pub row: usize,
    pub col: usize,
    pub response: T,
    /// Source intensity at the corner.
    pub intensity: T,
}

/// Fixed-length intensity vector plus the number of real corners behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct HarrisFeature<T> {
    pub values: Vec<T>,
    pub corner_count: usize,
}

fn gaussian_kernel<T: Scalar>(radius: usize) -> Vec<T> {
    let sigma = radius as f64 / 2.0;
    let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::of(v / sum)).collect()
}

/// Separable convolution, borders replicated.
fn smooth<T: Scalar>(data: &[T], h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (i, &k) in kernel.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += k * data[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (i, &k) in kernel.iter().enumerate() {
                let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Harris response `det(M) − k·trace(M)²` of the Gaussian-smoothed structure
/// tensor built from Sobel derivatives (scaled by 1/8).
pub fn harris_response<T: Scalar>(img: &GrayImage<T>, cfg: &HarrisConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let (gx, gy) = sobel_gradients(img);
    let eighth = T::of(0.125);
    let mut ixx = Vec::with_capacity(h * w);
    let mut iyy = Vec::with_capacity(h * w);
    let mut ixy = Vec::with_capacity(h * w);
    for (&x, &y) in gx.iter().zip(&gy) {
        let (x, y) = (x * eighth, y * eighth);
        ixx.push(x * x);
        iyy.push(y * y);
        ixy.push(x * y);
    }
    let kernel = gaussian_kernel::<T>(cfg.window_radius);
    let sxx = smooth(&ixx, h, w, &kernel);
    let syy = smooth(&iyy, h, w, &kernel);
    let sxy = smooth(&ixy, h, w, &kernel);
    let k = T::of(cfg.k);
    Ok((0..h * w)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - k * tr * tr
        })
        .collect())
}

/// Corners after 3×3 non-maximum suppression and relative thresholding,
/// strongest first; equal responses are ordered by `(row, col)`.
///
/// On a plateau of equal responses only the first pixel in raster order
/// survives suppression.
pub fn harris_corners<T: Scalar>(img: &GrayImage<T>, cfg: &HarrisConfig) -> Result<Vec<Corner<T>>> {
    let resp = harris_response(img, cfg)?;
    let (h, w) = (img.height(), img.width());
    let max = resp.iter().fold(T::zero(), |m, &v| m.max(v));
    if !(max > T::zero()) {
        return Ok(Vec::new());
    }
    let thresh = T::of(cfg.threshold_fraction) * max;
    let mut corners = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = resp[r * w + c];
            if !(v > thresh) {
                continue;
            }
            let mut is_max = true;
            'nbr: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let q = resp[rr as usize * w + cc as usize];
                    let earlier = dr < 0 || (dr == 0 && dc < 0);
                    if q > v || (earlier && q == v) {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if is_max {
                corners.push(Corner {
                    row: r,
                    col: c,
                    response: v,
                    intensity: img.get(r, c),
                });
            }
        }
    }
    // raster order already holds, so a stable sort keeps (row, col) on ties
    corners.sort_by(|a, b| b.response.partial_cmp(&a.response).unwrap_or(std::cmp::Ordering::Equal));
    Ok(corners)
}

/// Intensities of the `top_count` strongest corners, zero-padded.
pub fn harris_features<T: Scalar>(img: &GrayImage<T>, cfg: &HarrisConfig) -> Result<HarrisFeature<T>> {
    let corners = harris_corners(img, cfg)?;
    let mut values: Vec<T> = corners.iter().take(cfg.top_count).map(|c| c.intensity).collect();
    values.resize(cfg.top_count, T::zero());
    Ok(HarrisFeature {
        values,
        corner_count: corners.len(),
    })
}
