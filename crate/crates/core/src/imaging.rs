//! Coin segmentation: Sobel edges, thresholding, line dilation, hole filling
//! and connected-component selection, followed by crop and resize to a fixed
//! square.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> GrayImage<T> {
    /// Builds an image, rejecting empty dimensions, a wrong pixel count or
    /// values outside `[0, 1]`.
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::dim("GrayImage::new", height * width, pixels.len()));
        }
        if let Some(bad) = pixels.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(GrayImage { height, width, pixels })
    }

    /// Clamps every value into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<T>) -> Result<Self> {
        for p in pixels.iter_mut() {
            *p = if p.is_nan() {
                T::zero()
            } else {
                p.max(T::zero()).min(T::one())
            };
        }
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut px = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                px.push(f(r, c));
            }
        }
        Self::new(height, width, px)
    }

    /// Converts interleaved 8-bit RGB to luminance (0.299, 0.587, 0.114).
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * height * width {
            return Err(Error::dim("GrayImage::from_rgb8", 3 * height * width, rgb.len()));
        }
        let px = rgb
            .chunks_exact(3)
            .map(|p| {
                let y = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0;
                T::of(y.clamp(0.0, 1.0))
            })
            .collect();
        Self::new(height, width, px)
    }

    /// Decodes a PNG or JPEG file and converts it to luminance.
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_rgb8(h as usize, w as usize, rgb.as_raw()).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes the image as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| (p.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.pixels[row * self.width + col]
    }

    /// Pixel lookup with coordinates clamped to the border.
    #[inline]
    fn clamped(&self, row: isize, col: isize) -> T {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.pixels[r * self.width + c]
    }
}

/// Boolean raster produced by thresholding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::dim("BinaryMask::new", height * width, bits.len()));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOrientation {
    Vertical,
    Horizontal,
}

/// Centered line segment used for dilation. Its length is odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    orientation: LineOrientation,
    length: usize,
}

impl StructuringElement {
    pub fn new(orientation: LineOrientation, length: usize) -> Result<Self> {
        if length == 0 || length.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "structuring element length must be odd and positive, got {length}"
            )));
        }
        Ok(StructuringElement { orientation, length })
    }

    pub fn vertical(length: usize) -> Result<Self> {
        Self::new(LineOrientation::Vertical, length)
    }

    pub fn horizontal(length: usize) -> Result<Self> {
        Self::new(LineOrientation::Horizontal, length)
    }

    pub fn orientation(&self) -> LineOrientation {
        self.orientation
    }

    pub fn length(&self) -> usize {
        self.length
    }
}

/// A labelled 8-connected foreground region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Labels are dense from 1, in raster order of each component's first pixel.
    pub label: usize,
    /// `(row, col)` pairs in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

/// Segmentation settings. Serialized with the keys `sobel_threshold`,
/// `se_length` and `normalized_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "PreprocessConfig::default_threshold")]
    pub sobel_threshold: f64,
    #[serde(default = "PreprocessConfig::default_se_length")]
    pub se_length: usize,
    #[serde(default = "PreprocessConfig::default_size")]
    pub normalized_size: usize,
}

impl PreprocessConfig {
    fn default_threshold() -> f64 {
        0.2
    }
    fn default_se_length() -> usize {
        3
    }
    fn default_size() -> usize {
        64
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sobel_threshold) {
            return Err(Error::invalid(format!(
                "sobel_threshold {} outside [0,1]",
                self.sobel_threshold
            )));
        }
        StructuringElement::vertical(self.se_length)?;
        if self.normalized_size == 0 {
            return Err(Error::invalid("normalized_size must be positive"));
        }
        Ok(())
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            sobel_threshold: Self::default_threshold(),
            se_length: Self::default_se_length(),
            normalized_size: Self::default_size(),
        }
    }
}

/// Horizontal and vertical 3×3 Sobel responses, border pixels replicated.
pub(crate) fn sobel_gradients<T: Scalar>(img: &GrayImage<T>) -> (Vec<T>, Vec<T>) {
    let (h, w) = (img.height, img.width);
    let two = T::of(2.0);
    let mut gx = vec![T::zero(); h * w];
    let mut gy = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            let p = |dr: isize, dc: isize| img.clamped(ri + dr, ci + dc);
            gx[r * w + c] = (p(-1, 1) + two * p(0, 1) + p(1, 1)) - (p(-1, -1) + two * p(0, -1) + p(1, -1));
            gy[r * w + c] = (p(1, -1) + two * p(1, 0) + p(1, 1)) - (p(-1, -1) + two * p(-1, 0) + p(-1, 1));
        }
    }
    (gx, gy)
}

/// Sobel gradient magnitude scaled so that the strongest response is 1.
///
/// A gradient-free image maps to all zeros.
pub fn sobel_magnitude<T: Scalar>(img: &GrayImage<T>) -> GrayImage<T> {
    let (gx, gy) = sobel_gradients(img);
    let mut mag: Vec<T> = gx.iter().zip(&gy).map(|(&x, &y)| x.hypot(y)).collect();
    let max = mag.iter().fold(T::zero(), |m, &v| m.max(v));
    if max > T::zero() {
        mag.iter_mut().for_each(|v| *v = (*v / max).min(T::one()));
    }
    GrayImage {
        height: img.height,
        width: img.width,
        pixels: mag,
    }
}

/// Sets a bit iff the pixel is strictly above `t`.
pub fn threshold<T: Scalar>(img: &GrayImage<T>, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("threshold {t} outside [0,1]")));
    }
    let t = T::of(t);
    Ok(BinaryMask {
        height: img.height,
        width: img.width,
        bits: img.pixels.iter().map(|&p| p > t).collect(),
    })
}

/// Binary dilation by a centered line; pixels outside the frame count as false.
pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (h, w) = (mask.height, mask.width);
    let half = (se.length / 2) as isize;
    let mut out = BinaryMask::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let hit = (-half..=half).any(|d| {
                let (rr, cc) = match se.orientation {
                    LineOrientation::Vertical => (r as isize + d, c as isize),
                    LineOrientation::Horizontal => (r as isize, c as isize + d),
                };
                rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && mask.get(rr as usize, cc as usize)
            });
            out.set(r, c, hit);
        }
    }
    out
}

/// Fills every background region that is not 4-connected to the frame border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height, mask.width);
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    let seed = |r: usize, c: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        let i = r * w + c;
        if !mask.bits[i] && !outside[i] {
            outside[i] = true;
            queue.push_back((r, c));
        }
    };
    for c in 0..w {
        seed(0, c, &mut outside, &mut queue);
        seed(h - 1, c, &mut outside, &mut queue);
    }
    for r in 0..h {
        seed(r, 0, &mut outside, &mut queue);
        seed(r, w - 1, &mut outside, &mut queue);
    }
    while let Some((r, c)) = queue.pop_front() {
        if r > 0 {
            seed(r - 1, c, &mut outside, &mut queue);
        }
        if r + 1 < h {
            seed(r + 1, c, &mut outside, &mut queue);
        }
        if c > 0 {
            seed(r, c - 1, &mut outside, &mut queue);
        }
        if c + 1 < w {
            seed(r, c + 1, &mut outside, &mut queue);
        }
    }
    BinaryMask {
        height: h,
        width: w,
        bits: outside.into_iter().map(|o| !o).collect(),
    }
}

fn find_root(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Two-pass union-find labelling of true pixels with 8-connectivity.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = (mask.height, mask.width);
    let mut provisional = vec![0usize; h * w];
    // parent[0] is a dummy for background
    let mut parent = vec![0usize];

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            // previously visited 8-neighbours: W, NW, N, NE
            let mut neighbours = [0usize; 4];
            let mut n = 0;
            if c > 0 && provisional[r * w + c - 1] != 0 {
                neighbours[n] = provisional[r * w + c - 1];
                n += 1;
            }
            if r > 0 {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let l = provisional[(r - 1) * w + cc];
                    if l != 0 {
                        neighbours[n] = l;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                let l = parent.len();
                parent.push(l);
                provisional[r * w + c] = l;
            } else {
                let mut root = find_root(&mut parent, neighbours[0]);
                for &l in &neighbours[1..n] {
                    let other = find_root(&mut parent, l);
                    if other != root {
                        let (lo, hi) = (root.min(other), root.max(other));
                        parent[hi] = lo;
                        root = lo;
                    }
                }
                provisional[r * w + c] = root;
            }
        }
    }

    let mut dense = vec![0usize; parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let p = provisional[r * w + c];
            if p == 0 {
                continue;
            }
            let root = find_root(&mut parent, p);
            if dense[root] == 0 {
                components.push(Component {
                    label: components.len() + 1,
                    pixels: Vec::new(),
                    area: 0,
                    row_min: r,
                    row_max: r,
                    col_min: c,
                    col_max: c,
                });
                dense[root] = components.len();
            }
            let comp = &mut components[dense[root] - 1];
            comp.pixels.push((r, c));
            comp.area += 1;
            comp.row_min = comp.row_min.min(r);
            comp.row_max = comp.row_max.max(r);
            comp.col_min = comp.col_min.min(c);
            comp.col_max = comp.col_max.max(c);
        }
    }
    components
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear<T: Scalar>(img: &GrayImage<T>, height: usize, width: usize) -> Result<GrayImage<T>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target must be non-empty"));
    }
    if height == img.height && width == img.width {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let axis = |dst: usize, scale: f64, len: usize| -> (usize, usize, T) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, T::of(src - i0 as f64))
    };
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let (r0, r1, fy) = axis(r, sy, img.height);
        for c in 0..width {
            let (c0, c1, fx) = axis(c, sx, img.width);
            let top = img.get(r0, c0) * (T::one() - fx) + img.get(r0, c1) * fx;
            let bottom = img.get(r1, c0) * (T::one() - fx) + img.get(r1, c1) * fx;
            out.push(top * (T::one() - fy) + bottom * fy);
        }
    }
    GrayImage::from_clamped(height, width, out)
}

/// Segments the coin and returns it as a `normalized_size` square.
///
/// The largest 8-connected component of the filled edge mask is kept; the
/// source is cropped to its bounding box, pixels off the component are zeroed
/// and the crop is resized bilinearly.
pub fn extract_roi<T: Scalar>(img: &GrayImage<T>, cfg: &PreprocessConfig) -> Result<GrayImage<T>> {
    cfg.validate()?;
    let edges = sobel_magnitude(img);
    let mask = threshold(&edges, cfg.sobel_threshold)?;
    if mask.count() == 0 {
        return Err(Error::Segmentation { stage: "threshold" });
    }
    let mask = dilate(&mask, StructuringElement::vertical(cfg.se_length)?);
    let mask = dilate(&mask, StructuringElement::horizontal(cfg.se_length)?);
    let mask = fill_holes(&mask);
    let components = connected_components(&mask);
    // first component wins ties on area
    let coin = components
        .iter()
        .fold(None::<&Component>, |best, c| match best {
            Some(b) if b.area >= c.area => Some(b),
            _ => Some(c),
        })
        .ok_or(Error::Segmentation {
            stage: "connected_components",
        })?;

    let ch = coin.row_max - coin.row_min + 1;
    let cw = coin.col_max - coin.col_min + 1;
    let mut keep = vec![false; ch * cw];
    for &(r, c) in &coin.pixels {
        keep[(r - coin.row_min) * cw + (c - coin.col_min)] = true;
    }
    let crop = GrayImage::from_fn(ch, cw, |r, c| {
        if keep[r * cw + c] {
            img.get(r + coin.row_min, c + coin.col_min)
        } else {
            T::zero()
        }
    })?;
    resize_bilinear(&crop, cfg.normalized_size, cfg.normalized_size)
}
