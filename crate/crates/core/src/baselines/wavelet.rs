use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::scalar::Scalar;

/// One node of the wavelet-packet tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Subband<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Subband<T> {
    pub fn energy(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize(self.data.len()).unwrap()
    }

    /// Population standard deviation.
    fn std(&self) -> T {
        let mu = self.mean();
        let var = self.data.iter().map(|&v| (v - mu).powi(2)).sum::<T>() / T::from_usize(self.data.len()).unwrap();
        var.sqrt()
    }
}

/// Statistics of a depth-`level` Haar packet tree: approximation mean,
/// approximation std, then the std of each of the other `4^level − 1`
/// subbands.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFeature<T> {
    pub level: usize,
    pub values: Vec<T>,
}

/// One orthonormal 2-D Haar step. For each 2×2 block `[a b; c d]`:
/// `LL = (a+b+c+d)/2`, `LH = (a−b+c−d)/2`, `HL = (a+b−c−d)/2`,
/// `HH = (a−b−c+d)/2`. Returned in the order `[LL, LH, HL, HH]`.
pub fn haar_split<T: Scalar>(band: &Subband<T>) -> Result<[Subband<T>; 4]> {
    if !band.rows.is_multiple_of(2) || !band.cols.is_multiple_of(2) || band.rows == 0 || band.cols == 0 {
        return Err(Error::invalid(format!(
            "cannot halve a {}×{} subband",
            band.rows, band.cols
        )));
    }
    let (hr, hc) = (band.rows / 2, band.cols / 2);
    let half = T::of(0.5);
    let mut out: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(hr * hc));
    for r in 0..hr {
        for c in 0..hc {
            let at = |dr: usize, dc: usize| band.data[(2 * r + dr) * band.cols + 2 * c + dc];
            let (a, b, cc, d) = (at(0, 0), at(0, 1), at(1, 0), at(1, 1));
            out[0].push((a + b + cc + d) * half);
            out[1].push((a - b + cc - d) * half);
            out[2].push((a + b - cc - d) * half);
            out[3].push((a - b - cc + d) * half);
        }
    }
    Ok(out.map(|data| Subband {
        rows: hr,
        cols: hc,
        data,
    }))
}

/// Full packet decomposition: every subband is split at every level, giving
/// `4^level` leaves. Leaves are listed breadth-first, so index 0 is the pure
/// approximation and the children of node `i` occupy `4i..4i+4`.
pub fn wavelet_packet<T: Scalar>(img: &GrayImage<T>, level: usize) -> Result<Vec<Subband<T>>> {
    let div = 1usize << level;
    if !img.height().is_multiple_of(div) || !img.width().is_multiple_of(div) {
        return Err(Error::invalid(format!(
            "{}×{} image is not divisible by 2^{level}",
            img.height(),
            img.width()
        )));
    }
    let mut bands = vec![Subband {
        rows: img.height(),
        cols: img.width(),
        data: img.pixels().to_vec(),
    }];
    for _ in 0..level {
        let mut next = Vec::with_capacity(bands.len() * 4);
        for b in &bands {
            next.extend(haar_split(b)?);
        }
        bands = next;
    }
    Ok(bands)
}

/// Feature vector of length `4^level + 1` for `level` in `1..=4`.
pub fn wavelet_features<T: Scalar>(img: &GrayImage<T>, level: usize) -> Result<WaveletFeature<T>> {
    if !(1..=4).contains(&level) {
        return Err(Error::invalid(format!("wavelet level {level} outside 1..=4")));
    }
    let bands = wavelet_packet(img, level)?;
    let mut values = Vec::with_capacity(bands.len() + 1);
    values.push(bands[0].mean());
    values.extend(bands.iter().map(Subband::std));
    Ok(WaveletFeature { level, values })
}
