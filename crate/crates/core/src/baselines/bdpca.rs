use crate::distances::FeatureMatrix;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::linalg::symmetric_eigen;
use crate::scalar::Scalar;

/// Mean image plus row and column projectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BdpcaModel<T> {
    pub(crate) height: usize,
    pub(crate) width: usize,
    /// Row-major `height × width` mean image.
    pub(crate) mean: Vec<T>,
    /// `k_r` orthonormal vectors of length `height`.
    pub(crate) row_proj: Vec<Vec<T>>,
    /// `k_c` orthonormal vectors of length `width`.
    pub(crate) col_proj: Vec<Vec<T>>,
}

impl<T: Scalar> BdpcaModel<T> {
    pub fn from_parts(
        height: usize,
        width: usize,
        mean: Vec<T>,
        row_proj: Vec<Vec<T>>,
        col_proj: Vec<Vec<T>>,
    ) -> Result<Self> {
        if mean.len() != height * width {
            return Err(Error::dim("BdpcaModel mean", height * width, mean.len()));
        }
        if let Some(v) = row_proj.iter().find(|v| v.len() != height) {
            return Err(Error::dim("BdpcaModel row projector", height, v.len()));
        }
        if let Some(v) = col_proj.iter().find(|v| v.len() != width) {
            return Err(Error::dim("BdpcaModel column projector", width, v.len()));
        }
        Ok(BdpcaModel {
            height,
            width,
            mean,
            row_proj,
            col_proj,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn row_projector(&self) -> &[Vec<T>] {
        &self.row_proj
    }

    pub fn col_projector(&self) -> &[Vec<T>] {
        &self.col_proj
    }

    pub fn k_r(&self) -> usize {
        self.row_proj.len()
    }

    pub fn k_c(&self) -> usize {
        self.col_proj.len()
    }
}

fn check_images<T: Scalar>(images: &[GrayImage<T>]) -> Result<(usize, usize)> {
    if images.len() < 2 {
        return Err(Error::invalid(format!(
            "BDPCA needs at least 2 images, got {}",
            images.len()
        )));
    }
    let (h, w) = (images[0].height(), images[0].width());
    if images.iter().any(|im| im.height() != h || im.width() != w) {
        return Err(Error::invalid("BDPCA training images differ in size"));
    }
    Ok((h, w))
}

fn mean_matrix<T: Scalar>(images: &[GrayImage<T>]) -> Vec<T> {
    let n = images[0].pixels().len();
    let mut mean = vec![T::zero(); n];
    for im in images {
        for (m, &p) in mean.iter_mut().zip(im.pixels()) {
            *m += p;
        }
    }
    let count = T::from_usize(images.len()).unwrap();
    mean.iter_mut().for_each(|m| *m /= count);
    mean
}

/// Row scatter `(1/(M·w)) Σ DDᵀ` (`h × h`) and column scatter
/// `(1/(M·h)) Σ DᵀD` (`w × w`), with `D = X − X̄`; both row-major.
pub fn bdpca_scatters<T: Scalar>(images: &[GrayImage<T>]) -> Result<(Vec<T>, Vec<T>)> {
    let (h, w) = check_images(images)?;
    let mean = mean_matrix(images);
    let mut s_r = vec![T::zero(); h * h];
    let mut s_c = vec![T::zero(); w * w];
    let mut d = vec![T::zero(); h * w];
    for im in images {
        for ((di, &p), &m) in d.iter_mut().zip(im.pixels()).zip(&mean) {
            *di = p - m;
        }
        for i in 0..h {
            for j in 0..=i {
                let s: T = (0..w).map(|c| d[i * w + c] * d[j * w + c]).sum();
                s_r[i * h + j] += s;
            }
        }
        for i in 0..w {
            for j in 0..=i {
                let s: T = (0..h).map(|r| d[r * w + i] * d[r * w + j]).sum();
                s_c[i * w + j] += s;
            }
        }
    }
    let m = T::from_usize(images.len()).unwrap();
    let norm_r = m * T::from_usize(w).unwrap();
    let norm_c = m * T::from_usize(h).unwrap();
    for i in 0..h {
        for j in 0..=i {
            let v = s_r[i * h + j] / norm_r;
            s_r[i * h + j] = v;
            s_r[j * h + i] = v;
        }
    }
    for i in 0..w {
        for j in 0..=i {
            let v = s_c[i * w + j] / norm_c;
            s_c[i * w + j] = v;
            s_c[j * w + i] = v;
        }
    }
    Ok((s_r, s_c))
}

/// Fits the mean and the top-`k_r` / top-`k_c` scatter eigenvectors.
pub fn bdpca_train<T: Scalar>(images: &[GrayImage<T>], k_r: usize, k_c: usize) -> Result<BdpcaModel<T>> {
    let (h, w) = check_images(images)?;
    if k_r == 0 || k_r > h {
        return Err(Error::invalid(format!("k_r = {k_r} must lie in 1..={h}")));
    }
    if k_c == 0 || k_c > w {
        return Err(Error::invalid(format!("k_c = {k_c} must lie in 1..={w}")));
    }
    let (s_r, s_c) = bdpca_scatters(images)?;
    let er = symmetric_eigen(&s_r, h)?;
    let ec = symmetric_eigen(&s_c, w)?;
    Ok(BdpcaModel {
        height: h,
        width: w,
        mean: mean_matrix(images),
        row_proj: er.vectors.into_iter().take(k_r).collect(),
        col_proj: ec.vectors.into_iter().take(k_c).collect(),
    })
}

/// `Y = W_rᵀ (X − X̄) W_c`, a `k_r × k_c` matrix.
pub fn bdpca_features<T: Scalar>(m: &BdpcaModel<T>, img: &GrayImage<T>) -> Result<FeatureMatrix<T>> {
    if img.height() != m.height {
        return Err(Error::dim("bdpca_features height", m.height, img.height()));
    }
    if img.width() != m.width {
        return Err(Error::dim("bdpca_features width", m.width, img.width()));
    }
    let (h, w) = (m.height, m.width);
    let d: Vec<T> = img.pixels().iter().zip(&m.mean).map(|(&p, &mu)| p - mu).collect();
    // left = W_rᵀ D  (k_r × w)
    let mut left = vec![T::zero(); m.k_r() * w];
    for (a, u) in m.row_proj.iter().enumerate() {
        for (r, &ur) in u.iter().enumerate().take(h) {
            if ur == T::zero() {
                continue;
            }
            for c in 0..w {
                left[a * w + c] += ur * d[r * w + c];
            }
        }
    }
    let mut y = Vec::with_capacity(m.k_r() * m.k_c());
    for a in 0..m.k_r() {
        let row = &left[a * w..(a + 1) * w];
        for v in &m.col_proj {
            y.push(row.iter().zip(v).map(|(&x, &vv)| x * vv).sum());
        }
    }
    FeatureMatrix::new(m.k_r(), m.k_c(), y)
}

/// `X̄ + W_r Y W_cᵀ`, row-major `height × width`; exact when both projectors
/// are complete.
pub fn bdpca_reconstruct<T: Scalar>(m: &BdpcaModel<T>, y: &FeatureMatrix<T>) -> Result<Vec<T>> {
    if y.rows() != m.k_r() || y.cols() != m.k_c() {
        return Err(Error::dim("bdpca_reconstruct", m.k_r() * m.k_c(), y.rows() * y.cols()));
    }
    let (h, w) = (m.height, m.width);
    let mut out = m.mean.clone();
    for (a, u) in m.row_proj.iter().enumerate() {
        for (b, v) in m.col_proj.iter().enumerate() {
            let coef = y.get(a, b);
            for r in 0..h {
                let cu = coef * u[r];
                for c in 0..w {
                    out[r * w + c] += cu * v[c];
                }
            }
        }
    }
    Ok(out)
}
