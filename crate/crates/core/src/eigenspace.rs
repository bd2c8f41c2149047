//! The PCA manifold: mean image, ordered orthonormal eigenbasis and
//! eigenvalue spectrum, with projection, reconstruction and the normalized
//! training reconstruction error used as an over-fitting diagnostic.
//!
//! The covariance `C = (1/M) Σ Φ_i Φ_iᵀ` (with `Φ_i = x_i − x̄`) is never
//! formed. Its non-zero eigenpairs are lifted from the `M × M` Gram matrix
//! `G = (1/M) ΦᵀΦ`: if `G v = λ v` then `u = Φ v / √(M λ)` is a unit
//! eigenvector of `C` with the same eigenvalue.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, symmetric_eigen};
use crate::scalar::{dot, sq_norm, Scalar};

/// Eigenvalues below this fraction of the leading one count as rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// A vectorized image with an optional class id.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector<T> {
    pub values: Vec<T>,
    pub label: Option<usize>,
}

impl<T: Scalar> ImageVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        ImageVector { values, label: None }
    }

    pub fn labelled(values: Vec<T>, label: usize) -> Self {
        ImageVector {
            values,
            label: Some(label),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<T: Scalar> From<crate::imaging::GrayImage<T>> for ImageVector<T> {
    fn from(img: crate::imaging::GrayImage<T>) -> Self {
        ImageVector::new(img.into_pixels())
    }
}

/// Projection weights of one image on the manifold basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T> {
    pub omega: Vec<T>,
}

impl<T: Scalar> Coefficients<T> {
    pub fn new(omega: Vec<T>) -> Self {
        Coefficients { omega }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// How many eigenvectors to retain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Exactly this many leading eigenvectors.
    Count(usize),
    /// The fewest leading eigenvectors whose eigenvalues cover this fraction
    /// of the total variance.
    Energy(f64),
}

/// Mean, basis and spectrum of a trained eigenspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold<T> {
    pub(crate) mean: Vec<T>,
    /// K rows of length N, descending eigenvalue order.
    pub(crate) basis: Vec<Vec<T>>,
    pub(crate) eigenvalues: Vec<T>,
    pub(crate) training_count: usize,
    /// Trace of the covariance, i.e. the variance over all directions.
    pub(crate) total_variance: T,
    /// Number of eigenvalues above the rank tolerance.
    pub(crate) rank: usize,
}

impl<T: Scalar> Manifold<T> {
    /// Reassembles a manifold from stored parts, checking shapes.
    pub fn from_parts(
        mean: Vec<T>,
        basis: Vec<Vec<T>>,
        eigenvalues: Vec<T>,
        training_count: usize,
        total_variance: T,
        rank: usize,
    ) -> Result<Self> {
        let n = mean.len();
        if basis.len() != eigenvalues.len() {
            return Err(Error::dim("Manifold basis/eigenvalues", basis.len(), eigenvalues.len()));
        }
        if let Some(u) = basis.iter().find(|u| u.len() != n) {
            return Err(Error::dim("Manifold basis vector", n, u.len()));
        }
        Ok(Manifold {
            mean,
            basis,
            eigenvalues,
            training_count,
            total_variance,
            rank,
        })
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn basis(&self) -> &[Vec<T>] {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// Vector length N.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Retained basis size K.
    pub fn k(&self) -> usize {
        self.basis.len()
    }

    /// Training sample count M.
    pub fn training_count(&self) -> usize {
        self.training_count
    }

    pub fn total_variance(&self) -> T {
        self.total_variance
    }

    /// Numerical rank of the training scatter.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Fraction of the total variance captured by the retained eigenvalues.
    pub fn energy_fraction(&self) -> T {
        if self.total_variance > T::zero() {
            self.eigenvalues.iter().copied().sum::<T>() / self.total_variance
        } else {
            T::one()
        }
    }

    /// The manifold restricted to its first `k` eigenvectors.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.k() {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-vector basis to {k}",
                self.k()
            )));
        }
        Ok(Manifold {
            mean: self.mean.clone(),
            basis: self.basis[..k].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            training_count: self.training_count,
            total_variance: self.total_variance,
            rank: self.rank,
        })
    }
}

/// Element-wise arithmetic mean.
pub fn mean_image<T: Scalar>(images: &[ImageVector<T>]) -> Result<ImageVector<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("mean of an empty image list"))?;
    let n = first.len();
    let mut acc = vec![T::zero(); n];
    for img in images {
        if img.len() != n {
            return Err(Error::dim("mean_image", n, img.len()));
        }
        for (a, &v) in acc.iter_mut().zip(&img.values) {
            *a += v;
        }
    }
    let m = T::from_usize(images.len()).expect("image count fits the scalar");
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(ImageVector::new(acc))
}

/// Builds the manifold from `M ≥ 2` training vectors.
///
/// Eigenvalues are recomputed from the final basis as
/// `λ_k = (1/M) Σ_n (u_kᵀΦ_n)²`. A count selection above `M − 1` or above the
/// numerical rank is refused rather than truncated.
pub fn build_manifold<T: Scalar>(images: &[ImageVector<T>], selection: Selection) -> Result<Manifold<T>> {
    let m = images.len();
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 training images, got {m}")));
    }
    let mean = mean_image(images)?.values;
    let n = mean.len();
    if n == 0 {
        return Err(Error::invalid("training vectors are empty"));
    }
    if let Selection::Count(k) = selection {
        if k > m - 1 || k > n {
            return Err(Error::invalid(format!(
                "requested {k} eigenvectors but at most min(M-1, N) = {} exist",
                (m - 1).min(n)
            )));
        }
    }
    if let Selection::Energy(e) = selection {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::invalid(format!("energy fraction {e} outside (0,1]")));
        }
    }

    let inv_m = T::one() / T::from_usize(m).expect("count fits the scalar");
    let phi: Vec<Vec<T>> = images
        .iter()
        .map(|x| x.values.iter().zip(&mean).map(|(&v, &mu)| v - mu).collect())
        .collect();

    let mut gram = vec![T::zero(); m * m];
    for i in 0..m {
        for j in 0..=i {
            let g = dot(&phi[i], &phi[j]) * inv_m;
            gram[i * m + j] = g;
            gram[j * m + i] = g;
        }
    }
    let eig = symmetric_eigen(&gram, m)?;
    let total_variance = eig.values.iter().fold(T::zero(), |a, &v| a + v.max(T::zero()));
    let lead = eig.values[0].max(T::zero());
    let cutoff = lead * T::of(RANK_TOLERANCE);
    let rank = if lead > T::zero() {
        eig.values.iter().take_while(|&&v| v > cutoff).count()
    } else {
        0
    };

    let k = match selection {
        Selection::Count(k) => {
            if k > rank {
                return Err(Error::invalid(format!(
                    "requested {k} eigenvectors but the training scatter has rank {rank}"
                )));
            }
            k
        }
        Selection::Energy(e) => {
            let target = total_variance * T::of(e);
            let mut acc = T::zero();
            let mut k = rank;
            for (i, &v) in eig.values.iter().take(rank).enumerate() {
                acc += v;
                // relative slack for rounding in the running sum
                if acc >= target * (T::one() - T::of(1e-12)) {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };

    // lift Gram eigenvectors to image space
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(k);
    for (lambda, v) in eig.values.iter().zip(&eig.vectors).take(k) {
        let mut u = vec![T::zero(); n];
        for (coef, p) in v.iter().zip(&phi) {
            for (ui, &pi) in u.iter_mut().zip(p) {
                *ui += *coef * pi;
            }
        }
        let scale = (T::from_usize(m).unwrap() * *lambda).sqrt();
        u.iter_mut().for_each(|x| *x /= scale);
        basis.push(u);
    }
    // one modified Gram-Schmidt pass removes the lift's rounding drift
    for i in 0..basis.len() {
        for j in 0..i {
            let d = dot(&basis[i], &basis[j]);
            let (head, tail) = basis.split_at_mut(i);
            for (x, &y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= d * y;
            }
        }
        let norm = sq_norm(&basis[i]).sqrt();
        basis[i].iter_mut().for_each(|x| *x /= norm);
        canonical_sign(&mut basis[i]);
    }

    let eigenvalues = basis
        .iter()
        .map(|u| phi.iter().map(|p| dot(u, p).powi(2)).sum::<T>() * inv_m)
        .collect();

    Ok(Manifold {
        mean,
        basis,
        eigenvalues,
        training_count: m,
        total_variance,
        rank,
    })
}

/// `ω_k = u_kᵀ(x − x̄)` for every retained eigenvector.
pub fn project<T: Scalar>(m: &Manifold<T>, x: &ImageVector<T>) -> Result<Coefficients<T>> {
    if x.len() != m.dim() {
        return Err(Error::dim("project", m.dim(), x.len()));
    }
    let centered: Vec<T> = x.values.iter().zip(&m.mean).map(|(&v, &mu)| v - mu).collect();
    Ok(Coefficients::new(m.basis.iter().map(|u| dot(u, &centered)).collect()))
}

/// `x̂ = x̄ + Σ_k ω_k u_k`.
pub fn reconstruct<T: Scalar>(m: &Manifold<T>, c: &Coefficients<T>) -> Result<ImageVector<T>> {
    if c.len() != m.k() {
        return Err(Error::dim("reconstruct", m.k(), c.len()));
    }
    let mut x = m.mean.clone();
    for (&w, u) in c.omega.iter().zip(&m.basis) {
        for (xi, &ui) in x.iter_mut().zip(u) {
            *xi += w * ui;
        }
    }
    Ok(ImageVector::new(x))
}

/// Normalized reconstruction error `Σ‖x_i − x̂_i‖² / Σ‖x_i − x̄‖²`.
///
/// Returns 0 when every image equals the mean.
pub fn train_mse<T: Scalar>(m: &Manifold<T>, images: &[ImageVector<T>]) -> Result<T> {
    if images.is_empty() {
        return Err(Error::invalid("train_mse needs at least one image"));
    }
    let mut num = T::zero();
    let mut den = T::zero();
    for x in images {
        let xhat = reconstruct(m, &project(m, x)?)?;
        num += x
            .values
            .iter()
            .zip(&xhat.values)
            .map(|(&a, &b)| (a - b).powi(2))
            .sum::<T>();
        den += x.values.iter().zip(&m.mean).map(|(&a, &b)| (a - b).powi(2)).sum::<T>();
    }
    if den == T::zero() {
        return Ok(T::zero());
    }
    Ok(num / den)
}
