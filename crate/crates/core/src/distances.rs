//! Distances between feature vectors and feature matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How each feature vector is turned into a Gaussian for the Bhattacharyya
/// distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    /// Every vector shares `diag(λ + ε)`, with `λ` the gallery spectrum.
    #[default]
    SharedSpectrum,
    /// Each vector `v` carries its own `diag(v² + ε)`.
    PerVectorDiag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovModel<T> {
    kind: CovKind,
    epsilon: T,
    spectrum: Option<Vec<T>>,
}

impl<T: Scalar> CovModel<T> {
    /// Shared diagonal covariance. `epsilon` defaults to
    /// `1e-6 · max(max λ, 1)`.
    pub fn shared_spectrum(spectrum: Vec<T>, epsilon: Option<T>) -> Result<Self> {
        if let Some(bad) = spectrum.iter().find(|l| !(**l >= T::zero()) || !l.is_finite()) {
            return Err(Error::invalid(format!(
                "spectrum entry {bad} must be finite and non-negative"
            )));
        }
        let epsilon = match epsilon {
            Some(e) => e,
            None => default_epsilon(&spectrum),
        };
        Self::check_epsilon(epsilon)?;
        Ok(CovModel {
            kind: CovKind::SharedSpectrum,
            epsilon,
            spectrum: Some(spectrum),
        })
    }

    pub fn per_vector_diag(epsilon: T) -> Result<Self> {
        Self::check_epsilon(epsilon)?;
        Ok(CovModel {
            kind: CovKind::PerVectorDiag,
            epsilon,
            spectrum: None,
        })
    }

    fn check_epsilon(epsilon: T) -> Result<()> {
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(())
    }

    pub fn kind(&self) -> CovKind {
        self.kind
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn spectrum(&self) -> Option<&[T]> {
        self.spectrum.as_deref()
    }
}

/// `1e-6 · max(max spectrum, 1)`.
pub fn default_epsilon<T: Scalar>(spectrum: &[T]) -> T {
    let top = spectrum.iter().fold(T::one(), |m, &v| m.max(v));
    T::of(1e-6) * top
}

/// Bhattacharyya distance between two Gaussians centred at `a` and `b`,
/// with diagonal covariances given by `cov`:
///
/// `D = ⅛ (a−b)ᵀ P⁻¹ (a−b) + ½ ln(det P / √(det Σa · det Σb))`,
/// `P = (Σa + Σb) / 2`.
///
/// Under the shared spectrum the log term vanishes and the distance is an
/// eighth of the squared Mahalanobis distance.
pub fn bhattacharyya<T: Scalar>(a: &[T], b: &[T], cov: &CovModel<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim("bhattacharyya", a.len(), b.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("bhattacharyya input contains non-finite values"));
    }
    let eighth = T::of(0.125);
    let half = T::of(0.5);
    let eps = cov.epsilon;
    match cov.kind {
        CovKind::SharedSpectrum => {
            let spectrum = cov
                .spectrum
                .as_deref()
                .ok_or_else(|| Error::invalid("shared-spectrum model without a spectrum"))?;
            if spectrum.len() != a.len() {
                return Err(Error::dim("bhattacharyya spectrum", a.len(), spectrum.len()));
            }
            let quad = a
                .iter()
                .zip(b)
                .zip(spectrum)
                .fold(T::zero(), |acc, ((&x, &y), &l)| acc + (x - y).powi(2) / (l + eps));
            Ok(eighth * quad)
        }
        CovKind::PerVectorDiag => {
            let mut quad = T::zero();
            let mut log_term = T::zero();
            for (&x, &y) in a.iter().zip(b) {
                let sa = x * x + eps;
                let sb = y * y + eps;
                let p = (sa + sb) * half;
                quad += (x - y).powi(2) / p;
                log_term += p.ln() - half * (sa.ln() + sb.ln());
            }
            // the log term is non-negative analytically; clamp rounding residue
            Ok((eighth * quad + half * log_term).max(T::zero()))
        }
    }
}

/// `‖a − b‖₂`.
pub fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim("euclidean", a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y).powi(2))
        .sqrt())
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("feature matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("FeatureMatrix::new", rows * cols, data.len()));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    /// A column vector.
    pub fn column(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(n, 1, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

/// Assembled matrix distance: column norms of `a − b` combined by a p-norm,
/// `(Σ_j (Σ_i (a_ij − b_ij)²)^(p/2))^(1/p)`.
pub fn amd<T: Scalar>(a: &FeatureMatrix<T>, b: &FeatureMatrix<T>, p: T) -> Result<T> {
    if a.rows != b.rows {
        return Err(Error::dim("amd rows", a.rows, b.rows));
    }
    if a.cols != b.cols {
        return Err(Error::dim("amd cols", a.cols, b.cols));
    }
    if !(p >= T::one()) || !p.is_finite() {
        return Err(Error::invalid(format!("amd exponent must be >= 1, got {p}")));
    }
    let half_p = p / T::of(2.0);
    let mut total = T::zero();
    for c in 0..a.cols {
        let col_sq = (0..a.rows).fold(T::zero(), |acc, r| acc + (a.get(r, c) - b.get(r, c)).powi(2));
        total += col_sq.powf(half_p);
    }
    Ok(total.powf(T::one() / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bhattacharyya_identity_covariance() {
        let cov = CovModel::shared_spectrum(vec![1.0, 1.0], Some(1e-300)).unwrap();
        let d = bhattacharyya(&[2.0, 0.0], &[0.0, 0.0], &cov).unwrap();
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
        assert_eq!(bhattacharyya(&[0.3, 0.2], &[0.3, 0.2], &cov).unwrap(), 0.0);
    }

    #[test]
    fn per_vector_diag_one_dimension() {
        // a = 0 ⇒ σa² = ε = 1;  b = 2 ⇒ σb² = 4 + 1 = 5;  P = 3
        // D = (1/8)(4/3) + (1/2) ln(3 / √5)
        let cov = CovModel::per_vector_diag(1.0).unwrap();
        let d = bhattacharyya(&[0.0], &[2.0], &cov).unwrap();
        let want = 4.0 / 24.0 + 0.5 * (3.0 / 5f64.sqrt()).ln();
        assert_abs_diff_eq!(d, want, epsilon = 1e-15);
        assert_eq!(bhattacharyya(&[0.7, -1.0], &[0.7, -1.0], &cov).unwrap(), 0.0);
    }

    #[test]
    fn bhattacharyya_errors() {
        let cov = CovModel::shared_spectrum(vec![1.0], None).unwrap();
        assert!(matches!(
            bhattacharyya(&[1.0], &[1.0, 2.0], &cov),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            bhattacharyya(&[1.0, 2.0], &[1.0, 2.0], &cov),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            bhattacharyya(&[f64::NAN], &[1.0], &cov),
            Err(Error::InvalidParameter(_))
        ));
        assert!(CovModel::<f64>::per_vector_diag(0.0).is_err());
        assert!(CovModel::shared_spectrum(vec![-1.0], None).is_err());
    }

    #[test]
    fn default_epsilon_scales_with_spectrum() {
        assert_eq!(default_epsilon(&[0.5, 0.1]), 1e-6);
        assert_abs_diff_eq!(default_epsilon(&[40.0, 0.1]), 4e-5, epsilon = 1e-18);
        let cov = CovModel::shared_spectrum(vec![40.0], None).unwrap();
        assert_abs_diff_eq!(cov.epsilon(), 4e-5, epsilon = 1e-18);
    }

    #[test]
    fn euclidean_cases() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert!(euclidean(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn amd_cases() {
        let z = FeatureMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        let col = FeatureMatrix::new(2, 2, vec![3.0, 0.0, 4.0, 0.0]).unwrap();
        assert_abs_diff_eq!(amd(&col, &z, 2.0).unwrap(), 5.0, epsilon = 1e-15);
        let eye = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(amd(&eye, &z, 1.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(amd(&eye, &eye, 1.0).unwrap(), 0.0);
        let other = FeatureMatrix::new(1, 4, vec![0.0; 4]).unwrap();
        assert!(matches!(amd(&eye, &other, 1.0), Err(Error::Dimension { .. })));
        assert!(amd(&eye, &z, 0.5).is_err());
    }
}
