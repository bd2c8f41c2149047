//! One nearest-neighbour classifier over four feature extractors: the
//! eigenspace projection, BDPCA feature matrices, Haar packet statistics and
//! Harris corner intensities.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baselines::{bdpca_features, bdpca_train, harris_features, wavelet_features, BdpcaModel, HarrisConfig};
use crate::dataset::LabeledDataset;
use crate::distances::{amd, bhattacharyya, euclidean, CovKind, CovModel, FeatureMatrix};
use crate::eigenspace::{build_manifold, project, ImageVector, Manifold, Selection};
use crate::error::{Error, Result};
use crate::imaging::{extract_roi, GrayImage, PreprocessConfig};
use crate::scalar::Scalar;

pub const DEFAULT_K: usize = 112;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Eigencoin,
    Bdpca,
    Wavelet,
    Harris,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::Eigencoin,
        MethodKind::Bdpca,
        MethodKind::Wavelet,
        MethodKind::Harris,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Eigencoin => "eigencoin",
            MethodKind::Bdpca => "bdpca",
            MethodKind::Wavelet => "wavelet",
            MethodKind::Harris => "harris",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        MethodKind::ALL.into_iter().find(|m| m.name() == name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown method `{name}` (expected eigencoin, bdpca, wavelet or harris)"
            ))
        })
    }

    /// Parameters used when a method is named without any.
    pub fn default_config(self) -> MethodConfig {
        match self {
            MethodKind::Eigencoin => MethodConfig::Eigencoin { k: None, energy: None },
            MethodKind::Bdpca => MethodConfig::Bdpca {
                k_r: default_k_r(),
                k_c: default_k_c(),
            },
            MethodKind::Wavelet => MethodConfig::Wavelet { level: default_level() },
            MethodKind::Harris => MethodConfig::Harris(HarrisConfig::default()),
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_k_r() -> usize {
    15
}
fn default_k_c() -> usize {
    35
}
fn default_level() -> usize {
    4
}
fn default_amd_p() -> f64 {
    1.0
}

/// Feature extractor and its parameters, tagged by `"method"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    /// Either `k` or `energy`; neither means `k = 112`.
    Eigencoin {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        energy: Option<f64>,
    },
    Bdpca {
        #[serde(default = "default_k_r")]
        k_r: usize,
        #[serde(default = "default_k_c")]
        k_c: usize,
    },
    Wavelet {
        #[serde(default = "default_level")]
        level: usize,
    },
    Harris(HarrisConfig),
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodKind::Eigencoin.default_config()
    }
}

impl MethodConfig {
    pub fn kind(&self) -> MethodKind {
        match self {
            MethodConfig::Eigencoin { .. } => MethodKind::Eigencoin,
            MethodConfig::Bdpca { .. } => MethodKind::Bdpca,
            MethodConfig::Wavelet { .. } => MethodKind::Wavelet,
            MethodConfig::Harris(_) => MethodKind::Harris,
        }
    }

    pub fn selection(&self) -> Option<Selection> {
        match *self {
            MethodConfig::Eigencoin { k: Some(k), .. } => Some(Selection::Count(k)),
            MethodConfig::Eigencoin { energy: Some(e), .. } => Some(Selection::Energy(e)),
            MethodConfig::Eigencoin { .. } => Some(Selection::Count(DEFAULT_K)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MethodConfig::Eigencoin {
                k: Some(_),
                energy: Some(_),
            } => Err(Error::invalid("eigencoin takes either `k` or `energy`, not both")),
            MethodConfig::Eigencoin { .. } => Ok(()),
            MethodConfig::Bdpca { k_r, k_c } if k_r == 0 || k_c == 0 => {
                Err(Error::invalid("bdpca k_r and k_c must be positive"))
            }
            MethodConfig::Bdpca { .. } => Ok(()),
            MethodConfig::Wavelet { level } if !(1..=4).contains(&level) => {
                Err(Error::invalid(format!("wavelet level {level} outside 1..=4")))
            }
            MethodConfig::Wavelet { .. } => Ok(()),
            MethodConfig::Harris(h) => h.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Bhattacharyya,
    Euclidean,
    Amd,
}

/// Distance settings. An absent `distance` means AMD for BDPCA and
/// Bhattacharyya for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceKind>,
    #[serde(default)]
    pub cov_model: CovKind,
    /// Bhattacharyya regularizer; defaults to `1e-6 · max(max λ, 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_amd_p")]
    pub amd_p: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig {
            distance: None,
            cov_model: CovKind::default(),
            epsilon: None,
            amd_p: default_amd_p(),
        }
    }
}

impl DistanceConfig {
    pub fn resolved(&self, method: MethodKind) -> DistanceKind {
        self.distance.unwrap_or(match method {
            MethodKind::Bdpca => DistanceKind::Amd,
            _ => DistanceKind::Bhattacharyya,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::invalid(format!("epsilon must be positive, got {e}")));
            }
        }
        if !(self.amd_p >= 1.0) || !self.amd_p.is_finite() {
            return Err(Error::invalid(format!("amd_p must be >= 1, got {}", self.amd_p)));
        }
        Ok(())
    }
}

/// Rejection threshold; serialized as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(pub f64);

impl Threshold {
    pub const INFINITE: Threshold = Threshold(f64::INFINITY);

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::INFINITE
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let value = match Repr::deserialize(d)? {
            Repr::Num(v) => v,
            Repr::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => f64::INFINITY,
            Repr::Text(s) => {
                return Err(serde::de::Error::custom(format!(
                    "threshold `{s}` is neither a number nor \"inf\""
                )))
            }
        };
        if value.is_nan() || value < 0.0 {
            return Err(serde::de::Error::custom(format!(
                "threshold {value} must be non-negative"
            )));
        }
        Ok(Threshold(value))
    }
}

/// Complete classifier configuration, serialized flat:
/// `{"method":…, method params…, "distance":…, distance params…, "threshold":…}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassifierConfig {
    #[serde(flatten)]
    pub method: MethodConfig,
    #[serde(flatten)]
    pub distance: DistanceConfig,
    #[serde(default)]
    pub threshold: Threshold,
}

impl ClassifierConfig {
    pub fn new(method: MethodConfig) -> Self {
        ClassifierConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        self.distance.validate()?;
        if self.threshold.0.is_nan() || self.threshold.0 < 0.0 {
            return Err(Error::invalid(format!(
                "threshold {} must be non-negative",
                self.threshold.0
            )));
        }
        Ok(())
    }
}

/// The trained part of a method.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodModel<T> {
    Eigencoin(Manifold<T>),
    Bdpca(BdpcaModel<T>),
    Wavelet { level: usize },
    Harris(HarrisConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Class(usize),
    Rejected,
}

impl Assignment {
    pub fn class(self) -> Option<usize> {
        match self {
            Assignment::Class(c) => Some(c),
            Assignment::Rejected => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub label: Assignment,
    /// Distance to the nearest gallery entry.
    pub distance: T,
    /// Distance to the nearest gallery entry of any other class.
    pub runner_up: Option<T>,
}

/// A fitted classifier: trained method, gallery of training features and the
/// distance used to compare against it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    pub(crate) config: ClassifierConfig,
    pub(crate) preprocess: Option<PreprocessConfig>,
    pub(crate) class_names: Vec<String>,
    pub(crate) method: MethodModel<T>,
    /// Row-major `(rows, cols)` of one feature; vectors are `(len, 1)`.
    pub(crate) feature_shape: (usize, usize),
    pub(crate) gallery: Vec<Vec<T>>,
    pub(crate) gallery_labels: Vec<usize>,
    pub(crate) cov: Option<CovModel<T>>,
}

impl<T: Scalar> ClassifierModel<T> {
    /// Fits on the training split of `train`. When `preprocess` is given,
    /// every image (training and query) first goes through `extract_roi`.
    pub fn fit(
        train: &LabeledDataset<T>,
        cfg: &ClassifierConfig,
        preprocess: Option<PreprocessConfig>,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(p) = &preprocess {
            p.validate()?;
        }
        for (name, &n) in train.class_names().iter().zip(&train.train_counts()) {
            if n == 0 {
                return Err(Error::InvalidDataset(format!("class `{name}` has no training images")));
            }
        }
        let items = train.train_items();
        let images = items
            .par_iter()
            .map(|(img, _)| match &preprocess {
                Some(p) => extract_roi(img, p),
                None => Ok((*img).clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = items.iter().map(|&(_, l)| l).collect();
        Self::fit_normalized(&images, &labels, train.class_names(), cfg, preprocess)
    }

    /// Fits on images that are already normalized.
    pub fn fit_normalized(
        images: &[GrayImage<T>],
        labels: &[usize],
        class_names: Vec<String>,
        cfg: &ClassifierConfig,
        preprocess: Option<PreprocessConfig>,
    ) -> Result<Self> {
        cfg.validate()?;
        if images.len() != labels.len() {
            return Err(Error::dim("fit labels", images.len(), labels.len()));
        }
        if images.is_empty() {
            return Err(Error::InvalidDataset("no training images".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidDataset(format!("label {l} without a class name")));
        }
        let method = match &cfg.method {
            MethodConfig::Eigencoin { .. } => {
                let vectors: Vec<ImageVector<T>> =
                    images.iter().map(|i| ImageVector::new(i.pixels().to_vec())).collect();
                let selection = cfg.method.selection().expect("eigencoin has a selection");
                MethodModel::Eigencoin(build_manifold(&vectors, selection)?)
            }
            MethodConfig::Bdpca { k_r, k_c } => MethodModel::Bdpca(bdpca_train(images, *k_r, *k_c)?),
            MethodConfig::Wavelet { level } => MethodModel::Wavelet { level: *level },
            MethodConfig::Harris(h) => MethodModel::Harris(*h),
        };
        Self::assemble(cfg.clone(), preprocess, class_names, method, images, labels)
    }

    /// Builds the gallery for an already trained method.
    pub fn assemble(
        config: ClassifierConfig,
        preprocess: Option<PreprocessConfig>,
        class_names: Vec<String>,
        method: MethodModel<T>,
        images: &[GrayImage<T>],
        labels: &[usize],
    ) -> Result<Self> {
        let gallery = images
            .par_iter()
            .map(|img| extract(&method, img))
            .collect::<Result<Vec<_>>>()?;
        Self::with_gallery(config, preprocess, class_names, method, gallery, labels.to_vec())
    }

    /// Wraps precomputed gallery features.
    pub fn with_gallery(
        config: ClassifierConfig,
        preprocess: Option<PreprocessConfig>,
        class_names: Vec<String>,
        method: MethodModel<T>,
        gallery: Vec<Vec<T>>,
        gallery_labels: Vec<usize>,
    ) -> Result<Self> {
        if gallery.is_empty() {
            return Err(Error::InvalidDataset("empty gallery".into()));
        }
        if gallery.len() != gallery_labels.len() {
            return Err(Error::dim("gallery labels", gallery.len(), gallery_labels.len()));
        }
        let feature_shape = feature_shape(&method);
        let len = feature_shape.0 * feature_shape.1;
        if let Some(f) = gallery.iter().find(|f| f.len() != len) {
            return Err(Error::dim("gallery feature", len, f.len()));
        }
        let cov = match config.distance.resolved(config.method.kind()) {
            DistanceKind::Bhattacharyya => {
                let epsilon = config.distance.epsilon.map(T::of);
                Some(match config.distance.cov_model {
                    CovKind::SharedSpectrum => {
                        let spectrum = match &method {
                            MethodModel::Eigencoin(m) => m.eigenvalues().to_vec(),
                            _ => coordinate_variance(&gallery),
                        };
                        CovModel::shared_spectrum(spectrum, epsilon)?
                    }
                    CovKind::PerVectorDiag => CovModel::per_vector_diag(epsilon.unwrap_or_else(|| T::of(1e-6)))?,
                })
            }
            _ => None,
        };
        Ok(ClassifierModel {
            config,
            preprocess,
            class_names,
            method,
            feature_shape,
            gallery,
            gallery_labels,
            cov,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn preprocess(&self) -> Option<&PreprocessConfig> {
        self.preprocess.as_ref()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn method(&self) -> &MethodModel<T> {
        &self.method
    }

    pub fn manifold(&self) -> Option<&Manifold<T>> {
        match &self.method {
            MethodModel::Eigencoin(m) => Some(m),
            _ => None,
        }
    }

    pub fn gallery(&self) -> &[Vec<T>] {
        &self.gallery
    }

    pub fn gallery_labels(&self) -> &[usize] {
        &self.gallery_labels
    }

    pub fn feature_shape(&self) -> (usize, usize) {
        self.feature_shape
    }

    pub fn cov_model(&self) -> Option<&CovModel<T>> {
        self.cov.as_ref()
    }

    pub fn distance_kind(&self) -> DistanceKind {
        self.config.distance.resolved(self.config.method.kind())
    }

    /// Same gallery and method, different rejection threshold.
    pub fn with_threshold(&self, threshold: Threshold) -> Self {
        let mut m = self.clone();
        m.config.threshold = threshold;
        m
    }

    /// The query's feature, after preprocessing when the model has it.
    pub fn features(&self, img: &GrayImage<T>) -> Result<Vec<T>> {
        let normalized;
        let img = match &self.preprocess {
            Some(p) => {
                normalized = extract_roi(img, p).map_err(|e| stage("preprocess", e))?;
                &normalized
            }
            None => img,
        };
        extract(&self.method, img).map_err(|e| stage("features", e))
    }

    pub fn distance(&self, a: &[T], b: &[T]) -> Result<T> {
        match self.distance_kind() {
            DistanceKind::Bhattacharyya => {
                bhattacharyya(a, b, self.cov.as_ref().expect("bhattacharyya model has a covariance"))
            }
            DistanceKind::Euclidean => euclidean(a, b),
            DistanceKind::Amd => {
                let (r, c) = self.feature_shape;
                let a = FeatureMatrix::new(r, c, a.to_vec())?;
                let b = FeatureMatrix::new(r, c, b.to_vec())?;
                amd(&a, &b, T::of(self.config.distance.amd_p))
            }
        }
    }

    pub fn predict(&self, img: &GrayImage<T>) -> Result<Prediction<T>> {
        let f = self.features(img)?;
        self.predict_features(&f)
    }

    /// Nearest gallery entry; ties go to the lowest class id, then the
    /// earliest gallery entry. Rejected iff the best distance reaches the
    /// threshold.
    pub fn predict_features(&self, f: &[T]) -> Result<Prediction<T>> {
        let dists = self
            .gallery
            .iter()
            .map(|g| self.distance(f, g))
            .collect::<Result<Vec<T>>>()
            .map_err(|e| stage("distance", e))?;
        if let Some(d) = dists.iter().find(|d| d.is_nan()) {
            return Err(stage("distance", Error::invalid(format!("distance evaluated to {d}"))));
        }
        let mut best = 0;
        for i in 1..dists.len() {
            let (d, l) = (dists[i], self.gallery_labels[i]);
            let (bd, bl) = (dists[best], self.gallery_labels[best]);
            if d < bd || (d == bd && l < bl) {
                best = i;
            }
        }
        let winner = self.gallery_labels[best];
        let runner_up = dists
            .iter()
            .zip(&self.gallery_labels)
            .filter(|(_, &l)| l != winner)
            .map(|(&d, _)| d)
            .fold(None, |acc: Option<T>, d| Some(acc.map_or(d, |a| a.min(d))));
        let distance = dists[best];
        let label = if distance.to_f64_lossy() >= self.config.threshold.0 {
            Assignment::Rejected
        } else {
            Assignment::Class(winner)
        };
        Ok(Prediction {
            label,
            distance,
            runner_up,
        })
    }

    /// `predict` over a batch, in input order; one failure does not stop the
    /// rest.
    pub fn predict_batch(&self, images: &[GrayImage<T>]) -> Vec<Result<Prediction<T>>> {
        images.par_iter().map(|img| self.predict(img)).collect()
    }
}

fn stage(stage: &'static str, e: Error) -> Error {
    match e {
        Error::Prediction { .. } => e,
        other => Error::Prediction {
            stage,
            source: Box::new(other),
        },
    }
}

fn feature_shape<T: Scalar>(method: &MethodModel<T>) -> (usize, usize) {
    match method {
        MethodModel::Eigencoin(m) => (m.k(), 1),
        MethodModel::Bdpca(b) => (b.k_r(), b.k_c()),
        MethodModel::Wavelet { level } => ((1 << (2 * level)) + 1, 1),
        MethodModel::Harris(h) => (h.top_count, 1),
    }
}

/// Flattened feature of a normalized image.
pub fn extract<T: Scalar>(method: &MethodModel<T>, img: &GrayImage<T>) -> Result<Vec<T>> {
    match method {
        MethodModel::Eigencoin(m) => Ok(project(m, &ImageVector::new(img.pixels().to_vec()))?.omega),
        MethodModel::Bdpca(b) => Ok(bdpca_features(b, img)?.into_data()),
        MethodModel::Wavelet { level } => Ok(wavelet_features(img, *level)?.values),
        MethodModel::Harris(h) => Ok(harris_features(img, h)?.values),
    }
}

/// Population variance of each feature coordinate over the gallery.
pub fn coordinate_variance<T: Scalar>(gallery: &[Vec<T>]) -> Vec<T> {
    let n = T::from_usize(gallery.len()).expect("count fits the scalar");
    let len = gallery.first().map_or(0, Vec::len);
    (0..len)
        .map(|j| {
            let mean = gallery.iter().map(|g| g[j]).sum::<T>() / n;
            gallery.iter().map(|g| (g[j] - mean).powi(2)).sum::<T>() / n
        })
        .collect()
}
