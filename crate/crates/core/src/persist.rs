//! Model files.
//!
//! Layout: the 8-byte magic `EIGCOIN1`, a little-endian `u64` manifest length,
//! the JSON manifest, then the binary sections back to back in manifest
//! order. Sections are row-major, little-endian, in the scalar type named by
//! the manifest (`uint64` for labels).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BdpcaModel;
use crate::classify::{ClassifierConfig, ClassifierModel, MethodConfig, MethodModel};
use crate::distances::{CovKind, CovModel};
use crate::eigenspace::Manifold;
use crate::error::{Error, Result};
use crate::imaging::PreprocessConfig;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"EIGCOIN1";
pub const FORMAT_VERSION: u32 = 1;
const LABEL_DTYPE: &str = "uint64";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Manifold,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

impl SectionInfo {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }

    fn byte_len(&self) -> Result<usize> {
        let width = match self.dtype.as_str() {
            "float32" => 4,
            "float64" | LABEL_DTYPE => 8,
            other => {
                return Err(Error::Format(format!(
                    "unknown dtype `{other}` in section `{}`",
                    self.name
                )))
            }
        };
        Ok(self.len() * width)
    }
}

/// JSON header of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub byte_order: String,
    pub scalar: String,
    pub layout: String,
    /// Vector length of a normalized image.
    #[serde(rename = "N")]
    pub n: Option<usize>,
    /// Training image count.
    #[serde(rename = "M")]
    pub m: usize,
    /// Retained eigenvectors.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub normalized_size: Option<usize>,
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierConfig>,
    #[serde(default)]
    pub class_names: Vec<String>,
    /// Numerical rank of the eigenspace training scatter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Image height and width the BDPCA projectors expect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bdpca_image: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_shape: Option<(usize, usize)>,
    pub sections: Vec<SectionInfo>,
}

struct Writer {
    sections: Vec<SectionInfo>,
    payload: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            sections: Vec::new(),
            payload: Vec::new(),
        }
    }

    fn scalars<'a, T: Scalar>(&mut self, name: &str, shape: Vec<usize>, data: impl IntoIterator<Item = &'a T>) {
        let start = self.payload.len();
        for &v in data {
            v.write_le(&mut self.payload);
        }
        debug_assert_eq!(self.payload.len() - start, shape.iter().product::<usize>() * T::BYTES);
        self.sections.push(SectionInfo {
            name: name.into(),
            dtype: T::DTYPE.into(),
            shape,
        });
    }

    fn labels(&mut self, name: &str, labels: &[usize]) {
        for &l in labels {
            self.payload.extend_from_slice(&(l as u64).to_le_bytes());
        }
        self.sections.push(SectionInfo {
            name: name.into(),
            dtype: LABEL_DTYPE.into(),
            shape: vec![labels.len()],
        });
    }

    fn manifold<T: Scalar>(&mut self, m: &Manifold<T>) {
        self.scalars("mean", vec![m.dim()], m.mean());
        self.scalars("basis", vec![m.k(), m.dim()], m.basis().iter().flatten());
        self.scalars("eigenvalues", vec![m.k()], m.eigenvalues());
        self.scalars("total_variance", vec![1], [m.total_variance()].iter());
    }
}

fn encode(manifest: &ModelManifest, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

fn base_manifest<T: Scalar>(kind: ModelKind, sections: Vec<SectionInfo>) -> ModelManifest {
    ModelManifest {
        format_version: FORMAT_VERSION,
        kind,
        byte_order: "little-endian".into(),
        scalar: T::DTYPE.into(),
        layout: "row-major".into(),
        n: None,
        m: 0,
        k: None,
        normalized_size: None,
        preprocess: None,
        classifier: None,
        class_names: Vec::new(),
        rank: None,
        bdpca_image: None,
        feature_shape: None,
        sections,
    }
}

/// Serializes a bare manifold.
pub fn manifold_to_bytes<T: Scalar>(m: &Manifold<T>, preprocess: Option<PreprocessConfig>) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.manifold(m);
    let mut manifest = base_manifest::<T>(ModelKind::Manifold, w.sections);
    manifest.n = Some(m.dim());
    manifest.m = m.training_count();
    manifest.k = Some(m.k());
    manifest.rank = Some(m.rank());
    manifest.preprocess = preprocess;
    manifest.normalized_size = preprocess.map(|p| p.normalized_size);
    encode(&manifest, &w.payload)
}

pub fn classifier_to_bytes<T: Scalar>(model: &ClassifierModel<T>) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    let mut n = None;
    let mut k = None;
    let mut rank = None;
    let mut bdpca_image = None;
    match &model.method {
        MethodModel::Eigencoin(m) => {
            w.manifold(m);
            n = Some(m.dim());
            k = Some(m.k());
            rank = Some(m.rank());
        }
        MethodModel::Bdpca(b) => {
            w.scalars("bdpca_mean", vec![b.height(), b.width()], b.mean());
            w.scalars(
                "bdpca_row_proj",
                vec![b.k_r(), b.height()],
                b.row_projector().iter().flatten(),
            );
            w.scalars(
                "bdpca_col_proj",
                vec![b.k_c(), b.width()],
                b.col_projector().iter().flatten(),
            );
            n = Some(b.height() * b.width());
            bdpca_image = Some((b.height(), b.width()));
        }
        MethodModel::Wavelet { .. } | MethodModel::Harris(_) => {}
    }
    let (fr, fc) = model.feature_shape;
    w.scalars(
        "gallery_features",
        vec![model.gallery.len(), fr * fc],
        model.gallery.iter().flatten(),
    );
    w.labels("gallery_labels", &model.gallery_labels);
    if let Some(cov) = &model.cov {
        if let Some(spectrum) = cov.spectrum() {
            w.scalars("spectrum", vec![spectrum.len()], spectrum);
        }
        w.scalars("cov_epsilon", vec![1], [cov.epsilon()].iter());
    }
    let mut manifest = base_manifest::<T>(ModelKind::Classifier, w.sections);
    manifest.n = n.or_else(|| model.preprocess.map(|p| p.normalized_size * p.normalized_size));
    manifest.m = model.gallery.len();
    manifest.k = k;
    manifest.rank = rank;
    manifest.bdpca_image = bdpca_image;
    manifest.normalized_size = model.preprocess.map(|p| p.normalized_size);
    manifest.preprocess = model.preprocess;
    manifest.classifier = Some(model.config.clone());
    manifest.class_names = model.class_names.clone();
    manifest.feature_shape = Some(model.feature_shape);
    encode(&manifest, &w.payload)
}

/// Parsed file: manifest plus raw section bytes by name.
struct Decoded<'a> {
    manifest: ModelManifest,
    sections: BTreeMap<String, (&'a SectionInfo, &'a [u8])>,
}

/// Reads the manifest of a model file without decoding its sections.
pub fn read_manifest(bytes: &[u8]) -> Result<ModelManifest> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing EIGCOIN1 magic".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: ModelManifest = serde_json::from_slice(json)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.byte_order != "little-endian" || manifest.layout != "row-major" {
        return Err(Error::Format(format!(
            "unsupported byte order `{}` or layout `{}`",
            manifest.byte_order, manifest.layout
        )));
    }
    Ok(manifest)
}

fn decode<'a, T: Scalar>(bytes: &'a [u8], manifest: &'a ModelManifest) -> Result<Decoded<'a>> {
    if manifest.scalar != T::DTYPE {
        return Err(Error::Format(format!(
            "model stores {} but {} was requested",
            manifest.scalar,
            T::DTYPE
        )));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let mut offset = 16 + json_len;
    let mut sections = BTreeMap::new();
    for s in &manifest.sections {
        let n = s.byte_len()?;
        let data = bytes
            .get(offset..offset + n)
            .ok_or_else(|| Error::Format(format!("section `{}` is truncated", s.name)))?;
        offset += n;
        sections.insert(s.name.clone(), (s, data));
    }
    if offset != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last section",
            bytes.len() - offset
        )));
    }
    Ok(Decoded {
        manifest: manifest.clone(),
        sections,
    })
}

impl Decoded<'_> {
    fn raw(&self, name: &str) -> Result<(&SectionInfo, &[u8])> {
        self.sections
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))
    }

    fn scalars<T: Scalar>(&self, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<T>)> {
        let (info, data) = self.raw(name)?;
        if info.dtype != T::DTYPE || info.shape.len() != rank {
            return Err(Error::Format(format!(
                "section `{name}` has dtype {} and shape {:?}",
                info.dtype, info.shape
            )));
        }
        Ok((
            info.shape.clone(),
            data.chunks_exact(T::BYTES).map(T::read_le).collect(),
        ))
    }

    fn vector<T: Scalar>(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.scalars(name, 1)?.1)
    }

    fn vector_from_matrix<T: Scalar>(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.scalars(name, 2)?.1)
    }

    fn rows<T: Scalar>(&self, name: &str) -> Result<Vec<Vec<T>>> {
        let (shape, flat) = self.scalars::<T>(name, 2)?;
        if shape[1] == 0 {
            return Ok(vec![Vec::new(); shape[0]]);
        }
        Ok(flat.chunks_exact(shape[1]).map(<[T]>::to_vec).collect())
    }

    fn labels(&self, name: &str) -> Result<Vec<usize>> {
        let (info, data) = self.raw(name)?;
        if info.dtype != LABEL_DTYPE {
            return Err(Error::Format(format!("section `{name}` must be {LABEL_DTYPE}")));
        }
        Ok(data
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect())
    }

    fn manifold<T: Scalar>(&self) -> Result<Manifold<T>> {
        let total = self.vector::<T>("total_variance")?;
        let total = *total
            .first()
            .ok_or_else(|| Error::Format("empty total_variance".into()))?;
        let rank = self
            .manifest
            .rank
            .ok_or_else(|| Error::Format("manifest lacks `rank`".into()))?;
        Manifold::from_parts(
            self.vector("mean")?,
            self.rows("basis")?,
            self.vector("eigenvalues")?,
            self.manifest.m,
            total,
            rank,
        )
    }
}

pub fn manifold_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(Manifold<T>, Option<PreprocessConfig>)> {
    let manifest = read_manifest(bytes)?;
    if manifest.kind != ModelKind::Manifold {
        return Err(Error::Format("file holds a classifier, not a bare manifold".into()));
    }
    let d = decode::<T>(bytes, &manifest)?;
    Ok((d.manifold()?, manifest.preprocess))
}

pub fn classifier_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ClassifierModel<T>> {
    let manifest = read_manifest(bytes)?;
    if manifest.kind != ModelKind::Classifier {
        return Err(Error::Format("file holds a bare manifold, not a classifier".into()));
    }
    let d = decode::<T>(bytes, &manifest)?;
    let config = manifest
        .classifier
        .clone()
        .ok_or_else(|| Error::Format("manifest lacks `classifier`".into()))?;
    config.validate()?;
    let method = match &config.method {
        MethodConfig::Eigencoin { .. } => MethodModel::Eigencoin(d.manifold()?),
        MethodConfig::Bdpca { .. } => {
            let (h, w) = manifest
                .bdpca_image
                .ok_or_else(|| Error::Format("manifest lacks `bdpca_image`".into()))?;
            MethodModel::Bdpca(BdpcaModel::from_parts(
                h,
                w,
                d.vector_from_matrix("bdpca_mean")?,
                d.rows("bdpca_row_proj")?,
                d.rows("bdpca_col_proj")?,
            )?)
        }
        MethodConfig::Wavelet { level } => MethodModel::Wavelet { level: *level },
        MethodConfig::Harris(h) => MethodModel::Harris(*h),
    };
    let gallery = d.rows::<T>("gallery_features")?;
    let gallery_labels = d.labels("gallery_labels")?;
    if let Some(&l) = gallery_labels.iter().find(|&&l| l >= manifest.class_names.len()) {
        return Err(Error::Format(format!("gallery label {l} without a class name")));
    }
    let mut model = ClassifierModel::with_gallery(
        config,
        manifest.preprocess,
        manifest.class_names.clone(),
        method,
        gallery,
        gallery_labels,
    )?;
    if let Some(cov) = &model.cov {
        let epsilon = d.vector::<T>("cov_epsilon")?;
        let epsilon = *epsilon
            .first()
            .ok_or_else(|| Error::Format("empty cov_epsilon".into()))?;
        model.cov = Some(match cov.kind() {
            CovKind::SharedSpectrum => CovModel::shared_spectrum(d.vector("spectrum")?, Some(epsilon))?,
            CovKind::PerVectorDiag => CovModel::per_vector_diag(epsilon)?,
        });
    }
    if Some(model.feature_shape) != manifest.feature_shape {
        return Err(Error::Format("feature shape disagrees with the stored method".into()));
    }
    Ok(model)
}

pub fn save_classifier<T: Scalar>(model: &ClassifierModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, classifier_to_bytes(model)?)?;
    Ok(())
}

pub fn load_classifier<T: Scalar>(path: &Path) -> Result<ClassifierModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    classifier_from_bytes(&bytes)
}

pub fn save_manifold<T: Scalar>(m: &Manifold<T>, preprocess: Option<PreprocessConfig>, path: &Path) -> Result<()> {
    std::fs::write(path, manifold_to_bytes(m, preprocess)?)?;
    Ok(())
}

pub fn load_manifold<T: Scalar>(path: &Path) -> Result<(Manifold<T>, Option<PreprocessConfig>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    manifold_from_bytes(&bytes)
}
