//! Labelled image collections: loading from a directory manifest, stratified
//! train/test splitting, and a deterministic synthetic-coin generator.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::scalar::Scalar;

pub const DEFAULT_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// All images of one class together with their split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassImages<T> {
    pub name: String,
    pub images: Vec<GrayImage<T>>,
    /// Source identifier per image (file name or synthetic index).
    pub sources: Vec<String>,
    pub split: Vec<Split>,
    /// Explicit number of training items, overriding the split fraction.
    pub train_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    classes: Vec<ClassImages<T>>,
}

impl<T: Scalar> LabeledDataset<T> {
    /// Validates names, class sizes and split bookkeeping.
    pub fn new(classes: Vec<ClassImages<T>>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidDataset("no classes".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate class name `{}`", c.name)));
            }
            if c.images.is_empty() {
                return Err(Error::InvalidDataset(format!("class `{}` has no images", c.name)));
            }
            if c.split.len() != c.images.len() || c.sources.len() != c.images.len() {
                return Err(Error::InvalidDataset(format!(
                    "class `{}` has inconsistent split bookkeeping",
                    c.name
                )));
            }
            if let Some(t) = c.train_count {
                if t > c.images.len() {
                    return Err(Error::InvalidDataset(format!(
                        "class `{}` asks for {t} training items but has {}",
                        c.name,
                        c.images.len()
                    )));
                }
            }
        }
        Ok(LabeledDataset { classes })
    }

    pub fn classes(&self) -> &[ClassImages<T>] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Total images per class.
    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.images.len()).collect()
    }

    fn count_split(&self, which: Split) -> Vec<usize> {
        self.classes
            .iter()
            .map(|c| c.split.iter().filter(|&&s| s == which).count())
            .collect()
    }

    pub fn train_counts(&self) -> Vec<usize> {
        self.count_split(Split::Train)
    }

    pub fn test_counts(&self) -> Vec<usize> {
        self.count_split(Split::Test)
    }

    /// `(image, class index)` pairs of one split, class by class in storage order.
    pub fn items(&self, which: Split) -> Vec<(&GrayImage<T>, usize)> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(label, c)| {
                c.images
                    .iter()
                    .zip(&c.split)
                    .filter(move |(_, &s)| s == which)
                    .map(move |(img, _)| (img, label))
            })
            .collect()
    }

    pub fn train_items(&self) -> Vec<(&GrayImage<T>, usize)> {
        self.items(Split::Train)
    }

    pub fn test_items(&self) -> Vec<(&GrayImage<T>, usize)> {
        self.items(Split::Test)
    }

    /// Applies `f` to every image (in parallel), keeping labels and splits.
    pub fn try_map_images<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&GrayImage<T>) -> Result<GrayImage<T>> + Sync,
    {
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let images = c.images.par_iter().map(&f).collect::<Result<Vec<_>>>()?;
                Ok(ClassImages { images, ..c.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset { classes })
    }

    /// Replaces the training labels by a seeded random permutation of the
    /// same multiset; used for chance-level sanity checks.
    pub fn with_permuted_train_labels(&self, seed: u64) -> Result<Self> {
        let mut labels: Vec<usize> = self.train_items().iter().map(|&(_, l)| l).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        labels.shuffle(&mut rng);
        let mut classes: Vec<ClassImages<T>> = self
            .classes
            .iter()
            .map(|c| ClassImages {
                name: c.name.clone(),
                images: Vec::new(),
                sources: Vec::new(),
                split: Vec::new(),
                train_count: None,
            })
            .collect();
        let mut next = labels.into_iter();
        for (label, c) in self.classes.iter().enumerate() {
            for ((img, src), &s) in c.images.iter().zip(&c.sources).zip(&c.split) {
                let target = if s == Split::Train {
                    next.next().expect("one label per training item")
                } else {
                    label
                };
                classes[target].images.push(img.clone());
                classes[target].sources.push(src.clone());
                classes[target].split.push(s);
            }
        }
        // a permutation keeps every class's training multiplicity, so no class empties out
        LabeledDataset::new(classes)
    }
}

/// `round_half_up(fraction × n)`, at least 1 when `n ≥ 1`.
pub fn train_size(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // small slack so that e.g. 0.7 × 5 = 3.4999… still rounds to 4
    let t = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    t.clamp(1, n)
}

/// Per-class seeded shuffle; the first `train_count` (or
/// `train_size(n, fraction)`) shuffled items go to training.
pub fn split<T: Scalar>(ds: &LabeledDataset<T>, fraction: f64, seed: u64) -> Result<LabeledDataset<T>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} outside (0,1)")));
    }
    let classes = ds
        .classes
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let n = c.images.len();
            let n_train = c.train_count.unwrap_or_else(|| train_size(n, fraction));
            let mut order: Vec<usize> = (0..n).collect();
            let class_seed = seed ^ (ci as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(class_seed));
            let mut assignment = vec![Split::Test; n];
            for &i in order.iter().take(n_train) {
                assignment[i] = Split::Train;
            }
            ClassImages {
                split: assignment,
                ..c.clone()
            }
        })
        .collect();
    LabeledDataset::new(classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClass {
    pub name: String,
    /// Directory relative to the manifest root.
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count: Option<usize>,
}

/// On-disk description of a dataset:
/// `{"classes":[{"name","dir","train_count"?}],"fraction","seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<ManifestClass>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fraction() -> f64 {
    DEFAULT_FRACTION
}

impl Manifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Image files of a directory in lexicographic order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Load {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Decodes every class directory below `root` and applies the manifest split.
pub fn load<T: Scalar>(root: &Path, manifest: &Manifest) -> Result<LabeledDataset<T>> {
    if manifest.classes.is_empty() {
        return Err(Error::InvalidDataset("manifest lists no classes".into()));
    }
    let mut classes = Vec::with_capacity(manifest.classes.len());
    for mc in &manifest.classes {
        let files = list_images(&root.join(&mc.dir))?;
        let images = files
            .par_iter()
            .map(|f| GrayImage::open(f))
            .collect::<Result<Vec<_>>>()?;
        let sources = files
            .iter()
            .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        classes.push(ClassImages {
            name: mc.name.clone(),
            split: vec![Split::Test; images.len()],
            images,
            sources,
            train_count: mc.train_count,
        });
    }
    split(&LabeledDataset::new(classes)?, manifest.fraction, manifest.seed)
}

/// Axis-aligned ellipse in coin-relative coordinates (coin radius = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_x: f64,
    pub semi_y: f64,
}

/// Arc of a ring centred on the coin centre; angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub radius: f64,
    pub start_deg: f64,
    pub span_deg: f64,
    pub thickness: f64,
}

/// The per-class obverse design: bust, rims, star-moon marks, legend ticks and
/// crown arc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoinPattern {
    pub bust: Ellipse,
    /// 1 or 2 concentric rims.
    pub rims: usize,
    /// Three star-moon mark positions, degrees.
    pub star_moon_deg: [f64; 3],
    pub crown: Arc,
    /// Number of radial legend ticks.
    pub legend_ticks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count: Option<usize>,
    pub pattern: CoinPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub version: u32,
    pub image_size: usize,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Scale of the per-coin geometric and photometric variation.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Draw identification-number marks outside the coin.
    #[serde(default = "default_true")]
    pub id_marks: bool,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    pub seed: u64,
    pub classes: Vec<SynthClass>,
}

fn default_noise() -> f64 {
    0.02
}
fn default_jitter() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

const PRESETS: &[(&str, &str)] = &[
    ("tenth-scale", include_str!("../fixtures/synth_tenth_scale_v1.json")),
    ("full-scale", include_str!("../fixtures/synth_full_scale_v1.json")),
    (
        "balanced-small",
        include_str!("../fixtures/synth_balanced_small_v1.json"),
    ),
];

impl SynthConfig {
    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|(n, _)| *n).collect()
    }

    /// One of the bundled fixtures under `fixtures/`.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::invalid(format!("unknown synthetic preset `{name}`")))?;
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("synthetic config has no classes"));
        }
        if self.image_size < 32 {
            return Err(Error::invalid("synthetic image_size must be at least 32"));
        }
        if !(self.noise >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::invalid("noise and jitter must be non-negative"));
        }
        for c in &self.classes {
            if c.count == 0 {
                return Err(Error::invalid(format!("class `{}` has count 0", c.name)));
            }
            if !(1..=2).contains(&c.pattern.rims) {
                return Err(Error::invalid(format!("class `{}`: rims must be 1 or 2", c.name)));
            }
        }
        Ok(())
    }
}

/// Renders every class and applies the configured split. Each image draws
/// from its own generator seeded by `(seed, class, index)`, so output does not
/// depend on thread scheduling.
pub fn synthesize<T: Scalar>(cfg: &SynthConfig) -> Result<LabeledDataset<T>> {
    cfg.validate()?;
    let mut classes = Vec::with_capacity(cfg.classes.len());
    for (ci, sc) in cfg.classes.iter().enumerate() {
        let images = (0..sc.count)
            .into_par_iter()
            .map(|i| {
                let s = cfg
                    .seed
                    .wrapping_mul(0x2545_F491_4F6C_DD1D)
                    .wrapping_add(((ci as u64) << 32) | i as u64);
                render_coin(cfg, &sc.pattern, &mut ChaCha8Rng::seed_from_u64(s))
            })
            .collect::<Result<Vec<GrayImage<T>>>>()?;
        classes.push(ClassImages {
            name: sc.name.clone(),
            sources: (0..sc.count).map(|i| format!("{i:04}.png")).collect(),
            split: vec![Split::Test; images.len()],
            images,
            train_count: sc.train_count,
        });
    }
    split(&LabeledDataset::new(classes)?, cfg.fraction, cfg.seed)
}

const BACKGROUND: f64 = 0.08;

fn render_coin<T: Scalar>(cfg: &SynthConfig, pat: &CoinPattern, rng: &mut ChaCha8Rng) -> Result<GrayImage<T>> {
    let size = cfg.image_size as f64;
    let j = cfg.jitter;
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);

    let cx = size / 2.0 + j * u(-0.02, 0.02) * size;
    let cy = size / 2.0 + j * u(-0.02, 0.02) * size;
    let radius = size * 0.36 * (1.0 + j * u(-0.03, 0.03));
    let field = 0.5 + j * u(-0.04, 0.04);
    let bust_dx = j * u(-0.03, 0.03);
    let bust_dy = j * u(-0.03, 0.03);
    let tick_phase = u(0.0, 360.0);
    let marks: Vec<(f64, f64)> = (0..3)
        .map(|k| {
            (
                size * (0.80 + 0.05 * k as f64) + u(-1.0, 1.0),
                size * 0.9 + u(-1.0, 1.0),
            )
        })
        .collect();

    let bust = pat.bust;
    let stars: Vec<(f64, f64)> = pat
        .star_moon_deg
        .iter()
        .map(|d| {
            let a = d.to_radians();
            (0.58 * a.cos(), 0.58 * a.sin())
        })
        .collect();
    let rim_radii: &[f64] = if pat.rims == 2 { &[0.95, 0.89] } else { &[0.95] };
    let crown_start = pat.crown.start_deg.rem_euclid(360.0);

    let mut px = Vec::with_capacity(cfg.image_size * cfg.image_size);
    for r in 0..cfg.image_size {
        for c in 0..cfg.image_size {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let (dx, dy) = ((x - cx) / radius, (y - cy) / radius);
            let rho = dx.hypot(dy);
            let mut v = BACKGROUND;
            if rho <= 1.0 {
                v = field;
                let theta = dy.atan2(dx).to_degrees().rem_euclid(360.0);
                // legend band: short radial ticks
                if (0.74..0.84).contains(&rho) && pat.legend_ticks > 0 {
                    let step = 360.0 / pat.legend_ticks as f64;
                    let off = (theta - tick_phase).rem_euclid(step);
                    if off < step * 0.35 {
                        v = 0.3;
                    }
                }
                for &rr in rim_radii {
                    if (rho - rr).abs() < 0.018 {
                        v = 0.85;
                    }
                }
                let ex = (dx - bust.center_x - bust_dx) / bust.semi_x;
                let ey = (dy - bust.center_y - bust_dy) / bust.semi_y;
                if ex * ex + ey * ey <= 1.0 {
                    v = 0.8;
                }
                let in_arc = (theta - crown_start).rem_euclid(360.0) <= pat.crown.span_deg;
                if in_arc && (rho - pat.crown.radius).abs() < pat.crown.thickness / 2.0 {
                    v = 0.95;
                }
                for &(sx, sy) in &stars {
                    let d = (dx - sx).hypot(dy - sy);
                    if d < 0.07 {
                        // crescent: bright disk with a dark bite
                        let bite = (dx - sx - 0.03).hypot(dy - sy);
                        v = if bite < 0.05 { 0.25 } else { 0.95 };
                    }
                }
            } else if cfg.id_marks {
                let (mw, mh) = (size * 0.025, size * 0.05);
                for &(mx, my) in &marks {
                    if (x - mx).abs() < mw / 2.0 && (y - my).abs() < mh / 2.0 {
                        v = 0.9;
                    }
                }
            }
            px.push(v);
        }
    }
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid(e.to_string()))?;
        for v in px.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    GrayImage::from_clamped(cfg.image_size, cfg.image_size, px.into_iter().map(T::of).collect())
}
