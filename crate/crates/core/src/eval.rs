//! Scoring: confusion matrices, per-class recognition rates, overall accuracy
//! and the class-size-weighted precision used for imbalanced test sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Assignment, ClassifierConfig, ClassifierModel, MethodConfig, MethodModel};
use crate::dataset::LabeledDataset;
use crate::eigenspace::{build_manifold, project, train_mse, ImageVector, Selection};
use crate::error::{Error, Result};
use crate::imaging::{extract_roi, GrayImage, PreprocessConfig};
use crate::scalar::Scalar;

/// Rows are true classes, columns predicted classes. Rejections are counted
/// per row outside the matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    pub rejected: Vec<usize>,
}

impl ConfusionMatrix {
    /// Wraps printed counts (no rejections).
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        let c = counts.len();
        if let Some(row) = counts.iter().find(|r| r.len() != c) {
            return Err(Error::dim("ConfusionMatrix row", c, row.len()));
        }
        Ok(ConfusionMatrix {
            rejected: vec![0; c],
            counts,
        })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    /// Test items per true class, rejections included.
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts
            .iter()
            .zip(&self.rejected)
            .map(|(r, &rej)| r.iter().sum::<usize>() + rej)
            .collect()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.row_sums().iter().sum()
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

/// Tallies `(truth, prediction)` pairs over class ids `0..classes`.
pub fn confusion(truth: &[usize], pred: &[Assignment], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::dim("confusion", truth.len(), pred.len()));
    }
    let mut cm = ConfusionMatrix {
        counts: vec![vec![0; classes]; classes],
        rejected: vec![0; classes],
    };
    for (&t, p) in truth.iter().zip(pred) {
        if t >= classes {
            return Err(Error::invalid(format!("true label {t} outside 0..{classes}")));
        }
        match *p {
            Assignment::Class(c) if c < classes => cm.counts[t][c] += 1,
            Assignment::Class(c) => return Err(Error::invalid(format!("predicted label {c} outside 0..{classes}"))),
            Assignment::Rejected => cm.rejected[t] += 1,
        }
    }
    Ok(cm)
}

/// `R_i = cm[i][i] / (test items of class i)`. A class without test items
/// has no defined rate and is an error.
pub fn per_class_rates(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    rates_with(cm, false)
}

/// As [`per_class_rates`] but rejected items leave the denominators.
pub fn rejection_aware_rates(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    rates_with(cm, true)
}

fn rates_with(cm: &ConfusionMatrix, drop_rejected: bool) -> Result<Vec<f64>> {
    cm.counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut den: usize = row.iter().sum();
            if !drop_rejected {
                den += cm.rejected[i];
            }
            if den == 0 {
                return Err(Error::UndefinedRate { class: i });
            }
            Ok(row[i] as f64 / den as f64)
        })
        .collect()
}

/// `Σ α_i R_i / Σ α_i`.
pub fn weighted_precision(rates: &[f64], alphas: &[f64]) -> Result<f64> {
    if rates.len() != alphas.len() {
        return Err(Error::dim("weighted_precision", rates.len(), alphas.len()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::invalid(format!("alpha weights must be positive, got {a}")));
    }
    let num: f64 = rates.iter().zip(alphas).map(|(r, a)| r * a).sum();
    let den: f64 = alphas.iter().sum();
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Integer ranks: largest class 1, smallest class C.
    #[default]
    Rank,
    /// `α_i = 1 / C_i` literally.
    Reciprocal,
}

/// Weights inversely ordered by class size: `α_i = 1 + #{j : C_j > C_i}`.
/// Equal sizes share the lower rank.
pub fn alphas_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    check_counts(counts)?;
    Ok(counts
        .iter()
        .map(|&c| (1 + counts.iter().filter(|&&o| o > c).count()) as f64)
        .collect())
}

pub fn reciprocal_alphas(counts: &[usize]) -> Result<Vec<f64>> {
    check_counts(counts)?;
    Ok(counts.iter().map(|&c| 1.0 / c as f64).collect())
}

fn check_counts(counts: &[usize]) -> Result<()> {
    if counts.contains(&0) {
        return Err(Error::invalid("class counts must be positive"));
    }
    Ok(())
}

pub fn alphas(mode: AlphaMode, counts: &[usize]) -> Result<Vec<f64>> {
    match mode {
        AlphaMode::Rank => alphas_from_counts(counts),
        AlphaMode::Reciprocal => reciprocal_alphas(counts),
    }
}

/// Scores of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub confusion: ConfusionMatrix,
    pub test_counts: Vec<usize>,
    pub rates: Vec<f64>,
    pub overall_accuracy: f64,
    /// Unweighted mean of the per-class rates.
    pub balanced_accuracy: f64,
    pub weighted_precision: f64,
    pub alphas: Vec<f64>,
}

impl Scores {
    pub fn from_confusion(confusion: ConfusionMatrix, alphas: Vec<f64>, rejection_aware: bool) -> Result<Self> {
        let rates = if rejection_aware {
            rejection_aware_rates(&confusion)?
        } else {
            per_class_rates(&confusion)?
        };
        let weighted_precision = weighted_precision(&rates, &alphas)?;
        Ok(Scores {
            test_counts: confusion.row_sums(),
            overall_accuracy: confusion.overall_accuracy(),
            balanced_accuracy: rates.iter().sum::<f64>() / rates.len() as f64,
            weighted_precision,
            rates,
            alphas,
            confusion,
        })
    }
}

/// Percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Scores plus the context needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub classifier: ClassifierConfig,
    pub alpha_mode: AlphaMode,
    pub rejection_aware: bool,
    pub scores: Scores,
    /// Normalized training reconstruction error; eigenspace models only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_train: Option<f64>,
}

/// Scoring options shared by [`evaluate`] and [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default)]
    pub alpha_mode: AlphaMode,
    #[serde(default)]
    pub rejection_aware: bool,
}

fn normalize_all<T: Scalar>(
    items: &[(&GrayImage<T>, usize)],
    pre: Option<&PreprocessConfig>,
) -> Result<Vec<GrayImage<T>>> {
    items
        .par_iter()
        .map(|(img, _)| match pre {
            Some(p) => extract_roi(img, p),
            None => Ok((*img).clone()),
        })
        .collect()
}

/// Classifies every test item of `ds` and scores the result. The α weights
/// come from the full class sizes.
pub fn evaluate<T: Scalar>(
    model: &ClassifierModel<T>,
    ds: &LabeledDataset<T>,
    opts: EvalOptions,
) -> Result<EvalReport> {
    if ds.class_count() != model.class_names().len() {
        return Err(Error::dim(
            "evaluate classes",
            model.class_names().len(),
            ds.class_count(),
        ));
    }
    let items = ds.test_items();
    let images: Vec<GrayImage<T>> = items.iter().map(|(img, _)| (*img).clone()).collect();
    let preds = model.predict_batch(&images).into_iter().collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = items.iter().map(|&(_, l)| l).collect();
    let labels: Vec<Assignment> = preds.iter().map(|p| p.label).collect();
    let cm = confusion(&truth, &labels, ds.class_count())?;
    let alphas = alphas(opts.alpha_mode, &ds.class_sizes())?;
    let mse_train = match model.manifold() {
        Some(m) => {
            let train = normalize_all(&ds.train_items(), model.preprocess())?;
            let vectors: Vec<ImageVector<T>> = train.into_iter().map(ImageVector::from).collect();
            Some(train_mse(m, &vectors)?.to_f64_lossy())
        }
        None => None,
    };
    Ok(EvalReport {
        class_names: ds.class_names(),
        classifier: model.config().clone(),
        alpha_mode: opts.alpha_mode,
        rejection_aware: opts.rejection_aware,
        scores: Scores::from_confusion(cm, alphas, opts.rejection_aware)?,
        mse_train,
    })
}

/// One row of an eigenvector-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub overall_accuracy: f64,
    pub rates: Vec<f64>,
    pub weighted_precision: f64,
    pub mse_train: f64,
    /// Fraction of the training variance the first `k` eigenvalues capture.
    pub energy_fraction: f64,
}

/// Evaluates the eigenspace classifier at each `k` in `ks` (sorted,
/// deduplicated). One manifold is built at the largest `k`; each row uses its
/// leading eigenvectors, which is identical to building at that `k` directly.
pub fn sweep<T: Scalar>(
    ds: &LabeledDataset<T>,
    ks: &[usize],
    cfg: &ClassifierConfig,
    preprocess: Option<PreprocessConfig>,
    opts: EvalOptions,
) -> Result<Vec<SweepRow>> {
    if !matches!(cfg.method, MethodConfig::Eigencoin { .. }) {
        return Err(Error::invalid("sweep applies to the eigencoin method only"));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let k_max = *ks.last().ok_or_else(|| Error::invalid("sweep needs at least one k"))?;
    let train_items = ds.train_items();
    let test_items = ds.test_items();
    let train = normalize_all(&train_items, preprocess.as_ref())?;
    let test = normalize_all(&test_items, preprocess.as_ref())?;
    let train_vectors: Vec<ImageVector<T>> = train.into_iter().map(ImageVector::from).collect();
    let full = build_manifold(&train_vectors, Selection::Count(k_max))?;
    if k_max > full.rank() {
        return Err(Error::invalid(format!(
            "k = {k_max} exceeds the training rank {}",
            full.rank()
        )));
    }
    let train_coeffs = train_vectors
        .par_iter()
        .map(|x| project(&full, x).map(|c| c.omega))
        .collect::<Result<Vec<_>>>()?;
    let test_coeffs = test
        .into_par_iter()
        .map(|img| project(&full, &ImageVector::from(img)).map(|c| c.omega))
        .collect::<Result<Vec<_>>>()?;
    let train_labels: Vec<usize> = train_items.iter().map(|&(_, l)| l).collect();
    let truth: Vec<usize> = test_items.iter().map(|&(_, l)| l).collect();
    let alphas = alphas(opts.alpha_mode, &ds.class_sizes())?;

    ks.par_iter()
        .map(|&k| {
            let manifold = full.truncated(k)?;
            let mse_train = train_mse(&manifold, &train_vectors)?.to_f64_lossy();
            let energy_fraction = manifold.energy_fraction().to_f64_lossy();
            let row_cfg = ClassifierConfig {
                method: MethodConfig::Eigencoin {
                    k: Some(k),
                    energy: None,
                },
                ..cfg.clone()
            };
            let gallery = train_coeffs.iter().map(|c| c[..k].to_vec()).collect();
            let model = ClassifierModel::with_gallery(
                row_cfg,
                preprocess,
                ds.class_names(),
                MethodModel::Eigencoin(manifold),
                gallery,
                train_labels.clone(),
            )?;
            let labels = test_coeffs
                .iter()
                .map(|c| model.predict_features(&c[..k]).map(|p| p.label))
                .collect::<Result<Vec<_>>>()?;
            let scores = Scores::from_confusion(
                confusion(&truth, &labels, ds.class_count())?,
                alphas.clone(),
                opts.rejection_aware,
            )?;
            Ok(SweepRow {
                k,
                overall_accuracy: scores.overall_accuracy,
                rates: scores.rates,
                weighted_precision: scores.weighted_precision,
                mse_train,
                energy_fraction,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts_and_rejections() {
        let truth = [0, 0, 1, 2, 2];
        let pred = [
            Assignment::Class(0),
            Assignment::Class(1),
            Assignment::Class(1),
            Assignment::Rejected,
            Assignment::Class(2),
        ];
        let cm = confusion(&truth, &pred, 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(cm.rejected, vec![0, 0, 1]);
        assert_eq!(cm.row_sums(), vec![2, 1, 2]);
        assert_eq!(per_class_rates(&cm).unwrap(), vec![0.5, 1.0, 0.5]);
        assert_eq!(rejection_aware_rates(&cm).unwrap(), vec![0.5, 1.0, 1.0]);
        assert!((cm.overall_accuracy() - 0.6).abs() < 1e-15);
        assert!(confusion(&[3], &[Assignment::Class(0)], 3).is_err());
        assert!(confusion(&[0], &[Assignment::Class(5)], 3).is_err());
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let truth = [0, 1, 1, 2];
        let pred: Vec<_> = truth.iter().map(|&t| Assignment::Class(t)).collect();
        let cm = confusion(&truth, &pred, 3).unwrap();
        assert_eq!(cm.trace(), 4);
        assert_eq!(per_class_rates(&cm).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn empty_row_is_undefined() {
        let cm = ConfusionMatrix::from_counts(vec![vec![1, 0], vec![0, 0]]).unwrap();
        assert!(matches!(per_class_rates(&cm), Err(Error::UndefinedRate { class: 1 })));
    }

    #[test]
    fn alpha_rules() {
        assert_eq!(alphas_from_counts(&[51, 490, 99, 4]).unwrap(), vec![3.0, 1.0, 2.0, 4.0]);
        assert_eq!(alphas_from_counts(&[7, 7, 7]).unwrap(), vec![1.0; 3]);
        assert_eq!(alphas_from_counts(&[10, 1]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(alphas_from_counts(&[5, 5, 1]).unwrap(), vec![1.0, 1.0, 3.0]);
        assert!(alphas_from_counts(&[3, 0]).is_err());
        assert_eq!(reciprocal_alphas(&[4, 2]).unwrap(), vec![0.25, 0.5]);
    }

    #[test]
    fn weighted_precision_cases() {
        let r = [0.2, 0.4, 0.9];
        let mean = weighted_precision(&r, &[1.0; 3]).unwrap();
        assert!((mean - 0.5).abs() < 1e-15);
        assert!(weighted_precision(&r, &[1.0, 1.0]).is_err());
        assert!(weighted_precision(&r, &[1.0, 0.0, 1.0]).is_err());
    }
}
