//! Coin attribution by eigenspace projection and Bhattacharyya-distance
//! nearest neighbour, with three competing feature extractors and the
//! scoring used to compare them on imbalanced data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod classify;
pub mod dataset;
pub mod distances;
pub mod eigenspace;
mod error;
pub mod eval;
pub mod imaging;
pub mod linalg;
pub mod persist;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GrayImage64 = imaging::GrayImage<f64>;
pub type GrayImage32 = imaging::GrayImage<f32>;
pub type Manifold64 = eigenspace::Manifold<f64>;
pub type Manifold32 = eigenspace::Manifold<f32>;
pub type Dataset64 = dataset::LabeledDataset<f64>;
pub type Dataset32 = dataset::LabeledDataset<f32>;
pub type Classifier64 = classify::ClassifierModel<f64>;
pub type Classifier32 = classify::ClassifierModel<f32>;
pub type BdpcaModel64 = baselines::BdpcaModel<f64>;
pub type BdpcaModel32 = baselines::BdpcaModel<f32>;
