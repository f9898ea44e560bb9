//! Visual-ablation toolkit for manga page layouts.
//!
//! Pages are rendered unprocessed, with text and characters masked, or as
//! panel frames only (optionally with vertex noise); small CNNs are trained per
//! cross-validation fold and combined by plurality vote; Grad-CAM shows where
//! they look. A synthetic layout corpus stands in for the licensed dataset.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f32`, the precision used for training.

pub mod ablation;
pub mod annotation;
pub mod classifier;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod explain;
pub mod geometry;
pub mod item;
pub mod nn;
pub mod perturb;
pub mod render;
pub mod rendered;
pub mod scalar;

pub use ablation::AblationSpec;
pub use classifier::{EnsemblePrediction, TrainConfig};
pub use corpus::{LabelTask, SplitManifest};
pub use eval::EvalReport;
pub use item::ItemRef;
pub use render::{AblationMode, RenderConfig, RenderedImage};

pub type Network = nn::Network<f32>;
pub type FoldModel = classifier::FoldModel<f32>;
pub type Heatmap = explain::Heatmap<f32>;
