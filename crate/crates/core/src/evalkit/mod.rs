//! Quantitative evaluation: label-surrogate purity, coverage, cumulative
//! AUC curves, spatial-pyramid max-pooled scene features, one-vs-all
//! classification, and a visual-words baseline.

mod baseline;
mod curves;
mod label;
mod scene;

pub use baseline::{visual_words_baseline, vw_histogram, VisualWordsConfig};
pub use curves::{purity_coverage_curves, ClusterEvalInput, CurvePoint, PurityCoverage};
pub use label::{majority_label, patch_label, patch_label_for, DEFAULT_LABEL_OVERLAP};
pub use scene::{
    classification_accuracy, predict_scene, sp_max_pool, train_scene_classifier, SceneClass,
    SceneFeature, SpatialPyramidSpec,
};
