//! Fully unsupervised discovery of mid-level discriminative image patches.
//!
//! The pipeline mines a corpus of unlabeled images for patch clusters that
//! are both frequent in the discovery set and rare in a large "natural
//! world" set: HOG pyramids are sampled into patches, clustered with
//! k-means, and each cluster is turned into a linear-SVM detector that is
//! iteratively retrained and re-clustered across two held-out folds until
//! its membership stabilizes. Surviving detectors are ranked by a purity +
//! discriminativeness score, optionally paired into spatially consistent
//! doublets, and evaluated with purity/coverage curves and detector-based
//! scene classification.
//!
//! Modules follow the pipeline stages:
//!
//! - [`corpus`]: dataset manifests, fold splitting, image loading, and a
//!   synthetic planted-pattern corpus generator.
//! - [`features`]: HOG feature pyramids, patch sampling, and NCC.
//! - [`svm`]: linear SVM solver, hard negative mining, sliding-window
//!   detection with NMS.
//! - [`discovery`]: k-means initialization, the cross-validated iteration
//!   loop, and cluster ranking.
//! - [`doublets`]: second-order spatial co-occurrence mining.
//! - [`evalkit`]: purity/coverage curves, spatial-pyramid max-pooled scene
//!   features, and a visual-words baseline.
//! - [`run`]: orchestration of a full seeded run plus on-disk artifacts.

pub mod artifacts;
pub mod corpus;
pub mod discovery;
pub mod doublets;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod geometry;
pub mod run;
pub mod seed;
pub mod svm;

pub use error::{Error, Result};
