//! Linear SVM training with hard negative mining, scoring, and
//! sliding-window pyramid detection with non-maximum suppression.

mod detect;
mod mining;
pub mod solver;

pub use detect::{detect, window_scores, Detection};
pub use mining::{train_detector, NegativePool, PoolEntry};
pub use solver::{
    dot, objective, solve, solve_with_bias, LinearModel, ModelMeta, SvmConfig, DEFAULT_BIAS_SCALE,
};
