//! Linear SVM via dual coordinate descent on the hinge-loss dual.
//!
//! The bias is handled by feature augmentation with a fixed scalar: each
//! example is extended with a constant `bias_scale` component, so the
//! minimized objective is
//!
//! ```text
//!   0.5 * (|w|^2 + (b / bias_scale)^2) + C * sum_i hinge(y_i (w.x_i + b))
//! ```
//!
//! Termination is certified by the duality gap: the returned objective is
//! within `tol` (relative) of the optimum of that objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bias augmentation scalar.
pub const DEFAULT_BIAS_SCALE: f64 = 1.0;

/// Hard safety cap on coordinate-descent epochs; degenerate inputs (e.g.
/// contradictory labels) still terminate with a finite objective.
const MAX_EPOCHS: usize = 4000;

/// Fixed seed for the in-solver sweep permutations; `solve` is a pure
/// function of its inputs.
const SWEEP_SEED: u64 = 0x5eed_cd00;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    /// Regularization trade-off.
    pub c: f64,
    /// Hard-negative mining rounds (scans of the negative pool).
    pub mining_rounds: usize,
    /// Maximum cached negatives; lowest-scoring are evicted beyond this.
    pub negative_cache_cap: usize,
    /// Relative duality-gap tolerance for the solver.
    pub solver_tol: f64,
    /// Firing threshold: detections must score strictly above this.
    pub score_floor: f64,
    /// Size of the round-0 random negative sample.
    pub round0_negatives: usize,
    /// Bias augmentation scalar.
    pub bias_scale: f64,
    /// NCC threshold above which a negative counts as a near-duplicate of a
    /// positive and is excluded from mining.
    pub ncc_threshold: f64,
    /// Seed for the round-0 negative sample.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 0.1,
            mining_rounds: 12,
            negative_cache_cap: 20_000,
            solver_tol: 1e-5,
            score_floor: -1.0,
            round0_negatives: 5_000,
            bias_scale: DEFAULT_BIAS_SCALE,
            ncc_threshold: 0.4,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig("svm.c must be > 0".into()));
        }
        if self.mining_rounds < 1 {
            return Err(Error::InvalidConfig("svm.mining_rounds must be >= 1".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::InvalidConfig("svm.solver_tol must be > 0".into()));
        }
        if !(self.bias_scale > 0.0) {
            return Err(Error::InvalidConfig("svm.bias_scale must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub cluster_id: u32,
    /// Mining rounds that contributed negatives (0 for a plain solve).
    pub iteration: u32,
    pub num_positives: usize,
    pub num_mined_negatives: usize,
    pub final_objective: f64,
}

/// Trained weight vector plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub meta: ModelMeta,
}

impl LinearModel {
    /// `w . x + b`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.w, x) + self.b)
    }
}

/// Canonical left-to-right dot product; detection keeps scores bit-equal to
/// a plain fold over the flattened descriptor.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// The augmented primal objective minimized by [`solve`].
pub fn objective(
    w: &[f64],
    b: f64,
    bias_scale: f64,
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    c: f64,
) -> f64 {
    let reg = 0.5 * (dot(w, w) + (b / bias_scale).powi(2));
    let mut loss = 0.0;
    for x in positives {
        loss += (1.0 - (dot(w, x) + b)).max(0.0);
    }
    for x in negatives {
        loss += (1.0 + (dot(w, x) + b)).max(0.0);
    }
    reg + c * loss
}

fn validate_inputs(positives: &[Vec<f64>], negatives: &[Vec<f64>]) -> Result<usize> {
    let first = positives
        .first()
        .ok_or(Error::EmptyInput("positives"))?
        .len();
    if negatives.is_empty() {
        return Err(Error::EmptyInput("negatives"));
    }
    for x in positives.iter().chain(negatives.iter()) {
        if x.len() != first {
            return Err(Error::DimensionMismatch {
                expected: first,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("svm training descriptor"));
        }
    }
    Ok(first)
}

/// Train a linear SVM on labeled descriptors; the returned objective is
/// within `tol` (relative) of the optimum. Deterministic for fixed inputs.
pub fn solve(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    c: f64,
    tol: f64,
) -> Result<LinearModel> {
    solve_with_bias(positives, negatives, c, tol, DEFAULT_BIAS_SCALE)
}

pub fn solve_with_bias(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    c: f64,
    tol: f64,
    bias_scale: f64,
) -> Result<LinearModel> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidConfig(format!("svm c must be > 0, got {c}")));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidConfig(format!("tol must be > 0, got {tol}")));
    }
    let dim = validate_inputs(positives, negatives)?;
    let n = positives.len() + negatives.len();
    let aug = dim + 1;

    // Flatten with the bias feature appended.
    let mut xs = vec![0.0f64; n * aug];
    let mut ys = vec![0.0f64; n];
    for (i, x) in positives.iter().chain(negatives.iter()).enumerate() {
        xs[i * aug..i * aug + dim].copy_from_slice(x);
        xs[i * aug + dim] = bias_scale;
        ys[i] = if i < positives.len() { 1.0 } else { -1.0 };
    }
    let q_diag: Vec<f64> = (0..n)
        .map(|i| {
            let row = &xs[i * aug..(i + 1) * aug];
            dot(row, row)
        })
        .collect();

    let mut alpha = vec![0.0f64; n];
    let mut w = vec![0.0f64; aug];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SWEEP_SEED);

    for _epoch in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &i in &order {
            let row = &xs[i * aug..(i + 1) * aug];
            let g = ys[i] * dot(&w, row) - 1.0;
            let a = alpha[i];
            let pg = if a <= 0.0 {
                g.min(0.0)
            } else if a >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let a_new = (a - g / q_diag[i]).clamp(0.0, c);
            let delta = a_new - a;
            if delta != 0.0 {
                alpha[i] = a_new;
                let dy = delta * ys[i];
                for (wj, xj) in w.iter_mut().zip(row) {
                    *wj += dy * xj;
                }
                changed = true;
            }
        }

        // Duality-gap certificate.
        let mut hinge = 0.0;
        for i in 0..n {
            let row = &xs[i * aug..(i + 1) * aug];
            hinge += (1.0 - ys[i] * dot(&w, row)).max(0.0);
        }
        let reg = 0.5 * dot(&w, &w);
        let primal = reg + c * hinge;
        let dual = alpha.iter().sum::<f64>() - reg;
        let gap = primal - dual;
        if gap <= tol * primal.abs() || !changed {
            break;
        }
    }

    let b = w[dim] * bias_scale;
    let w_out: Vec<f64> = w[..dim].to_vec();
    let final_objective = objective(&w_out, b, bias_scale, positives, negatives, c);
    Ok(LinearModel {
        w: w_out,
        b,
        meta: ModelMeta {
            cluster_id: 0,
            iteration: 0,
            num_positives: positives.len(),
            num_mined_negatives: negatives.len(),
            final_objective,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(xs: &[&[f64]]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| x.to_vec()).collect()
    }

    /// 2-parameter grid-search oracle over (w, b) for 1-D inputs, on the
    /// same augmented objective as the solver.
    fn grid_search_1d(
        positives: &[Vec<f64>],
        negatives: &[Vec<f64>],
        c: f64,
        bias_scale: f64,
    ) -> (f64, f64) {
        let mut best = (0.0, 0.0);
        let mut best_obj = f64::INFINITY;
        let steps = 400;
        for wi in -steps..=steps {
            let w = wi as f64 / steps as f64; // [-1, 1]
            for bi in -steps..=steps {
                let b = bi as f64 / steps as f64;
                let obj = objective(&[w], b, bias_scale, positives, negatives, c);
                if obj < best_obj {
                    best_obj = obj;
                    best = (w, b);
                }
            }
        }
        best
    }

    #[test]
    fn separable_1d_matches_grid_oracle() {
        let pos = vecs(&[&[2.0], &[2.0]]);
        let neg = vecs(&[&[-2.0], &[-2.0]]);
        let c = 10.0;
        let model = solve(&pos, &neg, c, 1e-8).unwrap();
        let (gw, gb) = grid_search_1d(&pos, &neg, c, DEFAULT_BIAS_SCALE);
        assert!((gw - 0.5).abs() < 5e-3 && gb.abs() < 5e-3, "oracle ({gw}, {gb})");
        assert!(
            (model.w[0] - gw).abs() < 1e-2 && (model.b - gb).abs() < 1e-2,
            "solver ({}, {}) vs oracle ({gw}, {gb})",
            model.w[0],
            model.b
        );
        // Margin points sit at +-2 with unit functional margin.
        assert!((model.score(&[2.0]).unwrap() - 1.0).abs() < 0.05);
        assert!((model.score(&[-2.0]).unwrap() + 1.0).abs() < 0.05);
    }

    #[test]
    fn objective_beats_zero_model_bound() {
        // At w = 0, b = 0 every hinge is 1, so the objective is C * n; the
        // solver must do at least as well.
        let pos = vecs(&[&[0.3, 0.1], &[0.2, -0.4], &[0.9, 0.5]]);
        let neg = vecs(&[&[-0.1, 0.2], &[0.4, 0.4]]);
        let c = 0.7;
        let n = (pos.len() + neg.len()) as f64;
        let model = solve(&pos, &neg, c, 1e-6).unwrap();
        assert!(model.meta.final_objective <= c * n + 1e-9);
    }

    #[test]
    fn contradictory_labels_terminate_finite() {
        let pos = vecs(&[&[0.0], &[2.0]]);
        let neg = vecs(&[&[0.0]]);
        let model = solve(&pos, &neg, 1.0, 1e-6).unwrap();
        assert!(model.meta.final_objective.is_finite());
        assert!(model.w[0].is_finite() && model.b.is_finite());
    }

    #[test]
    fn solve_is_deterministic() {
        let pos = vecs(&[&[0.5, 1.0, -0.2], &[0.7, 0.8, 0.1]]);
        let neg = vecs(&[&[-0.5, -1.0, 0.2], &[0.1, -0.8, -0.1], &[0.0, 0.0, 0.0]]);
        let a = solve(&pos, &neg, 0.3, 1e-7).unwrap();
        let b = solve(&pos, &neg, 0.3, 1e-7).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
    }

    #[test]
    fn input_validation() {
        let pos = vecs(&[&[1.0, 2.0]]);
        let neg_short = vecs(&[&[1.0]]);
        assert!(matches!(
            solve(&pos, &neg_short, 1.0, 1e-4),
            Err(Error::DimensionMismatch { .. })
        ));
        let neg_nan = vecs(&[&[f64::NAN, 0.0]]);
        assert!(matches!(
            solve(&pos, &neg_nan, 1.0, 1e-4),
            Err(Error::NonFinite(_))
        ));
        assert!(solve(&[], &vecs(&[&[1.0]]), 1.0, 1e-4).is_err());
        assert!(solve(&vecs(&[&[1.0]]), &[], 1.0, 1e-4).is_err());
    }

    #[test]
    fn score_examples_and_linearity() {
        let zero = LinearModel {
            w: vec![0.0, 0.0],
            b: 0.0,
            meta: ModelMeta::default(),
        };
        // 0 > -1, so a zero model still fires.
        assert_eq!(zero.score(&[3.0, -4.0]).unwrap(), 0.0);

        let e1 = LinearModel {
            w: vec![1.0, 0.0],
            b: -1.0,
            meta: ModelMeta::default(),
        };
        assert_eq!(e1.score(&[0.5, 9.0]).unwrap(), -0.5);
        assert!(e1.score(&[0.5]).is_err());

        // score(x + y) = score(x) + score(y) - b
        let m = LinearModel {
            w: vec![0.3, -0.7],
            b: 0.25,
            meta: ModelMeta::default(),
        };
        let x = [1.0, 2.0];
        let y = [-0.5, 0.4];
        let xy = [x[0] + y[0], x[1] + y[1]];
        let lhs = m.score(&xy).unwrap();
        let rhs = m.score(&x).unwrap() + m.score(&y).unwrap() - m.b;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_probe_never_improves_beyond_tol() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for case in 0..5 {
            let d = 3 + case % 3;
            let n_pos = 4 + case;
            let n_neg = 5 + case;
            let gen = |rng: &mut rand_chacha::ChaCha8Rng, shift: f64| -> Vec<f64> {
                (0..d).map(|_| rng.gen_range(-1.0..1.0) + shift).collect()
            };
            let pos: Vec<Vec<f64>> = (0..n_pos).map(|_| gen(&mut rng, 0.4)).collect();
            let neg: Vec<Vec<f64>> = (0..n_neg).map(|_| gen(&mut rng, -0.4)).collect();
            let c = 0.5;
            let tol = 1e-6;
            let model = solve(&pos, &neg, c, tol).unwrap();
            let f0 = model.meta.final_objective;
            let h = 1e-4;
            for _ in 0..20 {
                let dir: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut w = model.w.clone();
                for j in 0..d {
                    w[j] += h * dir[j] / norm;
                }
                let b = model.b + h * dir[d] / norm;
                let f = objective(&w, b, DEFAULT_BIAS_SCALE, &pos, &neg, c);
                assert!(
                    f >= f0 - tol * f0.abs().max(1.0),
                    "probe decreased objective: {f0} -> {f}"
                );
            }
        }
    }
}
