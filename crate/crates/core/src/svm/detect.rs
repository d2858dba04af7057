//! Sliding-window pyramid detection with greedy NMS.

use serde::{Deserialize, Serialize};

use crate::features::{HogPyramid, PatchRef};
use crate::geometry::RectF;
use crate::svm::solver::{dot, LinearModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub patch: PatchRef,
    pub score: f64,
}

/// Score every valid window; returns `(ref, score)` for scores above
/// `floor`, in (level, cy, cx) order. No suppression.
pub fn window_scores(model: &LinearModel, pyramid: &HogPyramid, floor: f64) -> Vec<(PatchRef, f64)> {
    assert_eq!(
        model.w.len(),
        pyramid.descriptor_len(),
        "model dimension must match the descriptor length"
    );
    let mut buf = vec![0.0f64; pyramid.descriptor_len()];
    let mut out = Vec::new();
    for r in pyramid.windows() {
        pyramid
            .descriptor_into(&r, &mut buf)
            .expect("enumerated window in bounds");
        let s = dot(&model.w, &buf) + model.b;
        if s > floor {
            out.push((r, s));
        }
    }
    out
}

fn by_score_then_position(a: &(PatchRef, f64), b: &(PatchRef, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .expect("finite scores")
        .then_with(|| {
            (a.0.level, a.0.cy, a.0.cx).cmp(&(b.0.level, b.0.cy, b.0.cx))
        })
}

/// Detect: keep scores above `floor`, then greedy NMS by pixel-footprint
/// IoU (higher score wins; ties broken by (level, cy, cx)). The result is
/// sorted by descending score. Pure function of `(model, pyramid)`.
pub fn detect(model: &LinearModel, pyramid: &HogPyramid, floor: f64, nms_iou: f64) -> Vec<Detection> {
    let mut candidates = window_scores(model, pyramid, floor);
    candidates.sort_by(by_score_then_position);

    let mut kept: Vec<Detection> = Vec::new();
    let mut kept_rects: Vec<RectF> = Vec::new();
    for (r, s) in candidates {
        let rect = pyramid.footprint(&r).expect("valid window");
        if kept_rects.iter().all(|k| k.iou(&rect) <= nms_iou) {
            kept.push(Detection { patch: r, score: s });
            kept_rects.push(rect);
        }
    }
    kept
}
