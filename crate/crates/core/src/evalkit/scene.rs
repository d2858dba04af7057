//! Detector-based scene features (spatial-pyramid max-pooling) and
//! one-vs-all linear classification.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RectF;
use crate::svm::{solve, LinearModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialPyramidSpec {
    /// Grid sizes per pyramid level; `[1, 2]` yields 1 + 4 = 5 regions.
    pub levels: Vec<usize>,
}

impl Default for SpatialPyramidSpec {
    fn default() -> Self {
        SpatialPyramidSpec { levels: vec![1, 2] }
    }
}

impl SpatialPyramidSpec {
    pub fn num_regions(&self) -> usize {
        self.levels.iter().map(|g| g * g).sum()
    }

    /// Region index of a point, or None when outside the image. Regions
    /// are ordered level by level, row-major within each grid.
    pub fn region_of(&self, x: f64, y: f64, img_w: f64, img_h: f64, level_idx: usize) -> usize {
        let g = self.levels[level_idx];
        let col = ((x / img_w * g as f64).floor() as usize).min(g - 1);
        let row = ((y / img_h * g as f64).floor() as usize).min(g - 1);
        let offset: usize = self.levels[..level_idx].iter().map(|l| l * l).sum();
        offset + row * g + col
    }
}

/// Max-pooled detector responses over spatial-pyramid regions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFeature {
    pub image_id: Arc<str>,
    /// `num_detectors * num_regions` entries; missing responses sit at the
    /// score floor.
    pub values: Vec<f64>,
}

/// Pool per-detector detections into a fixed-length feature: entry
/// `(d, region)` holds the maximum score of detector `d` whose detection
/// center lies in that region, or `floor` when none does. Detection order
/// is irrelevant, and adding a detection never decreases any entry.
pub fn sp_max_pool(
    per_detector: &[Vec<(RectF, f64)>],
    img_w: f64,
    img_h: f64,
    spec: &SpatialPyramidSpec,
    floor: f64,
) -> Vec<f64> {
    let regions = spec.num_regions();
    let mut values = vec![floor; per_detector.len() * regions];
    for (d, dets) in per_detector.iter().enumerate() {
        for (rect, score) in dets {
            let (cx, cy) = rect.center();
            for li in 0..spec.levels.len() {
                let region = spec.region_of(cx, cy, img_w, img_h, li);
                let slot = &mut values[d * regions + region];
                if *score > *slot {
                    *slot = *score;
                }
            }
        }
    }
    values
}

/// One binary one-vs-all model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneClass {
    pub label: String,
    pub model: LinearModel,
}

/// Train one linear SVM per class (this class vs the rest). Classes are
/// ordered by label; prediction ties break toward the earlier class.
pub fn train_scene_classifier(
    features: &[(String, Vec<f64>)],
    c: f64,
    tol: f64,
) -> Result<Vec<SceneClass>> {
    let mut by_label: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
    for (label, f) in features {
        by_label.entry(label).or_default().push(f);
    }
    if by_label.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "one-vs-all classification needs at least 2 classes, got {}",
            by_label.len()
        )));
    }
    let labels: Vec<&str> = by_label.keys().copied().collect();
    let mut classes = Vec::with_capacity(labels.len());
    for label in labels {
        let positives: Vec<Vec<f64>> = by_label[label].iter().map(|f| (*f).clone()).collect();
        let negatives: Vec<Vec<f64>> = features
            .iter()
            .filter(|(l, _)| l != label)
            .map(|(_, f)| f.clone())
            .collect();
        let model = solve(&positives, &negatives, c, tol)?;
        classes.push(SceneClass {
            label: label.to_string(),
            model,
        });
    }
    Ok(classes)
}

/// Argmax class score; ties break by class order.
pub fn predict_scene<'a>(classes: &'a [SceneClass], feature: &[f64]) -> Result<&'a str> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("scene classes"));
    }
    let mut best: Option<(&str, f64)> = None;
    for c in classes {
        let s = c.model.score(feature)?;
        match best {
            Some((_, b)) if b >= s => {}
            _ => best = Some((c.label.as_str(), s)),
        }
    }
    Ok(best.expect("nonempty classes").0)
}

/// Fraction of labeled features predicted correctly.
pub fn classification_accuracy(
    classes: &[SceneClass],
    labeled: &[(String, Vec<f64>)],
) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("labeled features"));
    }
    let mut hits = 0usize;
    for (label, f) in labeled {
        if predict_scene(classes, f)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labeled.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_detections_pool_to_the_floor() {
        let spec = SpatialPyramidSpec::default();
        let v = sp_max_pool(&[vec![], vec![]], 100.0, 100.0, &spec, -1.0);
        assert_eq!(v.len(), 2 * 5);
        assert!(v.iter().all(|&x| x == -1.0));
    }

    #[test]
    fn feature_length_is_detectors_times_regions() {
        // 210 detectors x 5 regions -> 1050 entries.
        let spec = SpatialPyramidSpec::default();
        assert_eq!(spec.num_regions(), 5);
        let dets: Vec<Vec<(RectF, f64)>> = vec![vec![]; 210];
        assert_eq!(sp_max_pool(&dets, 10.0, 10.0, &spec, -1.0).len(), 1050);
    }

    #[test]
    fn single_detection_lands_in_global_and_quadrant_regions_only() {
        let spec = SpatialPyramidSpec::default();
        // Center (20, 20) of a 100x100 image: region 0 (1x1) and the
        // top-left cell of the 2x2 grid (region 1).
        let dets = vec![vec![(RectF::new(10.0, 10.0, 20.0, 20.0), 0.7)]];
        let v = sp_max_pool(&dets, 100.0, 100.0, &spec, -1.0);
        assert_eq!(v[0], 0.7);
        assert_eq!(v[1], 0.7);
        for (i, &x) in v.iter().enumerate().skip(2) {
            assert_eq!(x, -1.0, "region {i} should stay at the floor");
        }
    }

    #[test]
    fn pooling_is_permutation_invariant_and_monotone() {
        let spec = SpatialPyramidSpec::default();
        let a = (RectF::new(5.0, 5.0, 10.0, 10.0), 0.3);
        let b = (RectF::new(60.0, 60.0, 10.0, 10.0), 0.9);
        let c = (RectF::new(8.0, 6.0, 10.0, 10.0), 0.5);
        let v1 = sp_max_pool(&[vec![a, b, c]], 100.0, 100.0, &spec, -1.0);
        let v2 = sp_max_pool(&[vec![c, b, a]], 100.0, 100.0, &spec, -1.0);
        assert_eq!(v1, v2);

        let fewer = sp_max_pool(&[vec![a, b]], 100.0, 100.0, &spec, -1.0);
        for (with_c, without_c) in v1.iter().zip(&fewer) {
            assert!(with_c >= without_c, "adding a detection decreased an entry");
        }
    }

    #[test]
    fn separable_classes_reach_full_training_accuracy() {
        let mut features = Vec::new();
        for i in 0..6 {
            features.push(("left".to_string(), vec![-1.0 - 0.1 * i as f64, 0.4]));
            features.push(("right".to_string(), vec![1.0 + 0.1 * i as f64, -0.2]));
        }
        let classes = train_scene_classifier(&features, 10.0, 1e-6).unwrap();
        assert_eq!(classification_accuracy(&classes, &features).unwrap(), 1.0);
    }

    #[test]
    fn single_class_errors() {
        let features = vec![("only".to_string(), vec![1.0])];
        assert!(train_scene_classifier(&features, 1.0, 1e-4).is_err());
    }

    #[test]
    fn prediction_invariant_under_common_positive_scaling() {
        let features = vec![
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
            ("a".to_string(), vec![0.9, 0.1]),
            ("b".to_string(), vec![0.2, 0.8]),
        ];
        let classes = train_scene_classifier(&features, 5.0, 1e-6).unwrap();
        let scaled: Vec<SceneClass> = classes
            .iter()
            .map(|c| SceneClass {
                label: c.label.clone(),
                model: LinearModel {
                    w: c.model.w.iter().map(|w| w * 3.5).collect(),
                    b: c.model.b * 3.5,
                    meta: c.model.meta.clone(),
                },
            })
            .collect();
        for (_, f) in &features {
            assert_eq!(
                predict_scene(&classes, f).unwrap(),
                predict_scene(&scaled, f).unwrap()
            );
        }
    }
}
