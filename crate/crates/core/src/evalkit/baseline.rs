//! Spatial-pyramid visual-words baseline over HOG descriptors.

use serde::{Deserialize, Serialize};

use crate::discovery::kmeans;
use crate::error::{Error, Result};
use crate::evalkit::scene::{classification_accuracy, train_scene_classifier, SpatialPyramidSpec};
use crate::features::{extract_descriptor, sample_patches, HogPyramid, SampleConfig};
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisualWordsConfig {
    pub vocab_size: usize,
    pub sp: SpatialPyramidSpec,
    pub c: f64,
    pub solver_tol: f64,
    pub sampling: SampleConfig,
}

impl Default for VisualWordsConfig {
    fn default() -> Self {
        VisualWordsConfig {
            vocab_size: 64,
            sp: SpatialPyramidSpec::default(),
            c: 1.0,
            solver_tol: 1e-5,
            sampling: SampleConfig {
                per_image_samples: 60,
                ..SampleConfig::default()
            },
        }
    }
}

fn nearest_word(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let mut d = 0.0;
        for (a, b) in c.iter().zip(x) {
            d += (a - b) * (a - b);
        }
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Hard-assignment word histogram per spatial-pyramid region, each region
/// L1-normalized. Entry layout: `region * vocab + word`.
pub fn vw_histogram(
    pyramid: &HogPyramid,
    centroids: &[Vec<f64>],
    cfg: &VisualWordsConfig,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let refs = sample_patches(std::slice::from_ref(pyramid), &cfg.sampling, master_seed);
    let regions = cfg.sp.num_regions();
    let vocab = centroids.len();
    let (w, h) = pyramid.native_size();
    let mut hist = vec![0.0f64; regions * vocab];
    for r in &refs {
        let d = extract_descriptor(pyramid, r)?;
        let word = nearest_word(centroids, &d.values);
        let (cx, cy) = pyramid.footprint(r)?.center();
        for li in 0..cfg.sp.levels.len() {
            let region = cfg.sp.region_of(cx, cy, w as f64, h as f64, li);
            hist[region * vocab + word] += 1.0;
        }
    }
    for region in 0..regions {
        let slice = &mut hist[region * vocab..(region + 1) * vocab];
        let total: f64 = slice.iter().sum();
        if total > 0.0 {
            for v in slice.iter_mut() {
                *v /= total;
            }
        }
    }
    Ok(hist)
}

/// Train a k-means vocabulary on patches sampled from the training
/// pyramids, featurize both folds as spatial-pyramid word histograms, fit
/// a one-vs-all linear classifier, and report held-out accuracy.
pub fn visual_words_baseline(
    train: &[(&HogPyramid, &str)],
    test: &[(&HogPyramid, &str)],
    cfg: &VisualWordsConfig,
    master_seed: u64,
) -> Result<f64> {
    if cfg.vocab_size == 0 {
        return Err(Error::InvalidConfig("vocab_size must be >= 1".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("visual-words folds"));
    }
    let sample_seed = seed::derive(master_seed, "vw-sample", 0);
    let train_pyrs: Vec<&HogPyramid> = train.iter().map(|(p, _)| *p).collect();
    let refs = sample_patches(&train_pyrs, &cfg.sampling, sample_seed);
    if refs.is_empty() {
        return Err(Error::EmptyInput("sampled vocabulary patches"));
    }
    let descriptors: Vec<Vec<f64>> = refs
        .iter()
        .map(|r| {
            let p = train_pyrs
                .iter()
                .find(|p| p.image_id == r.image_id)
                .expect("sampled from these pyramids");
            Ok(extract_descriptor(p, r)?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.vocab_size.min(descriptors.len());
    let vocab = kmeans(
        &descriptors,
        k,
        seed::derive(master_seed, "vw-kmeans", 0),
        100,
    )?;

    let featurize = |fold: &[(&HogPyramid, &str)]| -> Result<Vec<(String, Vec<f64>)>> {
        fold.iter()
            .map(|(p, label)| {
                Ok((
                    label.to_string(),
                    vw_histogram(p, &vocab.centroids, cfg, sample_seed)?,
                ))
            })
            .collect()
    };
    let train_feats = featurize(train)?;
    let test_feats = featurize(test)?;
    let classes = train_scene_classifier(&train_feats, cfg.c, cfg.solver_tol)?;
    classification_accuracy(&classes, &test_feats)
}
