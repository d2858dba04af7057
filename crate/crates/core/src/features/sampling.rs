//! Seeded patch sampling with overlap and gradient-energy rejection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::hog::{HogPyramid, PatchRef};
use crate::geometry::RectF;
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Target number of accepted patches per image.
    pub per_image_samples: usize,
    /// Energy floor as a fraction of the corpus median window energy.
    pub energy_rel_floor: f64,
    /// Absolute energy floor; overrides the relative rule when set.
    pub energy_abs_floor: Option<f64>,
    /// Maximum footprint IoU between accepted patches of one image.
    pub max_overlap: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            per_image_samples: 150,
            energy_rel_floor: 1e-3,
            energy_abs_floor: None,
            max_overlap: 0.5,
        }
    }
}

/// Mean squared raw histogram value of every valid window, all levels.
fn window_energies(pyramid: &HogPyramid) -> Vec<f64> {
    let f = pyramid.features_per_cell();
    let mut out = Vec::with_capacity(pyramid.num_windows());
    for level in &pyramid.levels {
        for cy in 1..=level.cells_h.saturating_sub(super::hog::WINDOW_CELLS + 1) {
            for cx in 1..=level.cells_w.saturating_sub(super::hog::WINDOW_CELLS + 1) {
                out.push(level.window_energy(cx, cy, f));
            }
        }
    }
    out
}

/// Median window energy across all pyramids (0 when there are no windows).
pub fn corpus_energy_median<P>(pyramids: &[P]) -> f64
where
    P: std::borrow::Borrow<HogPyramid> + Sync,
{
    let mut energies: Vec<f64> = pyramids
        .par_iter()
        .map(|p| window_energies(p.borrow()))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if energies.is_empty() {
        return 0.0;
    }
    energies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = energies.len();
    if n % 2 == 1 {
        energies[n / 2]
    } else {
        0.5 * (energies[n / 2 - 1] + energies[n / 2])
    }
}

/// Resolve the energy floor for this corpus.
pub fn resolve_energy_floor<P>(cfg: &SampleConfig, pyramids: &[P]) -> f64
where
    P: std::borrow::Borrow<HogPyramid> + Sync,
{
    match cfg.energy_abs_floor {
        Some(v) => v,
        None => cfg.energy_rel_floor * corpus_energy_median(pyramids),
    }
}

fn sample_one(pyramid: &HogPyramid, cfg: &SampleConfig, floor: f64, image_seed: u64) -> Vec<PatchRef> {
    // Enumerate windows as (level, cy, cx) triples and walk a seeded
    // shuffle, so sampling is without replacement and deterministic.
    let mut indices: Vec<(usize, usize, usize)> = Vec::with_capacity(pyramid.num_windows());
    for (li, level) in pyramid.levels.iter().enumerate() {
        for cy in 1..=level.cells_h.saturating_sub(super::hog::WINDOW_CELLS + 1) {
            for cx in 1..=level.cells_w.saturating_sub(super::hog::WINDOW_CELLS + 1) {
                indices.push((li, cy, cx));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed);
    indices.shuffle(&mut rng);

    let f = pyramid.features_per_cell();
    let mut accepted: Vec<PatchRef> = Vec::new();
    let mut rects: Vec<RectF> = Vec::new();
    for (li, cy, cx) in indices {
        if accepted.len() >= cfg.per_image_samples {
            break;
        }
        let level = &pyramid.levels[li];
        // Zero-gradient windows are always rejected (energy <= floor, and
        // the resolved floor is never negative).
        if level.window_energy(cx, cy, f) <= floor {
            continue;
        }
        let r = PatchRef {
            image_id: pyramid.image_id.clone(),
            level: li,
            cx,
            cy,
        };
        let rect = pyramid.footprint(&r).expect("enumerated window in bounds");
        if rects.iter().any(|a| a.iou(&rect) > cfg.max_overlap) {
            continue;
        }
        rects.push(rect);
        accepted.push(r);
    }
    accepted
}

/// Sample up to `per_image_samples` patches from every pyramid.
///
/// Each image draws from its own sub-seed (derived from the master seed and
/// the image id), so results do not depend on thread count or input
/// ordering beyond the order of the returned groups.
pub fn sample_patches<P>(pyramids: &[P], cfg: &SampleConfig, master_seed: u64) -> Vec<PatchRef>
where
    P: std::borrow::Borrow<HogPyramid> + Sync,
{
    let floor = resolve_energy_floor(cfg, pyramids);
    let per_image: Vec<Vec<PatchRef>> = pyramids
        .par_iter()
        .map(|p| {
            let p = p.borrow();
            let s = seed::derive_str(master_seed, "sample", &p.image_id);
            sample_one(p, cfg, floor, s)
        })
        .collect();
    per_image.into_iter().flatten().collect()
}
