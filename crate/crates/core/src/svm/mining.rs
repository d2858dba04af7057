//! Detector training with iterative hard negative mining.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{GrayImage, PixelPatch};
use crate::error::{Error, Result};
use crate::features::{ncc, HogPyramid, PatchRef};
use crate::svm::solver::{dot, solve_with_bias, LinearModel, SvmConfig};

/// Side length for NCC comparisons; candidate and exclusion patches are
/// resampled to this size.
const NCC_PATCH_SIDE: u32 = 64;

/// One image of the negative pool. `image` is only needed when NCC-based
/// near-duplicate exclusion is in effect (entries without pixel data skip
/// the check).
pub struct PoolEntry<'a> {
    pub pyramid: &'a HogPyramid,
    pub image: Option<&'a GrayImage>,
}

/// The negative pool: every valid window of every entry's pyramid.
pub struct NegativePool<'a> {
    entries: Vec<PoolEntry<'a>>,
    offsets: Vec<usize>,
    total: usize,
}

impl<'a> NegativePool<'a> {
    pub fn new(entries: Vec<PoolEntry<'a>>) -> Self {
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total = 0;
        for e in &entries {
            offsets.push(total);
            total += e.pyramid.num_windows();
        }
        NegativePool {
            entries,
            offsets,
            total,
        }
    }

    pub fn entries(&self) -> &[PoolEntry<'a>] {
        &self.entries
    }

    pub fn total_windows(&self) -> usize {
        self.total
    }

    fn window_at(&self, idx: usize) -> (usize, PatchRef) {
        let e = match self.offsets.binary_search(&idx) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let r = self.entries[e]
            .pyramid
            .window_at(idx - self.offsets[e])
            .expect("index within pool");
        (e, r)
    }
}

struct Cache {
    keys: Vec<(usize, usize, usize, usize)>,
    descs: Vec<Vec<f64>>,
    scores: Vec<f64>,
    seen: HashSet<(usize, usize, usize, usize)>,
}

impl Cache {
    fn new() -> Self {
        Cache {
            keys: Vec::new(),
            descs: Vec::new(),
            scores: Vec::new(),
            seen: HashSet::new(),
        }
    }

    fn push(&mut self, key: (usize, usize, usize, usize), desc: Vec<f64>, score: f64) -> bool {
        if !self.seen.insert(key) {
            return false;
        }
        self.keys.push(key);
        self.descs.push(desc);
        self.scores.push(score);
        true
    }

    /// Rescore with `model`, then drop the lowest-scoring entries beyond
    /// `cap` (ties broken by key so eviction is deterministic).
    fn evict_beyond(&mut self, cap: usize, model: &LinearModel) {
        if self.keys.len() <= cap {
            return;
        }
        for (s, d) in self.scores.iter_mut().zip(&self.descs) {
            *s = dot(&model.w, d) + model.b;
        }
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("finite scores")
                .then_with(|| self.keys[a].cmp(&self.keys[b]))
        });
        order.truncate(cap);
        order.sort_unstable();
        let mut keys = Vec::with_capacity(cap);
        let mut descs = Vec::with_capacity(cap);
        let mut scores = Vec::with_capacity(cap);
        self.seen.clear();
        for i in order {
            self.seen.insert(self.keys[i]);
            keys.push(self.keys[i]);
            descs.push(std::mem::take(&mut self.descs[i]));
            scores.push(self.scores[i]);
        }
        self.keys = keys;
        self.descs = descs;
        self.scores = scores;
    }
}

fn is_near_duplicate(
    entry: &PoolEntry,
    r: &PatchRef,
    exclusions: &[PixelPatch],
    threshold: f64,
) -> bool {
    if exclusions.is_empty() {
        return false;
    }
    let Some(img) = entry.image else {
        return false;
    };
    let rect = entry.pyramid.footprint(r).expect("valid window");
    let patch = img.extract_patch(&rect, NCC_PATCH_SIDE, NCC_PATCH_SIDE);
    exclusions.iter().any(|e| match ncc(&patch, e) {
        Ok(corr) => corr > threshold,
        Err(_) => false, // zero variance: treat as non-duplicate
    })
}

/// Train a detector for one cluster: round 0 fits against a seeded random
/// negative sample, then each mining round scans the pool, appends firings
/// (score above the floor) that are not near-duplicates of a positive,
/// evicts the lowest-scoring cached negatives beyond the cap, and retrains.
/// Runs `mining_rounds` scans, stopping early once a scan mines nothing.
pub fn train_detector(
    positives: &[Vec<f64>],
    pool: &NegativePool,
    cfg: &SvmConfig,
    exclusions: &[PixelPatch],
) -> Result<LinearModel> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyInput("positives"));
    }
    if pool.total_windows() == 0 {
        return Err(Error::EmptyInput("negative pool"));
    }
    let dim = pool.entries[0].pyramid.descriptor_len();
    for p in positives {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
    }
    let exclusions: Vec<PixelPatch> = exclusions
        .iter()
        .map(|p| p.resampled(NCC_PATCH_SIDE, NCC_PATCH_SIDE))
        .collect();

    // Round 0: seeded random negative sample.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.round0_negatives.min(pool.total_windows()).max(1);
    let mut cache = Cache::new();
    let mut buf = vec![0.0f64; dim];
    for idx in rand::seq::index::sample(&mut rng, pool.total_windows(), k).iter() {
        let (e, r) = pool.window_at(idx);
        if is_near_duplicate(&pool.entries[e], &r, &exclusions, cfg.ncc_threshold) {
            continue;
        }
        pool.entries[e]
            .pyramid
            .descriptor_into(&r, &mut buf)
            .expect("valid window");
        cache.push((e, r.level, r.cy, r.cx), buf.clone(), 0.0);
    }
    if cache.descs.is_empty() {
        return Err(Error::EmptyInput("negatives after near-duplicate exclusion"));
    }

    let mut model = solve_with_bias(positives, &cache.descs, cfg.c, cfg.solver_tol, cfg.bias_scale)?;
    let mut mined_total = 0usize;
    let mut rounds_run = 0u32;

    for round in 1..=cfg.mining_rounds {
        // Scan the pool for hard negatives under the current model.
        let mut new: Vec<((usize, usize, usize, usize), Vec<f64>, f64)> = Vec::new();
        for (e, entry) in pool.entries.iter().enumerate() {
            for r in entry.pyramid.windows() {
                entry
                    .pyramid
                    .descriptor_into(&r, &mut buf)
                    .expect("valid window");
                let s = dot(&model.w, &buf) + model.b;
                if s <= cfg.score_floor {
                    continue;
                }
                let key = (e, r.level, r.cy, r.cx);
                if cache.seen.contains(&key) {
                    continue;
                }
                if is_near_duplicate(entry, &r, &exclusions, cfg.ncc_threshold) {
                    continue;
                }
                new.push((key, buf.clone(), s));
            }
        }
        if new.is_empty() {
            break;
        }
        for (key, desc, s) in new {
            if cache.push(key, desc, s) {
                mined_total += 1;
            }
        }
        cache.evict_beyond(cfg.negative_cache_cap, &model);
        model = solve_with_bias(positives, &cache.descs, cfg.c, cfg.solver_tol, cfg.bias_scale)?;
        rounds_run = round as u32;
        log::debug!(
            "mining round {round}: cache {} negatives, objective {:.6}",
            cache.descs.len(),
            model.meta.final_objective
        );
    }

    model.meta.iteration = rounds_run;
    model.meta.num_positives = positives.len();
    model.meta.num_mined_negatives = mined_total;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::synth::{render_corpus, SynthConfig};
    use crate::corpus::Role;
    use crate::features::{compute_pyramid, extract_descriptor, HogConfig};
    use crate::geometry::RectF;

    fn noise_image(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| 0.5 + 0.05 * rng.gen_range(-1.0f32..1.0))
    }

    /// Concentric rings planted at a fixed position; non-periodic, so
    /// off-center crops are genuinely different patterns.
    fn glyph_image(seed: u64) -> (GrayImage, RectF) {
        let rect = RectF::new(24.0, 24.0, 80.0, 80.0);
        let mut img = noise_image(160, 160, seed);
        for y in 24..104u32 {
            for x in 24..104u32 {
                let u = (x as f64 - 24.0 + 0.5) / 80.0 - 0.5;
                let v = (y as f64 - 24.0 + 0.5) / 80.0 - 0.5;
                let r = (u * u + v * v).sqrt() / 0.5;
                let on = (r * 4.0).floor() as i64 % 2 == 0;
                img.set(x, y, if on { 0.9 } else { 0.1 });
            }
        }
        (img, rect)
    }

    fn desk_cfg() -> SvmConfig {
        SvmConfig {
            c: 0.1,
            mining_rounds: 12,
            negative_cache_cap: 3000,
            round0_negatives: 400,
            solver_tol: 1e-5,
            seed: 7,
            ..SvmConfig::default()
        }
    }

    #[test]
    fn default_parameters_match_training_protocol() {
        let cfg = SvmConfig::default();
        assert_eq!(cfg.c, 0.1);
        assert_eq!(cfg.mining_rounds, 12);
        assert_eq!(cfg.score_floor, -1.0);
        assert_eq!(cfg.ncc_threshold, 0.4);
    }

    #[test]
    fn planted_positives_vs_noise_pool_separate_cleanly() {
        // Positives: the same checkered glyph planted in three images.
        // Pool: pure noise. After mining, every pool window must score
        // negative while a held-out glyph patch scores positive.
        let hog = HogConfig::default();
        let corpus = render_corpus(&SynthConfig {
            num_images: 4,
            natural_images: 4,
            pattern_classes: 1,
            patterns_per_image: (1, 1),
            pattern_scale_range: (80, 80),
            image_size: (160, 160),
            seed: 13,
            ..SynthConfig::default()
        })
        .unwrap();

        let discovery: Vec<_> = corpus
            .images
            .iter()
            .filter(|s| s.role == Role::Discovery)
            .collect();
        let natural: Vec<_> = corpus
            .images
            .iter()
            .filter(|s| s.role == Role::Natural)
            .collect();

        let d_pyrs: Vec<_> = discovery
            .iter()
            .map(|s| compute_pyramid(&s.image, s.id.as_str(), &hog))
            .collect();
        let n_pyrs: Vec<_> = natural
            .iter()
            .map(|s| compute_pyramid(&s.image, s.id.as_str(), &hog))
            .collect();

        // Train on the first three planted patches, hold out the fourth.
        let mut positives = Vec::new();
        for (s, p) in discovery.iter().zip(&d_pyrs).take(3) {
            let r = p.best_window_for(&s.annotations[0].bbox).unwrap();
            positives.push(extract_descriptor(p, &r).unwrap().values);
        }
        let pool = NegativePool::new(
            n_pyrs
                .iter()
                .map(|p| PoolEntry {
                    pyramid: p,
                    image: None,
                })
                .collect(),
        );
        let model = train_detector(&positives, &pool, &desk_cfg(), &[]).unwrap();

        // Exhaustive scan oracle over the pool.
        let mut buf = vec![0.0; d_pyrs[0].descriptor_len()];
        let mut max_pool_score = f64::NEG_INFINITY;
        for p in &n_pyrs {
            for r in p.windows() {
                p.descriptor_into(&r, &mut buf).unwrap();
                max_pool_score = max_pool_score.max(dot(&model.w, &buf) + model.b);
            }
        }
        assert!(
            max_pool_score < 0.0,
            "pool negatives should score below zero, max {max_pool_score}"
        );

        let held_out = &discovery[3];
        let r = d_pyrs[3].best_window_for(&held_out.annotations[0].bbox).unwrap();
        let d = extract_descriptor(&d_pyrs[3], &r).unwrap();
        let s = model.score(&d.values).unwrap();
        assert!(s > 0.0, "held-out planted patch scored {s}");
    }

    /// 80x80 rings glyph with a touch of noise; exactly one valid window.
    fn glyph80(seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(80, 80, |x, y| {
            let u = (x as f64 + 0.5) / 80.0 - 0.5;
            let v = (y as f64 + 0.5) / 80.0 - 0.5;
            let r = (u * u + v * v).sqrt() / 0.5;
            let base = if (r * 4.0).floor() as i64 % 2 == 0 { 0.85 } else { 0.15 };
            base + 0.02 * rng.gen_range(-1.0f32..1.0)
        })
    }

    #[test]
    fn exact_copy_of_positive_is_excluded_from_mining() {
        // The positive's own image sits in the negative pool (the
        // D1-within-N1 configuration). Its single window is an exact copy
        // (NCC = 1.0 > 0.4); with exclusion in effect it must never be
        // mined, so only the noise image supplies negatives.
        let hog = HogConfig::default();
        let img_a = glyph80(1);
        let img_held = glyph80(2);
        let noise = noise_image(160, 160, 9);

        let pyr_a = compute_pyramid(&img_a, "a", &hog);
        let pyr_held = compute_pyramid(&img_held, "h", &hog);
        let pyr_n = compute_pyramid(&noise, "n", &hog);
        assert_eq!(pyr_a.num_windows(), 1);

        let r_a = pyr_a.windows().next().unwrap();
        let positives = vec![extract_descriptor(&pyr_a, &r_a).unwrap().values];
        let excl_rect = pyr_a.footprint(&r_a).unwrap();
        let exclusion = img_a.extract_patch(&excl_rect, 64, 64);

        let make_pool = || {
            NegativePool::new(vec![
                PoolEntry {
                    pyramid: &pyr_a,
                    image: Some(&img_a),
                },
                PoolEntry {
                    pyramid: &pyr_n,
                    image: Some(&noise),
                },
            ])
        };

        // A single positive at the default C = 0.1 is cheaper to sacrifice
        // than to fit; raise C so the hinge on the one positive binds.
        let cfg = SvmConfig {
            round0_negatives: 200,
            seed: 5,
            c: 5.0,
            ..desk_cfg()
        };
        let with_exclusion =
            train_detector(&positives, &make_pool(), &cfg, std::slice::from_ref(&exclusion))
                .unwrap();
        let without_exclusion = train_detector(&positives, &make_pool(), &cfg, &[]).unwrap();

        let r_h = pyr_held.windows().next().unwrap();
        let d_h = extract_descriptor(&pyr_held, &r_h).unwrap();
        let s_with = with_exclusion.score(&d_h.values).unwrap();
        let s_without = without_exclusion.score(&d_h.values).unwrap();
        assert!(
            s_with > 0.0,
            "with exclusion the glyph must stay positive, got {s_with}"
        );
        assert!(
            s_with > s_without + 0.5,
            "mining the copy as a negative must hurt the glyph score ({s_with} vs {s_without})"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let hog = HogConfig::default();
        let (img_a, rect) = glyph_image(4);
        let pyr_a = compute_pyramid(&img_a, "a", &hog);
        let noise = noise_image(160, 160, 9);
        let pyr_n = compute_pyramid(&noise, "n", &hog);

        let r_a = pyr_a.best_window_for(&rect).unwrap();
        let positives = vec![extract_descriptor(&pyr_a, &r_a).unwrap().values];
        let cfg = desk_cfg();
        let run = || {
            let pool = NegativePool::new(vec![PoolEntry {
                pyramid: &pyr_n,
                image: None,
            }]);
            train_detector(&positives, &pool, &cfg, &[]).unwrap()
        };
        let m1 = run();
        let m2 = run();
        assert_eq!(m1.w, m2.w);
        assert_eq!(m1.b, m2.b);
        assert_eq!(m1.meta, m2.meta);
    }

    #[test]
    fn empty_inputs_error() {
        let hog = HogConfig::default();
        let noise = noise_image(160, 160, 1);
        let pyr = compute_pyramid(&noise, "n", &hog);
        let pool = NegativePool::new(vec![PoolEntry {
            pyramid: &pyr,
            image: None,
        }]);
        assert!(train_detector(&[], &pool, &SvmConfig::default(), &[]).is_err());

        let empty_pool = NegativePool::new(vec![]);
        let positives = vec![vec![0.0; pyr.descriptor_len()]];
        assert!(train_detector(&positives, &empty_pool, &SvmConfig::default(), &[]).is_err());
    }
}
