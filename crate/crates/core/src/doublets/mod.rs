//! Second-order spatial co-occurrence mining: detector pairs whose
//! relative placement is consistent across images become doublets, ranked
//! on a held-out fold and usable to clean up impure clusters.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::RectF;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoubletConfig {
    /// Minimum number of co-firing images behind a candidate.
    pub min_support: usize,
    /// Maximum per-axis positional spread (root-width units).
    pub pos_spread: f64,
    /// Maximum spread of the log scale ratio.
    pub scale_spread: f64,
    /// Positional tolerance when checking consistency (root-width units).
    pub pos_tol: f64,
    /// Log-scale tolerance when checking consistency.
    pub scale_tol: f64,
    /// How many top-ranked clusters serve as roots.
    pub max_roots: usize,
}

impl Default for DoubletConfig {
    fn default() -> Self {
        DoubletConfig {
            min_support: 3,
            pos_spread: 0.5,
            scale_spread: 0.7,
            pos_tol: 0.5,
            scale_tol: 0.7,
            max_roots: 20,
        }
    }
}

/// Relative spatial configuration of a secondary detection w.r.t. a root:
/// center offset in root-width units plus log scale ratio. Invariant to
/// rescaling the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialRel {
    pub dx: f64,
    pub dy: f64,
    pub ds: f64,
}

impl SpatialRel {
    pub fn between(root: &RectF, secondary: &RectF) -> SpatialRel {
        let (rx, ry) = root.center();
        let (sx, sy) = secondary.center();
        SpatialRel {
            dx: (sx - rx) / root.w,
            dy: (sy - ry) / root.w,
            ds: (secondary.w / root.w).ln(),
        }
    }

    pub fn within(&self, other: &SpatialRel, pos_tol: f64, scale_tol: f64) -> bool {
        (self.dx - other.dx).abs() <= pos_tol
            && (self.dy - other.dy).abs() <= pos_tol
            && (self.ds - other.ds).abs() <= scale_tol
    }
}

/// Per-axis standard deviation of the observed rels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelSpread {
    pub sx: f64,
    pub sy: f64,
    pub ss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Doublet {
    pub root_id: u32,
    pub secondary_id: u32,
    /// Median rel over the mining fold's co-firing images.
    pub rel: SpatialRel,
    pub spread: RelSpread,
    /// Co-firing images in the mining fold.
    pub support: usize,
    /// Fraction of held-out co-firing images whose rel matches; filled by
    /// [`rank_doublets`] from a fold disjoint from the mining fold.
    pub consistency: f64,
}

/// One detection placed in native pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedDetection {
    pub cluster: u32,
    pub score: f64,
    pub rect: RectF,
}

/// Detections of one image, any order.
pub type ImageDetections = Vec<PlacedDetection>;

/// Best-scoring firing of `cluster` in an image; score ties break by
/// position so the choice is deterministic.
fn best_firing<'a>(dets: &'a [PlacedDetection], cluster: u32) -> Option<&'a PlacedDetection> {
    dets.iter()
        .filter(|d| d.cluster == cluster)
        .max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .expect("finite scores")
                .then_with(|| {
                    (b.rect.x, b.rect.y, b.rect.w)
                        .partial_cmp(&(a.rect.x, a.rect.y, a.rect.w))
                        .unwrap()
                })
        })
}

/// One rel sample per image: between the best root firing and the best
/// secondary firing (the pair maximizing the score sum).
fn rel_samples(images: &[ImageDetections], root: u32, secondary: u32) -> Vec<SpatialRel> {
    let mut rels = Vec::new();
    for dets in images {
        let (Some(r), Some(s)) = (best_firing(dets, root), best_firing(dets, secondary)) else {
            continue;
        };
        rels.push(SpatialRel::between(&r.rect, &s.rect));
    }
    rels
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Mine doublet candidates from the training fold's detections: for every
/// (root, other) pair of detectors, collect one rel per co-firing image;
/// pairs with enough support and a tight rel distribution survive. `rel` is
/// summarized by the per-axis median.
pub fn mine_doublets(
    root_ids: &[u32],
    images: &[ImageDetections],
    cfg: &DoubletConfig,
) -> Vec<Doublet> {
    let mut all_ids: BTreeSet<u32> = BTreeSet::new();
    for dets in images {
        for d in dets {
            all_ids.insert(d.cluster);
        }
    }
    let mut out = Vec::new();
    for &root in root_ids {
        for &secondary in &all_ids {
            if secondary == root {
                continue;
            }
            let rels = rel_samples(images, root, secondary);
            if rels.len() < cfg.min_support {
                continue;
            }
            let mut dx: Vec<f64> = rels.iter().map(|r| r.dx).collect();
            let mut dy: Vec<f64> = rels.iter().map(|r| r.dy).collect();
            let mut ds: Vec<f64> = rels.iter().map(|r| r.ds).collect();
            let spread = RelSpread {
                sx: std_dev(&dx),
                sy: std_dev(&dy),
                ss: std_dev(&ds),
            };
            if spread.sx.max(spread.sy) > cfg.pos_spread || spread.ss > cfg.scale_spread {
                continue;
            }
            out.push(Doublet {
                root_id: root,
                secondary_id: secondary,
                rel: SpatialRel {
                    dx: median(&mut dx),
                    dy: median(&mut dy),
                    ds: median(&mut ds),
                },
                spread,
                support: rels.len(),
                consistency: 0.0,
            });
        }
    }
    out.sort_by_key(|d| (d.root_id, d.secondary_id));
    out
}

/// Rank candidates on a validation fold disjoint from the mining fold:
/// consistency is the fraction of co-firing validation images whose
/// observed rel lies within tolerance of the mined rel. Sorted by
/// descending consistency, ties by (root, secondary).
pub fn rank_doublets(
    candidates: Vec<Doublet>,
    val_images: &[ImageDetections],
    cfg: &DoubletConfig,
) -> Vec<Doublet> {
    let mut ranked: Vec<Doublet> = candidates
        .into_iter()
        .map(|mut d| {
            let rels = rel_samples(val_images, d.root_id, d.secondary_id);
            d.consistency = if rels.is_empty() {
                0.0
            } else {
                let hits = rels
                    .iter()
                    .filter(|r| r.within(&d.rel, cfg.pos_tol, cfg.scale_tol))
                    .count();
                hits as f64 / rels.len() as f64
            };
            d
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.consistency
            .partial_cmp(&a.consistency)
            .expect("finite consistency")
            .then_with(|| (a.root_id, a.secondary_id).cmp(&(b.root_id, b.secondary_id)))
    });
    ranked
}

/// The clean-up mechanism: keep only secondary firings whose rel to some
/// root firing in the same image lies within tolerance.
pub fn doublet_filter(
    doublet: &Doublet,
    image_detections: &[PlacedDetection],
    cfg: &DoubletConfig,
) -> Vec<PlacedDetection> {
    let roots: Vec<&PlacedDetection> = image_detections
        .iter()
        .filter(|d| d.cluster == doublet.root_id)
        .collect();
    image_detections
        .iter()
        .filter(|d| {
            d.cluster == doublet.secondary_id
                && roots.iter().any(|r| {
                    SpatialRel::between(&r.rect, &d.rect).within(
                        &doublet.rel,
                        cfg.pos_tol,
                        cfg.scale_tol,
                    )
                })
        })
        .cloned()
        .collect()
}
