//! Ground-truth label assignment for patches and clusters.

use std::collections::BTreeMap;

use crate::corpus::{Annotation, AnnotationMap};
use crate::error::{Error, Result};
use crate::features::{HogPyramid, PatchRef};
use crate::geometry::RectF;

/// Default fraction of a patch's area that must be covered by an annotated
/// box for the patch to take its label.
pub const DEFAULT_LABEL_OVERLAP: f64 = 0.5;

/// Label of the annotated box maximizing overlap with the footprint, if it
/// covers at least `min_overlap` of the patch's area; `None` is background.
/// Ties go to the earliest annotation.
pub fn patch_label<'a>(
    footprint: &RectF,
    annotations: &'a [Annotation],
    min_overlap: f64,
) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for a in annotations {
        let frac = footprint.overlap_fraction(&a.bbox);
        match best {
            Some((_, b)) if b >= frac => {}
            _ => best = Some((a.label.as_str(), frac)),
        }
    }
    best.filter(|(_, frac)| *frac >= min_overlap).map(|(l, _)| l)
}

/// Resolve a patch ref's footprint through its pyramid and label it.
/// Errors when the annotation map has no entry for the patch's image.
pub fn patch_label_for(
    r: &PatchRef,
    pyramid: &HogPyramid,
    annotations: &AnnotationMap,
    min_overlap: f64,
) -> Result<Option<String>> {
    let anns = annotations
        .get(r.image_id.as_ref())
        .ok_or_else(|| Error::UnknownImage(r.image_id.to_string()))?;
    let rect = pyramid.footprint(r)?;
    Ok(patch_label(&rect, anns, min_overlap).map(str::to_string))
}

/// Majority non-background label of a member list and the fraction of
/// members carrying it. All-background clusters score 0 purity.
pub fn majority_label<'a, I>(labels: I) -> (f64, Option<String>)
where
    I: IntoIterator<Item = Option<&'a str>>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for l in labels {
        total += 1;
        if let Some(l) = l {
            *counts.entry(l).or_default() += 1;
        }
    }
    if total == 0 {
        return (0.0, None);
    }
    // Ties resolve to the lexicographically first label (map key order).
    let mut best: Option<(&str, usize)> = None;
    for (label, c) in counts {
        match best {
            Some((_, bc)) if bc >= c => {}
            _ => best = Some((label, c)),
        }
    }
    match best {
        Some((label, c)) => (c as f64 / total as f64, Some(label.to_string())),
        None => (0.0, None),
    }
}
