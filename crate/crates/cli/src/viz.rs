//! Visualization artifacts: cluster montages and average-patch overlays.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;

use patchdisc::corpus::{load_gray, DatasetManifest, GrayImage};
use patchdisc::discovery::RankedClusterFull;
use patchdisc::features::{
    compute_pyramid, footprint_from_geometry, level_geometries, HogConfig, PatchRef,
};
use patchdisc::svm::{detect, LinearModel};

const TILE: u32 = 80;
const GAP: u32 = 2;

fn image_path<'a>(manifest: &'a DatasetManifest, id: &str) -> anyhow::Result<&'a Path> {
    manifest
        .entries
        .iter()
        .find(|e| e.id == id)
        .map(|e| e.path.as_path())
        .with_context(|| format!("image {id} not in manifest"))
}

fn member_patch(
    manifest: &DatasetManifest,
    hog: &HogConfig,
    cache: &mut BTreeMap<String, GrayImage>,
    r: &PatchRef,
    side: u32,
) -> anyhow::Result<Vec<f32>> {
    let id = r.image_id.to_string();
    if !cache.contains_key(&id) {
        let img = load_gray(image_path(manifest, &id)?)?;
        cache.insert(id.clone(), img);
    }
    let img = &cache[&id];
    let geoms = level_geometries(img.width(), img.height(), hog);
    let rect = footprint_from_geometry(&geoms, r, hog)?;
    Ok(img.extract_patch(&rect, side, side).data)
}

/// Grid of a cluster's member patches, five per row.
pub fn montage(
    manifest: &DatasetManifest,
    hog: &HogConfig,
    cluster: &RankedClusterFull,
    out: &Path,
) -> anyhow::Result<()> {
    anyhow::ensure!(!cluster.members.is_empty(), "cluster has no members");
    let mut cache = BTreeMap::new();
    let tiles: Vec<Vec<f32>> = cluster
        .members
        .iter()
        .map(|r| member_patch(manifest, hog, &mut cache, r, TILE))
        .collect::<anyhow::Result<_>>()?;

    let cols = tiles.len().min(5) as u32;
    let rows = tiles.len().div_ceil(5) as u32;
    let width = cols * TILE + (cols + 1) * GAP;
    let height = rows * TILE + (rows + 1) * GAP;
    let mut canvas = image::GrayImage::from_pixel(width, height, image::Luma([32]));
    for (i, tile) in tiles.iter().enumerate() {
        let col = (i as u32) % 5;
        let row = (i as u32) / 5;
        let ox = GAP + col * (TILE + GAP);
        let oy = GAP + row * (TILE + GAP);
        for y in 0..TILE {
            for x in 0..TILE {
                let v = (tile[(y * TILE + x) as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
                canvas.put_pixel(ox + x, oy + y, image::Luma([v]));
            }
        }
    }
    canvas.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Replace high-scoring detections with the cluster's average member
/// patch, weighted by detection score, over a dimmed original.
pub fn overlay(
    manifest: &DatasetManifest,
    hog: &HogConfig,
    models: &BTreeMap<u32, LinearModel>,
    ranked: &[RankedClusterFull],
    image_id: &str,
    floor: f64,
    nms_iou: f64,
    top_k: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let img = load_gray(image_path(manifest, image_id)?)?;
    let pyramid = compute_pyramid(&img, image_id, hog);

    // Detections of every ranked detector, strongest first.
    let mut detections: Vec<(u32, f64, patchdisc::geometry::RectF)> = Vec::new();
    for r in ranked {
        let Some(model) = models.get(&r.cluster_id) else {
            continue;
        };
        for d in detect(model, &pyramid, floor, nms_iou) {
            detections.push((r.cluster_id, d.score, pyramid.footprint(&d.patch)?));
        }
    }
    detections.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
    detections.truncate(top_k);

    // Average member patch per cluster, at a fixed working resolution.
    const AVG: u32 = 64;
    let mut cache = BTreeMap::new();
    let mut avg_patches: BTreeMap<u32, Vec<f32>> = BTreeMap::new();
    for r in ranked {
        if !detections.iter().any(|(c, _, _)| *c == r.cluster_id) {
            continue;
        }
        let mut acc = vec![0.0f32; (AVG * AVG) as usize];
        let mut n = 0.0f32;
        for m in &r.members {
            let tile = member_patch(manifest, hog, &mut cache, m, AVG)?;
            for (a, v) in acc.iter_mut().zip(&tile) {
                *a += v;
            }
            n += 1.0;
        }
        if n > 0.0 {
            for a in acc.iter_mut() {
                *a /= n;
            }
            avg_patches.insert(r.cluster_id, acc);
        }
    }

    // Score-weighted accumulation of average patches at their footprints.
    let (w, h) = (img.width(), img.height());
    let mut acc = vec![0.0f32; (w * h) as usize];
    let mut weight = vec![0.0f32; (w * h) as usize];
    for (cluster, score, rect) in &detections {
        let Some(avg) = avg_patches.get(cluster) else {
            continue;
        };
        let wgt = (score - floor).max(0.0) as f32;
        if wgt == 0.0 {
            continue;
        }
        let x0 = rect.x.max(0.0) as u32;
        let y0 = rect.y.max(0.0) as u32;
        let x1 = (rect.right().min(w as f64)) as u32;
        let y1 = (rect.bottom().min(h as f64)) as u32;
        for y in y0..y1 {
            for x in x0..x1 {
                let u = ((x as f64 - rect.x) / rect.w * AVG as f64) as usize;
                let v = ((y as f64 - rect.y) / rect.h * AVG as f64) as usize;
                let s = avg[v.min(AVG as usize - 1) * AVG as usize + u.min(AVG as usize - 1)];
                let i = (y * w + x) as usize;
                acc[i] += wgt * s;
                weight[i] += wgt;
            }
        }
    }

    let canvas = image::GrayImage::from_fn(w, h, |x, y| {
        let i = (y * w + x) as usize;
        let v = if weight[i] > 0.0 {
            acc[i] / weight[i]
        } else {
            img.get(x, y) * 0.35
        };
        image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    canvas.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
