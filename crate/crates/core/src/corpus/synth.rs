//! Synthetic planted-pattern corpus generator.
//!
//! Produces desk-scale corpora with known ground truth: discovery images
//! carry high-gradient glyph patterns (a distinct fixed texture per class)
//! over a low-energy noise background, natural images carry background only.
//! Every placement is recorded as an annotation, and the whole corpus is a
//! pure function of the config, including its seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::image::GrayImage;
use crate::corpus::manifest::{
    fold_assignment, Annotation, DatasetManifest, ManifestEntry, Role, MANIFEST_VERSION,
};
use crate::error::{Error, Result};
use crate::geometry::RectF;
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundModel {
    /// Mean background luminance.
    pub base: f64,
    /// Uniform noise amplitude around the base.
    pub amplitude: f64,
    /// Number of 3x3 box-blur passes applied to the noise.
    pub blur_passes: usize,
}

impl Default for BackgroundModel {
    fn default() -> Self {
        BackgroundModel {
            base: 0.5,
            amplitude: 0.08,
            blur_passes: 1,
        }
    }
}

/// How patterns are placed in discovery images.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "mode")]
pub enum Placement {
    /// `patterns_per_image` patterns of uniformly random class.
    Random,
    /// Exactly one instance of every class, independently positioned.
    OneOfEach,
    /// Image i carries patterns of class `i % pattern_classes` only; used
    /// for scene-classification corpora.
    SceneLocked,
    /// A class-0 root plus a class-1 secondary at a fixed offset from the
    /// root (in root-width units); used for doublet corpora.
    Paired {
        dx: f64,
        dy: f64,
        scale_ratio: f64,
    },
}

impl Default for Placement {
    fn default() -> Self {
        Placement::Random
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of discovery-role images.
    pub num_images: usize,
    /// Number of natural-role (background only) images.
    pub natural_images: usize,
    pub pattern_classes: usize,
    /// Inclusive range of patterns per discovery image (Random/SceneLocked).
    pub patterns_per_image: (usize, usize),
    pub background: BackgroundModel,
    /// Inclusive range of pattern side lengths, pixels; min must be >= 80
    /// so planted patterns are discoverable at the minimum patch size.
    pub pattern_scale_range: (u32, u32),
    pub image_size: (u32, u32),
    pub placement: Placement,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_images: 100,
            natural_images: 100,
            pattern_classes: 3,
            patterns_per_image: (1, 2),
            background: BackgroundModel::default(),
            pattern_scale_range: (84, 112),
            image_size: (256, 256),
            placement: Placement::Random,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pattern_classes == 0 {
            return Err(Error::InvalidConfig("pattern_classes must be >= 1".into()));
        }
        if self.pattern_scale_range.0 < 80 {
            return Err(Error::InvalidConfig(
                "pattern_scale_range min must be >= 80 px".into(),
            ));
        }
        if self.pattern_scale_range.0 > self.pattern_scale_range.1 {
            return Err(Error::InvalidConfig("empty pattern_scale_range".into()));
        }
        if self.patterns_per_image.0 > self.patterns_per_image.1 {
            return Err(Error::InvalidConfig("empty patterns_per_image range".into()));
        }
        let (w, h) = self.image_size;
        let s = self.pattern_scale_range.1;
        if s + 2 > w || s + 2 > h {
            return Err(Error::SynthInfeasible(format!(
                "largest pattern ({s} px) does not fit in a {w}x{h} image"
            )));
        }
        if let Placement::Paired { scale_ratio, .. } = self.placement {
            if self.pattern_classes < 2 {
                return Err(Error::InvalidConfig(
                    "paired placement needs at least 2 pattern classes".into(),
                ));
            }
            if scale_ratio <= 0.0 {
                return Err(Error::InvalidConfig("scale_ratio must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One rendered image plus its ground truth.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub role: Role,
    pub image: GrayImage,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub images: Vec<SynthImage>,
}

pub fn class_label(class: usize) -> String {
    format!("class{class}")
}

/// Fixed per-class glyph texture over normalized patch coordinates.
fn glyph_on(class: usize, u: f64, v: f64) -> bool {
    match class % 6 {
        0 => ((u * 4.0).floor() as i64 + (v * 4.0).floor() as i64) % 2 == 0,
        1 => {
            let du = u - 0.5;
            let dv = v - 0.5;
            let r = (du * du + dv * dv).sqrt() / 0.5;
            (r * 4.0).floor() as i64 % 2 == 0
        }
        2 => ((u + v) * 4.0).floor() as i64 % 2 == 0,
        3 => (u * 6.0).floor() as i64 % 2 == 0,
        4 => {
            let ang = (v - 0.5).atan2(u - 0.5) + std::f64::consts::PI;
            (ang / (2.0 * std::f64::consts::PI) * 8.0).floor() as i64 % 2 == 0
        }
        _ => (v * 6.0).floor() as i64 % 2 == 0,
    }
}

fn paint_glyph(img: &mut GrayImage, bbox: &RectF, class: usize, contrast: f64) {
    let hi = (0.5 + 0.38 * contrast) as f32;
    let lo = (0.5 - 0.38 * contrast) as f32;
    let x0 = bbox.x.round() as u32;
    let y0 = bbox.y.round() as u32;
    let w = bbox.w.round() as u32;
    let h = bbox.h.round() as u32;
    for dy in 0..h {
        for dx in 0..w {
            let u = (dx as f64 + 0.5) / w as f64;
            let v = (dy as f64 + 0.5) / h as f64;
            let val = if glyph_on(class, u, v) { hi } else { lo };
            img.set(x0 + dx, y0 + dy, val);
        }
    }
}

fn render_background(w: u32, h: u32, bg: &BackgroundModel, rng: &mut ChaCha8Rng) -> GrayImage {
    let mut img = GrayImage::from_fn(w, h, |_, _| {
        let n: f64 = rng.gen_range(-1.0..1.0);
        (bg.base + bg.amplitude * n).clamp(0.0, 1.0) as f32
    });
    for _ in 0..bg.blur_passes {
        img = box_blur3(&img);
    }
    img
}

fn box_blur3(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0f64;
        let mut cnt = 0.0f64;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx >= 0 && ny >= 0 && (nx as u32) < w && (ny as u32) < h {
                    acc += img.get(nx as u32, ny as u32) as f64;
                    cnt += 1.0;
                }
            }
        }
        (acc / cnt) as f32
    })
}

const PLACEMENT_ATTEMPTS: usize = 200;
/// Minimum free pixels between planted patterns and around image borders.
const PLACEMENT_MARGIN: f64 = 2.0;

fn overlaps_any(b: &RectF, placed: &[RectF]) -> bool {
    placed.iter().any(|p| {
        let grown = RectF::new(
            p.x - PLACEMENT_MARGIN,
            p.y - PLACEMENT_MARGIN,
            p.w + 2.0 * PLACEMENT_MARGIN,
            p.h + 2.0 * PLACEMENT_MARGIN,
        );
        grown.intersection_area(b) > 0.0
    })
}

fn place_pattern(
    img_w: u32,
    img_h: u32,
    size: u32,
    placed: &[RectF],
    rng: &mut ChaCha8Rng,
) -> Option<RectF> {
    let max_x = img_w as f64 - size as f64 - PLACEMENT_MARGIN;
    let max_y = img_h as f64 - size as f64 - PLACEMENT_MARGIN;
    if max_x < PLACEMENT_MARGIN || max_y < PLACEMENT_MARGIN {
        return None;
    }
    for _ in 0..PLACEMENT_ATTEMPTS {
        let x = rng.gen_range(PLACEMENT_MARGIN..=max_x).round();
        let y = rng.gen_range(PLACEMENT_MARGIN..=max_y).round();
        let b = RectF::new(x, y, size as f64, size as f64);
        if !overlaps_any(&b, placed) {
            return Some(b);
        }
    }
    None
}

/// How many whole-plan retries before declaring a layout infeasible; a
/// single awkward placement (e.g. one large pattern dead center) must not
/// fail the image when a fresh draw fits.
const PLAN_ATTEMPTS: usize = 50;

/// One attempt at laying out `(class, size)` patterns; None when any
/// placement fails.
fn try_layout(
    w: u32,
    h: u32,
    wanted: &[(usize, u32)],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<(usize, RectF)>> {
    let mut placed: Vec<RectF> = Vec::new();
    let mut out = Vec::new();
    for &(class, size) in wanted {
        let b = place_pattern(w, h, size, &placed, rng)?;
        placed.push(b);
        out.push((class, b));
    }
    Some(out)
}

/// (class, bbox) placements for one discovery image.
fn plan_image(
    cfg: &SynthConfig,
    image_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, RectF)>> {
    let (w, h) = cfg.image_size;
    let (smin, smax) = cfg.pattern_scale_range;
    let mut out = Vec::new();

    match cfg.placement {
        Placement::Random | Placement::OneOfEach | Placement::SceneLocked => {
            for attempt in 0..=PLAN_ATTEMPTS {
                let wanted: Vec<(usize, u32)> = match cfg.placement {
                    Placement::Random => {
                        let count =
                            rng.gen_range(cfg.patterns_per_image.0..=cfg.patterns_per_image.1);
                        (0..count)
                            .map(|_| {
                                (rng.gen_range(0..cfg.pattern_classes), rng.gen_range(smin..=smax))
                            })
                            .collect()
                    }
                    Placement::OneOfEach => (0..cfg.pattern_classes)
                        .map(|class| (class, rng.gen_range(smin..=smax)))
                        .collect(),
                    Placement::SceneLocked => {
                        let class = image_index % cfg.pattern_classes;
                        let count =
                            rng.gen_range(cfg.patterns_per_image.0..=cfg.patterns_per_image.1);
                        (0..count).map(|_| (class, rng.gen_range(smin..=smax))).collect()
                    }
                    Placement::Paired { .. } => unreachable!(),
                };
                if let Some(plan) = try_layout(w, h, &wanted, rng) {
                    out = plan;
                    break;
                }
                if attempt == PLAN_ATTEMPTS {
                    return Err(Error::SynthInfeasible(format!(
                        "could not place {} patterns in image {image_index} ({w}x{h})",
                        wanted.len()
                    )));
                }
            }
        }
        Placement::Paired {
            dx,
            dy,
            scale_ratio,
        } => {
            let root_size = rng.gen_range(smin..=smax);
            let sec_size = ((root_size as f64 * scale_ratio).round() as u32).max(8);
            for _ in 0..PLACEMENT_ATTEMPTS {
                let root = match place_pattern(w, h, root_size, &[], rng) {
                    Some(b) => b,
                    None => break,
                };
                let (rcx, rcy) = root.center();
                let scx = rcx + dx * root.w;
                let scy = rcy + dy * root.w;
                let sec = RectF::new(
                    (scx - sec_size as f64 / 2.0).round(),
                    (scy - sec_size as f64 / 2.0).round(),
                    sec_size as f64,
                    sec_size as f64,
                );
                let in_bounds = sec.x >= PLACEMENT_MARGIN
                    && sec.y >= PLACEMENT_MARGIN
                    && sec.right() <= w as f64 - PLACEMENT_MARGIN
                    && sec.bottom() <= h as f64 - PLACEMENT_MARGIN;
                if in_bounds && !overlaps_any(&sec, &[root]) {
                    out.push((0, root));
                    out.push((1, sec));
                    break;
                }
            }
            if out.is_empty() {
                return Err(Error::SynthInfeasible(format!(
                    "could not place the root/secondary pair in image {image_index}"
                )));
            }
        }
    }
    Ok(out)
}

/// Render the corpus in memory.
pub fn render_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let (w, h) = cfg.image_size;
    let mut images = Vec::with_capacity(cfg.num_images + cfg.natural_images);

    for i in 0..cfg.num_images {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "synth-discovery", i as u64));
        let mut img = render_background(w, h, &cfg.background, &mut rng);
        let plan = plan_image(cfg, i, &mut rng)?;
        let mut annotations = Vec::with_capacity(plan.len());
        for (class, bbox) in plan {
            let contrast = rng.gen_range(0.85..1.0);
            paint_glyph(&mut img, &bbox, class, contrast);
            annotations.push(Annotation {
                label: class_label(class),
                bbox,
            });
        }
        images.push(SynthImage {
            id: format!("d{i:04}"),
            role: Role::Discovery,
            image: img,
            annotations,
        });
    }

    for i in 0..cfg.natural_images {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "synth-natural", i as u64));
        let img = render_background(w, h, &cfg.background, &mut rng);
        images.push(SynthImage {
            id: format!("n{i:04}"),
            role: Role::Natural,
            image: img,
            annotations: Vec::new(),
        });
    }

    Ok(SynthCorpus {
        config: cfg.clone(),
        images,
    })
}

impl SynthCorpus {
    /// Build the manifest for this corpus, with image paths under `dir`.
    pub fn manifest(&self, dir: &Path) -> DatasetManifest {
        let mut entries = Vec::with_capacity(self.images.len());
        let mut annotations = BTreeMap::new();
        for role in [Role::Discovery, Role::Natural] {
            let ids: Vec<&SynthImage> =
                self.images.iter().filter(|s| s.role == role).collect();
            let folds = fold_assignment(
                ids.len(),
                seed::derive(self.config.seed, "fold", role as u64),
            );
            for (s, &fold) in ids.iter().zip(folds.iter()) {
                entries.push(ManifestEntry {
                    id: s.id.clone(),
                    path: dir.join(format!("{}.png", s.id)),
                    role,
                    fold,
                });
                if !s.annotations.is_empty() {
                    annotations.insert(s.id.clone(), s.annotations.clone());
                }
            }
        }
        DatasetManifest {
            version: MANIFEST_VERSION,
            seed: self.config.seed,
            entries,
            annotations,
        }
    }

    /// Write PNG files plus `manifest.json` and `annotations.json` to `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.images {
            let path = dir.join(format!("{}.png", s.id));
            s.image
                .to_luma8()
                .save(&path)
                .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
        }
        let manifest = self.manifest(dir);
        manifest.save(dir.join("manifest.json"))?;
        let ann_path = dir.join("annotations.json");
        let json = serde_json::to_string_pretty(&manifest.annotations)?;
        std::fs::write(&ann_path, json).map_err(|e| Error::io(&ann_path, e))?;
        Ok(manifest)
    }
}

/// Generate a synthetic corpus on disk; returns its manifest (ground-truth
/// annotations embedded).
pub fn gen_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    render_corpus(cfg)?.write_to(out_dir.as_ref())
}

/// Scene label per discovery image: the majority annotation class.
pub fn scene_labels(manifest: &DatasetManifest) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (id, anns) in &manifest.annotations {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in anns {
            *counts.entry(a.label.as_str()).or_default() += 1;
        }
        if let Some((label, _)) = counts.into_iter().max_by_key(|(_, c)| *c) {
            out.insert(id.clone(), label.to_string());
        }
    }
    out
}
