//! Dataset manifests and deterministic fold splitting.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RectF;
use crate::seed;

/// Minimum side length (pixels) for discovery-role images; the smallest
/// patch needs an 80x80 pixel support.
pub const MIN_DISCOVERY_SIDE: u32 = 80;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Discovery,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Fold {
    One,
    Two,
}

impl Fold {
    pub fn other(self) -> Fold {
        match self {
            Fold::One => Fold::Two,
            Fold::Two => Fold::One,
        }
    }
}

impl From<Fold> for u8 {
    fn from(f: Fold) -> u8 {
        match f {
            Fold::One => 1,
            Fold::Two => 2,
        }
    }
}

impl TryFrom<u8> for Fold {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Fold, String> {
        match v {
            1 => Ok(Fold::One),
            2 => Ok(Fold::Two),
            other => Err(format!("fold must be 1 or 2, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub role: Role,
    pub fold: Fold,
}

/// A labeled pixel rectangle attached to an image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub bbox: RectF,
}

pub type AnnotationMap = BTreeMap<String, Vec<Annotation>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: AnnotationMap,
}

impl DatasetManifest {
    pub fn ids_for(&self, role: Role, fold: Fold) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.role == role && e.fold == fold)
            .map(|e| e.id.as_str())
            .collect()
    }

    /// Validate the structural invariants: unique ids, per-role fold sizes
    /// differing by at most one.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.id.as_str(), e.role)) {
                return Err(Error::Duplicate {
                    what: "image id",
                    value: e.id.clone(),
                });
            }
        }
        for role in [Role::Discovery, Role::Natural] {
            let one = self.ids_for(role, Fold::One).len();
            let two = self.ids_for(role, Fold::Two).len();
            if one.abs_diff(two) > 1 {
                return Err(Error::InvalidConfig(format!(
                    "unbalanced folds for {role:?}: {one} vs {two}"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_slice(&bytes)?;
        m.validate()?;
        Ok(m)
    }
}

/// Assign `n` items to folds: seeded uniform shuffle, then alternating
/// split. Fold sizes differ by at most one (fold 1 gets the extra item).
pub fn fold_assignment(n: usize, seed_val: u64) -> Vec<Fold> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_val);
    order.shuffle(&mut rng);
    let mut folds = vec![Fold::One; n];
    for (pos, &idx) in order.iter().enumerate() {
        folds[idx] = if pos % 2 == 0 { Fold::One } else { Fold::Two };
    }
    folds
}

fn check_readable(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::UnreadablePath {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn id_for_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// Build a manifest from discovery and natural image paths.
///
/// Each role is shuffled with a seed derived from `seed` and split into two
/// folds alternately, so the split is deterministic and balanced. Discovery
/// images smaller than 80x80 are rejected (the minimum patch cannot fit).
pub fn build_manifest(
    discovery_paths: &[PathBuf],
    natural_paths: &[PathBuf],
    seed_val: u64,
) -> Result<DatasetManifest> {
    if discovery_paths.is_empty() {
        return Err(Error::EmptyInput("discovery paths"));
    }
    if natural_paths.is_empty() {
        return Err(Error::EmptyInput("natural paths"));
    }

    let mut seen_paths: HashSet<(PathBuf, Role)> = HashSet::new();
    let mut seen_ids: HashSet<(String, Role)> = HashSet::new();
    let mut entries = Vec::new();

    for (role, paths) in [
        (Role::Discovery, discovery_paths),
        (Role::Natural, natural_paths),
    ] {
        let folds = fold_assignment(
            paths.len(),
            seed::derive(seed_val, "fold", role as u64),
        );
        for (path, &fold) in paths.iter().zip(folds.iter()) {
            if !seen_paths.insert((path.clone(), role)) {
                return Err(Error::Duplicate {
                    what: "path",
                    value: path.display().to_string(),
                });
            }
            let (w, h) = check_readable(path)?;
            if role == Role::Discovery && (w < MIN_DISCOVERY_SIDE || h < MIN_DISCOVERY_SIDE) {
                return Err(Error::InvalidImage(format!(
                    "{}: discovery images must be at least {MIN_DISCOVERY_SIDE}x{MIN_DISCOVERY_SIDE}, got {w}x{h}",
                    path.display()
                )));
            }
            let id = id_for_path(path);
            if !seen_ids.insert((id.clone(), role)) {
                return Err(Error::Duplicate {
                    what: "image id",
                    value: id,
                });
            }
            entries.push(ManifestEntry {
                id,
                path: path.clone(),
                role,
                fold,
            });
        }
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: seed_val,
        entries,
        annotations: BTreeMap::new(),
    };
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pgm(path: &Path, w: u32, h: u32) {
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend(std::iter::repeat(100u8).take((w * h) as usize));
        std::fs::write(path, bytes).unwrap();
    }

    fn make_images(dir: &Path, prefix: &str, count: usize, side: u32) -> Vec<PathBuf> {
        (0..count)
            .map(|i| {
                let p = dir.join(format!("{prefix}{i:03}.pgm"));
                write_pgm(&p, side, side);
                p
            })
            .collect()
    }

    #[test]
    fn four_and_four_seed_seven_gives_2_2_folds() {
        let dir = tempfile::tempdir().unwrap();
        let d = make_images(dir.path(), "d", 4, 80);
        let n = make_images(dir.path(), "n", 4, 16);
        let m = build_manifest(&d, &n, 7).unwrap();
        for role in [Role::Discovery, Role::Natural] {
            assert_eq!(m.ids_for(role, Fold::One).len(), 2);
            assert_eq!(m.ids_for(role, Fold::Two).len(), 2);
        }
    }

    #[test]
    fn five_discovery_images_split_3_2() {
        let dir = tempfile::tempdir().unwrap();
        let d = make_images(dir.path(), "d", 5, 80);
        let n = make_images(dir.path(), "n", 2, 16);
        let m = build_manifest(&d, &n, 0).unwrap();
        assert_eq!(m.ids_for(Role::Discovery, Fold::One).len(), 3);
        assert_eq!(m.ids_for(Role::Discovery, Fold::Two).len(), 2);
    }

    #[test]
    fn paper_scale_fold_sizes() {
        // 1,500 discovery and 6,000 natural images split into equal halves.
        let d = fold_assignment(1500, seed::derive(42, "fold", Role::Discovery as u64));
        let n = fold_assignment(6000, seed::derive(42, "fold", Role::Natural as u64));
        assert_eq!(d.iter().filter(|f| **f == Fold::One).count(), 750);
        assert_eq!(d.iter().filter(|f| **f == Fold::Two).count(), 750);
        assert_eq!(n.iter().filter(|f| **f == Fold::One).count(), 3000);
        assert_eq!(n.iter().filter(|f| **f == Fold::Two).count(), 3000);
    }

    #[test]
    fn fold_split_is_a_partition() {
        for n in [1usize, 2, 3, 17, 100] {
            let folds = fold_assignment(n, 9);
            let one = folds.iter().filter(|f| **f == Fold::One).count();
            let two = folds.iter().filter(|f| **f == Fold::Two).count();
            assert_eq!(one + two, n);
            assert!(one.abs_diff(two) <= 1);
        }
    }

    #[test]
    fn same_seed_same_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let d = make_images(dir.path(), "d", 9, 80);
        let n = make_images(dir.path(), "n", 5, 16);
        let a = build_manifest(&d, &n, 123).unwrap();
        let b = build_manifest(&d, &n, 123).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = build_manifest(&d, &n, 124).unwrap();
        let fold_of = |m: &DatasetManifest| -> Vec<Fold> { m.entries.iter().map(|e| e.fold).collect() };
        // A different seed almost surely shuffles at least one image.
        assert_ne!(fold_of(&a), fold_of(&c));
    }

    #[test]
    fn unreadable_path_errors_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let d = vec![dir.path().join("missing.png")];
        let n = make_images(dir.path(), "n", 1, 16);
        let err = build_manifest(&d, &n, 1).unwrap_err();
        assert!(err.to_string().contains("missing.png"), "{err}");
    }

    #[test]
    fn duplicate_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = make_images(dir.path(), "d", 1, 80);
        d.push(d[0].clone());
        let n = make_images(dir.path(), "n", 1, 16);
        assert!(matches!(
            build_manifest(&d, &n, 1),
            Err(Error::Duplicate { .. })
        ));
    }

    #[test]
    fn small_discovery_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = make_images(dir.path(), "d", 1, 64);
        let n = make_images(dir.path(), "n", 1, 16);
        assert!(build_manifest(&d, &n, 1).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = make_images(dir.path(), "d", 3, 80);
        let n = make_images(dir.path(), "n", 3, 16);
        let m = build_manifest(&d, &n, 5).unwrap();
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        let loaded = DatasetManifest::load(&p).unwrap();
        assert_eq!(loaded.seed, 5);
        assert_eq!(loaded.entries.len(), 6);
        // Folds serialize as integers 1/2.
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"fold\": 1") || text.contains("\"fold\":1"));
    }
}
