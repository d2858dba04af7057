//! On-disk artifact formats: every stage writes plain JSON / JSONL / CSV
//! so any intermediate can be inspected or re-entered.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discovery::{Cluster, DiscoveryLogEntry, RankedClusterFull};
use crate::doublets::Doublet;
use crate::error::{Error, Result};
use crate::evalkit::CurvePoint;
use crate::features::PatchRef;
use crate::svm::{Detection, LinearModel, ModelMeta};

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join("run.lock")
    }

    pub fn iteration_dir(&self, k: u32) -> PathBuf {
        self.root.join("iterations").join(format!("iter_{k}"))
    }

    pub fn final_dir(&self) -> PathBuf {
        self.root.join("final")
    }

    pub fn ranked(&self) -> PathBuf {
        self.final_dir().join("ranked.json")
    }

    pub fn final_models(&self) -> PathBuf {
        self.final_dir().join("models.jsonl")
    }

    pub fn doublets(&self) -> PathBuf {
        self.root.join("doublets.json")
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("curves.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features.json")
    }

    pub fn run_meta(&self) -> PathBuf {
        self.root.join("run_meta.json")
    }
}

/// Facts about a completed discovery needed to re-enter later stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub final_train_fold: u8,
    pub final_val_fold: u8,
    pub all_converged: bool,
    pub iterations: usize,
    pub sampled_refs: usize,
    pub kmeans_k: usize,
}

/// One line of a models.jsonl file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub cluster_id: u32,
    pub iteration: u32,
    pub b: f64,
    pub w: Vec<f64>,
    pub meta: ModelRecordMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecordMeta {
    pub num_positives: usize,
    pub num_mined_negatives: usize,
    pub final_objective: f64,
}

impl ModelRecord {
    pub fn from_model(m: &LinearModel) -> Self {
        ModelRecord {
            cluster_id: m.meta.cluster_id,
            iteration: m.meta.iteration,
            b: m.b,
            w: m.w.clone(),
            meta: ModelRecordMeta {
                num_positives: m.meta.num_positives,
                num_mined_negatives: m.meta.num_mined_negatives,
                final_objective: m.meta.final_objective,
            },
        }
    }

    pub fn into_model(self) -> LinearModel {
        LinearModel {
            w: self.w,
            b: self.b,
            meta: ModelMeta {
                cluster_id: self.cluster_id,
                iteration: self.iteration,
                num_positives: self.meta.num_positives,
                num_mined_negatives: self.meta.num_mined_negatives,
                final_objective: self.meta.final_objective,
            },
        }
    }
}

/// One line of a detections.jsonl file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub level: usize,
    pub cx: usize,
    pub cy: usize,
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Self {
        DetectionRecord {
            image_id: d.patch.image_id.to_string(),
            level: d.patch.level,
            cx: d.patch.cx,
            cy: d.patch.cy,
            score: d.score,
        }
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    create_parent(path)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_models(path: &Path, models: impl IntoIterator<Item = LinearModel>) -> Result<()> {
    write_jsonl(path, models.into_iter().map(|m| ModelRecord::from_model(&m)))
}

pub fn read_models(path: &Path) -> Result<Vec<LinearModel>> {
    Ok(read_jsonl::<ModelRecord>(path)?
        .into_iter()
        .map(ModelRecord::into_model)
        .collect())
}

/// ranked.json entry: scores plus final membership.
pub fn write_ranked(path: &Path, ranked: &[RankedClusterFull]) -> Result<()> {
    write_json(path, &ranked)
}

pub fn read_ranked(path: &Path) -> Result<Vec<RankedClusterFull>> {
    read_json(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLogFile {
    pub entry: DiscoveryLogEntry,
    pub deaths: Vec<(u32, String)>,
}

pub fn write_clusters(path: &Path, clusters: &[Cluster]) -> Result<()> {
    write_json(path, &clusters)
}

pub fn write_doublets(path: &Path, doublets: &[Doublet]) -> Result<()> {
    write_json(path, &doublets)
}

pub fn read_doublets(path: &Path) -> Result<Vec<Doublet>> {
    read_json(path)
}

/// curves.csv: `j,cumulative_purity,cumulative_coverage`.
pub fn write_curves_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    create_parent(path)?;
    let mut text = String::from("j,cumulative_purity,cumulative_coverage\n");
    for p in points {
        text.push_str(&format!(
            "{},{},{}\n",
            p.clusters_considered, p.cumulative_purity, p.cumulative_coverage
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Cumulative summary of evaluation stages; each stage merges its fields
/// into the existing file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_accuracy: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
}

pub fn merge_summary(path: &Path, update: impl FnOnce(&mut Summary)) -> Result<Summary> {
    let mut summary: Summary = if path.exists() {
        read_json(path)?
    } else {
        Summary::default()
    };
    update(&mut summary);
    write_json(path, &summary)?;
    Ok(summary)
}

/// features.json entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub image_id: String,
    pub values: Vec<f64>,
}

pub fn patch_ref_key(r: &PatchRef) -> String {
    format!("{}:{}:{}:{}", r.image_id, r.level, r.cx, r.cy)
}
