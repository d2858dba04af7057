//! Orchestration of full runs: discovery plus its run-directory artifacts,
//! doublet mining, evaluation, and detector-based scene classification.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::corpus::{DatasetManifest, Fold, Role};
use crate::discovery::{
    discover, score_and_rank, CorpusData, DiscoveryConfig, DiscoveryOutcome, RankConfig,
    RankedClusterFull,
};
use crate::doublets::{
    mine_doublets, rank_doublets, Doublet, DoubletConfig, ImageDetections, PlacedDetection,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    classification_accuracy, patch_label, predict_scene, purity_coverage_curves, sp_max_pool,
    train_scene_classifier, visual_words_baseline, ClusterEvalInput, PurityCoverage,
    SpatialPyramidSpec, VisualWordsConfig, DEFAULT_LABEL_OVERLAP,
};
use crate::features::HogConfig;
use crate::svm::{detect, LinearModel};

/// Run a closure under a rayon pool of the given size (0 = the global
/// default pool). Results are identical for any thread count.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("rayon pool")
            .install(f)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sp: SpatialPyramidSpec,
    /// Patch-area overlap needed to take an annotation's label.
    pub label_overlap: f64,
    /// Detectors used for scene features (top-ranked first).
    pub top_detectors: usize,
    /// Linear classifier regularization for scene classification.
    pub classifier_c: f64,
    pub classifier_tol: f64,
    pub baseline: VisualWordsConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sp: SpatialPyramidSpec::default(),
            label_overlap: DEFAULT_LABEL_OVERLAP,
            top_detectors: 210,
            classifier_c: 1.0,
            classifier_tol: 1e-5,
            baseline: VisualWordsConfig::default(),
        }
    }
}

pub struct DiscoveryArtifacts {
    pub corpus: CorpusData,
    pub outcome: DiscoveryOutcome,
    pub ranked: Vec<RankedClusterFull>,
}

/// Run discovery and ranking, writing the run directory:
/// `iterations/iter_k/{models.jsonl, clusters.json, log.json}` and
/// `final/{ranked.json, models.jsonl}`.
pub fn execute_discovery(
    manifest: &DatasetManifest,
    hog: &HogConfig,
    discovery_cfg: &DiscoveryConfig,
    rank_cfg: &RankConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DiscoveryArtifacts> {
    let corpus = CorpusData::load(manifest, hog)?;
    let outcome = discover(&corpus, discovery_cfg, seed)?;
    let ranked = score_and_rank(&corpus, &outcome, discovery_cfg, rank_cfg)?;
    write_discovery_artifacts(out_dir, &outcome, &ranked)?;
    Ok(DiscoveryArtifacts {
        corpus,
        outcome,
        ranked,
    })
}

pub fn write_discovery_artifacts(
    out_dir: &Path,
    outcome: &DiscoveryOutcome,
    ranked: &[RankedClusterFull],
) -> Result<()> {
    let paths = artifacts::RunPaths::new(out_dir);
    for snap in &outcome.iterations {
        let dir = paths.iteration_dir(snap.entry.iteration);
        artifacts::write_models(&dir.join("models.jsonl"), snap.models.values().cloned())?;
        artifacts::write_clusters(&dir.join("clusters.json"), &snap.clusters)?;
        artifacts::write_json(
            &dir.join("log.json"),
            &artifacts::IterationLogFile {
                entry: snap.entry.clone(),
                deaths: snap.deaths.clone(),
            },
        )?;
    }
    artifacts::write_ranked(&paths.ranked(), ranked)?;
    artifacts::write_models(&paths.final_models(), outcome.models.values().cloned())?;
    artifacts::write_json(
        &paths.run_meta(),
        &artifacts::RunMeta {
            final_train_fold: outcome.final_train_fold.into(),
            final_val_fold: outcome.final_val_fold.into(),
            all_converged: outcome.all_converged,
            iterations: outcome.iterations.len(),
            sampled_refs: outcome.sampled_refs,
            kmeans_k: outcome.kmeans_k,
        },
    )?;
    Ok(())
}

/// Reconstruct a discovery outcome from persisted final models: re-detect
/// on the validation fold and rebuild each cluster's top-m membership the
/// same way the loop does. Detections are bit-identical to the original
/// run because model weights round-trip JSON exactly.
pub fn outcome_from_models(
    corpus: &CorpusData,
    models: BTreeMap<u32, LinearModel>,
    meta: &artifacts::RunMeta,
    cfg: &DiscoveryConfig,
) -> Result<DiscoveryOutcome> {
    let val_fold = Fold::try_from(meta.final_val_fold)
        .map_err(Error::InvalidConfig)?;
    let train_fold = Fold::try_from(meta.final_train_fold)
        .map_err(Error::InvalidConfig)?;
    let val_ids: Vec<Arc<str>> = corpus.ids(Role::Discovery, val_fold).to_vec();

    let detections: BTreeMap<u32, Vec<crate::svm::Detection>> = models
        .par_iter()
        .map(|(id, model)| {
            let mut all = Vec::new();
            for img in &val_ids {
                let pyr = corpus.pyramid(img)?;
                all.extend(detect(model, pyr, cfg.svm.score_floor, cfg.nms_iou));
            }
            all.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .expect("finite scores")
                    .then_with(|| a.patch.cmp(&b.patch))
            });
            Ok((*id, all))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut clusters = Vec::new();
    for (&id, dets) in &detections {
        let mut per_image: BTreeMap<&Arc<str>, usize> = BTreeMap::new();
        let mut members = Vec::new();
        for d in dets {
            if members.len() >= cfg.members_per_cluster {
                break;
            }
            let count = per_image.entry(&d.patch.image_id).or_insert(0);
            if *count >= cfg.max_members_per_image {
                continue;
            }
            *count += 1;
            members.push(crate::discovery::ClusterMember {
                patch: d.patch.clone(),
                score: Some(d.score),
            });
        }
        clusters.push(crate::discovery::Cluster {
            id,
            members,
            born_iteration: 0,
            alive: true,
        });
    }

    Ok(DiscoveryOutcome {
        clusters,
        models,
        final_val_detections: detections,
        iterations: Vec::new(),
        all_converged: meta.all_converged,
        final_train_fold: train_fold,
        final_val_fold: val_fold,
        sampled_refs: meta.sampled_refs,
        kmeans_k: meta.kmeans_k,
    })
}

/// Load a completed run (manifest, final models, run metadata) for a
/// later stage.
pub fn load_run(
    manifest: &DatasetManifest,
    hog: &HogConfig,
    run_dir: &Path,
    cfg: &DiscoveryConfig,
) -> Result<(CorpusData, DiscoveryOutcome)> {
    let paths = artifacts::RunPaths::new(run_dir);
    let meta: artifacts::RunMeta = artifacts::read_json(&paths.run_meta())?;
    let models: BTreeMap<u32, LinearModel> = artifacts::read_models(&paths.final_models())?
        .into_iter()
        .map(|m| (m.meta.cluster_id, m))
        .collect();
    let corpus = CorpusData::load(manifest, hog)?;
    let outcome = outcome_from_models(&corpus, models, &meta, cfg)?;
    Ok((corpus, outcome))
}

/// Apply models to every image of `(role, fold)`; result per image in
/// corpus order, detections placed in native pixels.
pub fn placed_detections(
    corpus: &CorpusData,
    models: &[(u32, &LinearModel)],
    role: Role,
    fold: Fold,
    floor: f64,
    nms_iou: f64,
) -> Result<Vec<(Arc<str>, ImageDetections)>> {
    corpus
        .ids(role, fold)
        .par_iter()
        .map(|id| -> Result<(Arc<str>, ImageDetections)> {
            let pyr = corpus.pyramid(id)?;
            let mut dets: ImageDetections = Vec::new();
            for (cluster, model) in models {
                for d in detect(model, pyr, floor, nms_iou) {
                    dets.push(PlacedDetection {
                        cluster: *cluster,
                        score: d.score,
                        rect: pyr.footprint(&d.patch)?,
                    });
                }
            }
            Ok((id.clone(), dets))
        })
        .collect()
}

fn alive_models_by_rank<'a>(
    outcome: &'a DiscoveryOutcome,
    ranked: &[RankedClusterFull],
) -> Vec<(u32, &'a LinearModel)> {
    ranked
        .iter()
        .filter_map(|r| outcome.models.get(&r.cluster_id).map(|m| (r.cluster_id, m)))
        .collect()
}

/// Mine doublets on the final training fold and rank them on the disjoint
/// validation fold. Roots: the `max_roots` best-ranked clusters;
/// secondaries: every alive detector.
pub fn mine_and_rank_doublets(
    corpus: &CorpusData,
    outcome: &DiscoveryOutcome,
    ranked: &[RankedClusterFull],
    cfg: &DoubletConfig,
    discovery_cfg: &DiscoveryConfig,
) -> Result<Vec<Doublet>> {
    let all_models: Vec<(u32, &LinearModel)> =
        outcome.models.iter().map(|(id, m)| (*id, m)).collect();
    let floor = discovery_cfg.svm.score_floor;
    let nms = discovery_cfg.nms_iou;

    let train = placed_detections(
        corpus,
        &all_models,
        Role::Discovery,
        outcome.final_train_fold,
        floor,
        nms,
    )?;
    let val = placed_detections(
        corpus,
        &all_models,
        Role::Discovery,
        outcome.final_val_fold,
        floor,
        nms,
    )?;

    let roots: Vec<u32> = ranked
        .iter()
        .take(cfg.max_roots)
        .map(|r| r.cluster_id)
        .collect();
    let train_sets: Vec<ImageDetections> = train.into_iter().map(|(_, d)| d).collect();
    let val_sets: Vec<ImageDetections> = val.into_iter().map(|(_, d)| d).collect();
    let candidates = mine_doublets(&roots, &train_sets, cfg);
    Ok(rank_doublets(candidates, &val_sets, cfg))
}

/// Purity/coverage evaluation of the ranked clusters against ground-truth
/// annotations. Each cluster is represented by its top-r validation-fold
/// detections; coverage is measured over the validation discovery fold.
pub fn evaluate_ranked(
    corpus: &CorpusData,
    outcome: &DiscoveryOutcome,
    ranked: &[RankedClusterFull],
    top_r: usize,
    label_overlap: f64,
) -> Result<PurityCoverage> {
    if corpus.manifest.annotations.is_empty() {
        return Err(Error::EmptyInput("annotations for evaluation"));
    }
    let mut inputs = Vec::with_capacity(ranked.len());
    for r in ranked {
        let dets = outcome
            .final_val_detections
            .get(&r.cluster_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        let mut members = Vec::new();
        for d in dets.iter().take(top_r) {
            let pyr = corpus.pyramid(&d.patch.image_id)?;
            let rect = pyr.footprint(&d.patch)?;
            let anns = corpus
                .manifest
                .annotations
                .get(d.patch.image_id.as_ref())
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            let label = patch_label(&rect, anns, label_overlap).map(str::to_string);
            members.push((d.patch.image_id.clone(), label));
        }
        inputs.push(ClusterEvalInput {
            cluster_id: r.cluster_id,
            members,
        });
    }
    let dataset = corpus.ids(Role::Discovery, outcome.final_val_fold).len();
    purity_coverage_curves(&inputs, dataset)
}

/// Max-pooled detector features for every discovery image of a fold, in
/// corpus order.
pub fn scene_features(
    corpus: &CorpusData,
    models: &[(u32, &LinearModel)],
    fold: Fold,
    sp: &SpatialPyramidSpec,
    floor: f64,
    nms_iou: f64,
) -> Result<Vec<(Arc<str>, Vec<f64>)>> {
    corpus
        .ids(Role::Discovery, fold)
        .par_iter()
        .map(|id| -> Result<(Arc<str>, Vec<f64>)> {
            let pyr = corpus.pyramid(id)?;
            let (w, h) = pyr.native_size();
            let mut per_detector = Vec::with_capacity(models.len());
            for (_, model) in models {
                let dets = detect(model, pyr, floor, nms_iou);
                let placed: Vec<_> = dets
                    .iter()
                    .map(|d| Ok((pyr.footprint(&d.patch)?, d.score)))
                    .collect::<Result<Vec<_>>>()?;
                per_detector.push(placed);
            }
            Ok((
                id.clone(),
                sp_max_pool(&per_detector, w as f64, h as f64, sp, floor),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyResult {
    pub accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
}

/// Detector-based scene classification: spatial-pyramid max-pooled scores
/// of the top-ranked detectors, one-vs-all linear SVM, trained on fold 1
/// and evaluated on fold 2. Optionally runs the visual-words baseline on
/// the same folds.
pub fn classify_scenes(
    corpus: &CorpusData,
    outcome: &DiscoveryOutcome,
    ranked: &[RankedClusterFull],
    labels: &BTreeMap<String, String>,
    cfg: &EvalConfig,
    discovery_cfg: &DiscoveryConfig,
    run_baseline: bool,
    seed: u64,
) -> Result<ClassifyResult> {
    let models: Vec<(u32, &LinearModel)> = alive_models_by_rank(outcome, ranked)
        .into_iter()
        .take(cfg.top_detectors)
        .collect();
    if models.is_empty() {
        return Err(Error::EmptyInput("ranked detectors"));
    }
    let floor = discovery_cfg.svm.score_floor;
    let nms = discovery_cfg.nms_iou;

    let labeled = |feats: Vec<(Arc<str>, Vec<f64>)>| -> Result<Vec<(String, Vec<f64>)>> {
        feats
            .into_iter()
            .map(|(id, values)| {
                let label = labels
                    .get(id.as_ref())
                    .ok_or_else(|| Error::UnknownImage(format!("{id} has no scene label")))?;
                Ok((label.clone(), values))
            })
            .collect()
    };
    let train = labeled(scene_features(corpus, &models, Fold::One, &cfg.sp, floor, nms)?)?;
    let test = labeled(scene_features(corpus, &models, Fold::Two, &cfg.sp, floor, nms)?)?;

    let classes = train_scene_classifier(&train, cfg.classifier_c, cfg.classifier_tol)?;
    let accuracy = classification_accuracy(&classes, &test)?;

    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (label, f) in &test {
        let e = per_class.entry(label.clone()).or_insert((0, 0));
        e.1 += 1;
        if predict_scene(&classes, f)? == label {
            e.0 += 1;
        }
    }
    let per_class_accuracy = per_class
        .into_iter()
        .map(|(l, (hit, total))| (l, hit as f64 / total as f64))
        .collect();

    let baseline_accuracy = if run_baseline {
        let fold_pyramids = |fold: Fold| -> Result<Vec<(&crate::features::HogPyramid, &str)>> {
            corpus
                .ids(Role::Discovery, fold)
                .iter()
                .map(|id| {
                    let label = labels
                        .get(id.as_ref())
                        .ok_or_else(|| Error::UnknownImage(format!("{id} has no scene label")))?;
                    Ok((corpus.pyramid(id)?, label.as_str()))
                })
                .collect()
        };
        let train_p = fold_pyramids(Fold::One)?;
        let test_p = fold_pyramids(Fold::Two)?;
        Some(visual_words_baseline(&train_p, &test_p, &cfg.baseline, seed)?)
    } else {
        None
    };

    Ok(ClassifyResult {
        accuracy,
        per_class_accuracy,
        baseline_accuracy,
    })
}
