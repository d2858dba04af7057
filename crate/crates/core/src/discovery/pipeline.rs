//! The iterative discovery loop: k-means initialization, cross-validated
//! train/detect/re-cluster rounds with fold swapping, convergence
//! detection, and the final scoring pass feeding cluster ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_gray, DatasetManifest, Fold, GrayImage, PixelPatch, Role};
use crate::discovery::kmeans::kmeans;
use crate::discovery::ranking::{
    dedup_ranked, discriminativeness_score, purity_score, rank_clusters, ClusterScores,
    RankConfig, RankedCluster,
};
use crate::error::{Error, Result};
use crate::features::{
    compute_pyramid, extract_descriptor, sample_patches, HogConfig, HogPyramid, PatchRef,
    SampleConfig,
};
use crate::seed;
use crate::svm::{detect, train_detector, Detection, LinearModel, NegativePool, PoolEntry, SvmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub patch: PatchRef,
    /// Detection score; `None` for k-means seed members.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    pub members: Vec<ClusterMember>,
    pub born_iteration: u32,
    pub alive: bool,
}

impl Cluster {
    pub fn member_set(&self) -> BTreeSet<PatchRef> {
        self.members.iter().map(|m| m.patch.clone()).collect()
    }
}

/// True iff the member patch sets (by identity: image, level, cell coords)
/// are equal. Compare states of the same cluster taken from iterations that
/// re-clustered on the same fold.
pub fn has_converged(prev: &Cluster, cur: &Cluster) -> bool {
    debug_assert_eq!(prev.id, cur.id);
    prev.member_set() == cur.member_set()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    pub sampling: SampleConfig,
    /// k = sampled patches / this divisor.
    pub kmeans_k_divisor: usize,
    pub kmeans_max_iterations: usize,
    /// Initial clusters smaller than this are pruned.
    pub min_cluster_size: usize,
    /// m: members kept per rebuilt cluster.
    pub members_per_cluster: usize,
    /// Detectors firing fewer times than this on the validation fold die.
    pub min_fires: usize,
    pub max_iterations: usize,
    /// At most this many members of one cluster may come from one image.
    pub max_members_per_image: usize,
    /// Top-m Jaccard at or above this marks a duplicate cluster.
    pub dedup_jaccard: f64,
    /// Fold-swapping on (the paper's protocol); off trains and re-clusters
    /// on the same fold (the overfitting-prone ablation).
    pub cross_validate: bool,
    pub nms_iou: f64,
    pub svm: SvmConfig,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            sampling: SampleConfig::default(),
            kmeans_k_divisor: 4,
            kmeans_max_iterations: 100,
            min_cluster_size: 3,
            members_per_cluster: 5,
            min_fires: 2,
            max_iterations: 10,
            max_members_per_image: 2,
            dedup_jaccard: 0.8,
            cross_validate: true,
            nms_iou: 0.3,
            svm: SvmConfig::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members_per_cluster < self.min_fires {
            return Err(Error::InvalidConfig(
                "members_per_cluster must be >= min_fires".into(),
            ));
        }
        if self.min_cluster_size < 2 {
            return Err(Error::InvalidConfig("min_cluster_size must be >= 2".into()));
        }
        if self.kmeans_k_divisor == 0 || self.max_iterations == 0 || self.max_members_per_image == 0
        {
            return Err(Error::InvalidConfig(
                "kmeans_k_divisor, max_iterations, max_members_per_image must be >= 1".into(),
            ));
        }
        self.svm.validate()
    }

    /// Which folds iteration `t` trains on and validates against.
    pub fn folds_for(&self, t: u32) -> (Fold, Fold) {
        if !self.cross_validate {
            return (Fold::One, Fold::One);
        }
        let train = if t % 2 == 0 { Fold::One } else { Fold::Two };
        (train, train.other())
    }

    /// Iteration lag between states re-clustered on the same fold.
    pub fn convergence_lag(&self) -> usize {
        if self.cross_validate {
            2
        } else {
            1
        }
    }
}

/// Loaded images plus their pyramids, indexed by role and fold.
pub struct CorpusData {
    pub manifest: DatasetManifest,
    images: BTreeMap<Arc<str>, GrayImage>,
    pyramids: BTreeMap<Arc<str>, HogPyramid>,
    fold_ids: BTreeMap<(Role, Fold), Vec<Arc<str>>>,
    dual_role: bool,
}

impl CorpusData {
    /// Load every manifest entry from disk and compute its pyramid.
    pub fn load(manifest: &DatasetManifest, hog: &HogConfig) -> Result<CorpusData> {
        manifest.validate()?;
        let mut path_by_id: BTreeMap<&str, &PathBuf> = BTreeMap::new();
        for e in &manifest.entries {
            if let Some(prev) = path_by_id.insert(&e.id, &e.path) {
                if prev != &e.path {
                    return Err(Error::Duplicate {
                        what: "image id (two paths)",
                        value: e.id.clone(),
                    });
                }
            }
        }
        let unique: Vec<(&str, &PathBuf)> = path_by_id.into_iter().collect();
        let loaded: Vec<(Arc<str>, GrayImage)> = unique
            .par_iter()
            .map(|(id, path)| -> Result<(Arc<str>, GrayImage)> {
                Ok((Arc::from(*id), load_gray(path)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(manifest.clone(), loaded, hog)
    }

    /// Build a corpus from already-decoded images (ids must cover the
    /// manifest).
    pub fn from_images(
        manifest: DatasetManifest,
        images: Vec<(Arc<str>, GrayImage)>,
        hog: &HogConfig,
    ) -> Result<CorpusData> {
        hog.validate()?;
        let pyramids: BTreeMap<Arc<str>, HogPyramid> = images
            .par_iter()
            .map(|(id, img)| (id.clone(), compute_pyramid(img, id.clone(), hog)))
            .collect();
        let images: BTreeMap<Arc<str>, GrayImage> = images.into_iter().collect();

        let mut fold_ids: BTreeMap<(Role, Fold), Vec<Arc<str>>> = BTreeMap::new();
        let mut role_ids: BTreeMap<Role, BTreeSet<&str>> = BTreeMap::new();
        let mut role_paths: BTreeMap<Role, BTreeSet<&PathBuf>> = BTreeMap::new();
        for e in &manifest.entries {
            let id: Arc<str> = images
                .keys()
                .find(|k| k.as_ref() == e.id.as_str())
                .cloned()
                .ok_or_else(|| Error::UnknownImage(e.id.clone()))?;
            if e.role == Role::Discovery && pyramids[&id].num_windows() == 0 {
                return Err(Error::InvalidImage(format!(
                    "{}: discovery image too small for the minimum patch",
                    e.id
                )));
            }
            fold_ids.entry((e.role, e.fold)).or_default().push(id);
            role_ids.entry(e.role).or_default().insert(&e.id);
            role_paths.entry(e.role).or_default().insert(&e.path);
        }
        let empty_ids = BTreeSet::new();
        let empty_paths = BTreeSet::new();
        let d_ids = role_ids.get(&Role::Discovery).unwrap_or(&empty_ids);
        let n_ids = role_ids.get(&Role::Natural).unwrap_or(&empty_ids);
        let d_paths = role_paths.get(&Role::Discovery).unwrap_or(&empty_paths);
        let n_paths = role_paths.get(&Role::Natural).unwrap_or(&empty_paths);
        let dual_role = d_ids.intersection(n_ids).next().is_some()
            || d_paths.intersection(n_paths).next().is_some();

        Ok(CorpusData {
            manifest,
            images,
            pyramids,
            fold_ids,
            dual_role,
        })
    }

    pub fn ids(&self, role: Role, fold: Fold) -> &[Arc<str>] {
        self.fold_ids
            .get(&(role, fold))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn pyramid(&self, id: &str) -> Result<&HogPyramid> {
        self.pyramids
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    pub fn image(&self, id: &str) -> Result<&GrayImage> {
        self.images
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    /// Whether any image serves both roles (discovery within natural); then
    /// near-duplicate exclusion is needed during mining.
    pub fn has_dual_role(&self) -> bool {
        self.dual_role
    }

    pub fn negative_pool(&self, fold: Fold) -> NegativePool<'_> {
        let entries = self
            .ids(Role::Natural, fold)
            .iter()
            .map(|id| PoolEntry {
                pyramid: &self.pyramids[id],
                image: self.dual_role.then(|| &self.images[id]),
            })
            .collect();
        NegativePool::new(entries)
    }
}

/// K-means initialization over sampled patches; clusters smaller than
/// `min_cluster_size` are pruned (paper protocol: prune once, at init).
pub fn init_clusters(
    refs: &[PatchRef],
    corpus: &CorpusData,
    cfg: &DiscoveryConfig,
    kmeans_seed: u64,
) -> Result<Vec<Cluster>> {
    let need = 4 * cfg.min_cluster_size;
    if refs.len() < need {
        return Err(Error::NotEnoughSamples {
            need,
            have: refs.len(),
        });
    }
    let descriptors: Vec<Vec<f64>> = refs
        .par_iter()
        .map(|r| -> Result<Vec<f64>> {
            Ok(extract_descriptor(corpus.pyramid(&r.image_id)?, r)?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = (refs.len() / cfg.kmeans_k_divisor).max(1);
    let result = kmeans(&descriptors, k, kmeans_seed, cfg.kmeans_max_iterations)?;

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in result.assignments.iter().enumerate() {
        groups.entry(a).or_default().push(i);
    }
    let mut clusters = Vec::new();
    for (_, idxs) in groups {
        if idxs.len() < cfg.min_cluster_size {
            continue;
        }
        clusters.push(Cluster {
            id: clusters.len() as u32,
            members: idxs
                .into_iter()
                .map(|i| ClusterMember {
                    patch: refs[i].clone(),
                    score: None,
                })
                .collect(),
            born_iteration: 0,
            alive: true,
        });
    }
    Ok(clusters)
}

#[derive(Debug)]
pub struct IterationOutcome {
    pub clusters: Vec<Cluster>,
    pub models: BTreeMap<u32, LinearModel>,
    /// Pooled validation-fold detections per alive cluster, best first.
    pub val_detections: BTreeMap<u32, Vec<Detection>>,
    pub deaths: Vec<(u32, String)>,
}

enum ClusterStep {
    Rebuilt {
        members: Vec<ClusterMember>,
        model: LinearModel,
        detections: Vec<Detection>,
    },
    Dead(String),
}

fn member_pixel_patches(cluster: &Cluster, corpus: &CorpusData) -> Result<Vec<PixelPatch>> {
    cluster
        .members
        .iter()
        .map(|m| {
            let pyr = corpus.pyramid(&m.patch.image_id)?;
            let rect = pyr.footprint(&m.patch)?;
            Ok(corpus.image(&m.patch.image_id)?.extract_patch(&rect, 64, 64))
        })
        .collect()
}

fn process_cluster(
    cluster: &Cluster,
    corpus: &CorpusData,
    pool: &NegativePool,
    val_ids: &[Arc<str>],
    cfg: &DiscoveryConfig,
    iteration: u32,
    master_seed: u64,
) -> Result<ClusterStep> {
    let mut positives = Vec::with_capacity(cluster.members.len());
    for m in &cluster.members {
        let pyr = corpus.pyramid(&m.patch.image_id)?;
        positives.push(extract_descriptor(pyr, &m.patch)?.values);
    }
    let exclusions = if corpus.has_dual_role() {
        member_pixel_patches(cluster, corpus)?
    } else {
        Vec::new()
    };

    let mut svm_cfg = cfg.svm.clone();
    svm_cfg.seed = seed::derive(
        master_seed,
        "svm",
        ((iteration as u64) << 32) | cluster.id as u64,
    );
    let mut model = train_detector(&positives, pool, &svm_cfg, &exclusions)?;
    model.meta.cluster_id = cluster.id;

    let mut detections: Vec<Detection> = Vec::new();
    for id in val_ids {
        let pyr = corpus.pyramid(id)?;
        detections.extend(detect(&model, pyr, svm_cfg.score_floor, cfg.nms_iou));
    }
    detections.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then_with(|| a.patch.cmp(&b.patch))
    });

    if detections.len() < cfg.min_fires {
        return Ok(ClusterStep::Dead(format!(
            "fired {} time(s) on the validation fold (min {})",
            detections.len(),
            cfg.min_fires
        )));
    }

    // Top m, taking at most max_members_per_image from any one image.
    let mut per_image: BTreeMap<&Arc<str>, usize> = BTreeMap::new();
    let mut members = Vec::with_capacity(cfg.members_per_cluster);
    for d in &detections {
        if members.len() >= cfg.members_per_cluster {
            break;
        }
        let count = per_image.entry(&d.patch.image_id).or_insert(0);
        if *count >= cfg.max_members_per_image {
            continue;
        }
        *count += 1;
        members.push(ClusterMember {
            patch: d.patch.clone(),
            score: Some(d.score),
        });
    }
    if members.len() < cfg.min_fires {
        return Ok(ClusterStep::Dead(format!(
            "only {} usable member(s) after the per-image cap",
            members.len()
        )));
    }

    Ok(ClusterStep::Rebuilt {
        members,
        model,
        detections,
    })
}

/// One half-step of the iterative algorithm: train a detector per alive
/// cluster on the training fold (positives: its members; negatives: the
/// training fold of the natural set), detect over the held-out discovery
/// fold, and rebuild each cluster from its top m firings. Detectors firing
/// fewer than `min_fires` times die. Failed training also kills a cluster
/// without aborting the others. A patch may appear in several clusters.
pub fn run_iteration(
    clusters: &[Cluster],
    corpus: &CorpusData,
    train_fold: Fold,
    val_fold: Fold,
    cfg: &DiscoveryConfig,
    iteration: u32,
    master_seed: u64,
) -> IterationOutcome {
    let val_ids = corpus.ids(Role::Discovery, val_fold);
    let pool = corpus.negative_pool(train_fold);

    let steps: BTreeMap<u32, ClusterStep> = clusters
        .par_iter()
        .filter(|c| c.alive)
        .map(|c| {
            let step = match process_cluster(c, corpus, &pool, val_ids, cfg, iteration, master_seed)
            {
                Ok(step) => step,
                Err(e) => ClusterStep::Dead(format!("training failed: {e}")),
            };
            (c.id, step)
        })
        .collect();

    let mut out_clusters = Vec::with_capacity(clusters.len());
    let mut models = BTreeMap::new();
    let mut val_detections = BTreeMap::new();
    let mut deaths = Vec::new();
    for c in clusters {
        if !c.alive {
            out_clusters.push(c.clone());
            continue;
        }
        match steps.get(&c.id) {
            Some(ClusterStep::Rebuilt {
                members,
                model,
                detections,
            }) => {
                models.insert(c.id, model.clone());
                val_detections.insert(c.id, detections.clone());
                out_clusters.push(Cluster {
                    id: c.id,
                    members: members.clone(),
                    born_iteration: c.born_iteration,
                    alive: true,
                });
            }
            Some(ClusterStep::Dead(reason)) => {
                deaths.push((c.id, reason.clone()));
                out_clusters.push(Cluster {
                    id: c.id,
                    members: c.members.clone(),
                    born_iteration: c.born_iteration,
                    alive: false,
                });
            }
            None => unreachable!("every alive cluster was processed"),
        }
    }

    IterationOutcome {
        clusters: out_clusters,
        models,
        val_detections,
        deaths,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscoveryLogEntry {
    pub iteration: u32,
    pub train_fold: u8,
    pub val_fold: u8,
    pub alive_in: usize,
    pub deaths: usize,
    pub alive_out: usize,
    /// Alive clusters whose member set equals their state two swaps ago
    /// (one, without cross-validation).
    pub converged: usize,
    /// Alive clusters with enough history whose membership changed.
    pub churned: usize,
}

#[derive(Debug, Clone)]
pub struct IterationSnapshot {
    pub entry: DiscoveryLogEntry,
    pub clusters: Vec<Cluster>,
    pub models: BTreeMap<u32, LinearModel>,
    pub deaths: Vec<(u32, String)>,
}

#[derive(Debug)]
pub struct DiscoveryOutcome {
    /// Final cluster states (dead ones keep their last membership).
    pub clusters: Vec<Cluster>,
    /// Final models of alive clusters.
    pub models: BTreeMap<u32, LinearModel>,
    /// Validation detections of the last executed iteration.
    pub final_val_detections: BTreeMap<u32, Vec<Detection>>,
    pub iterations: Vec<IterationSnapshot>,
    pub all_converged: bool,
    pub final_train_fold: Fold,
    pub final_val_fold: Fold,
    pub sampled_refs: usize,
    pub kmeans_k: usize,
}

impl DiscoveryOutcome {
    pub fn alive(&self) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter().filter(|c| c.alive)
    }

    pub fn log(&self) -> Vec<DiscoveryLogEntry> {
        self.iterations.iter().map(|s| s.entry.clone()).collect()
    }
}

/// Run the full discovery loop on a loaded corpus.
pub fn discover(corpus: &CorpusData, cfg: &DiscoveryConfig, master_seed: u64) -> Result<DiscoveryOutcome> {
    cfg.validate()?;
    let d1: Vec<&HogPyramid> = corpus
        .ids(Role::Discovery, Fold::One)
        .iter()
        .map(|id| &corpus.pyramids[id])
        .collect();
    if d1.is_empty() {
        return Err(Error::EmptyInput("discovery fold 1"));
    }
    for fold in [Fold::One, Fold::Two] {
        if corpus.ids(Role::Natural, fold).is_empty() {
            return Err(Error::EmptyInput("natural fold"));
        }
        if corpus.ids(Role::Discovery, fold).is_empty() {
            return Err(Error::EmptyInput("discovery fold"));
        }
    }

    let refs = sample_patches(&d1, &cfg.sampling, seed::derive(master_seed, "sample", 0));
    log::info!("sampled {} patches from discovery fold 1", refs.len());
    let mut clusters = init_clusters(&refs, corpus, cfg, seed::derive(master_seed, "kmeans", 0))?;
    let kmeans_k = (refs.len() / cfg.kmeans_k_divisor).max(1);
    log::info!(
        "k-means k = {kmeans_k}; {} clusters of size >= {} survive",
        clusters.len(),
        cfg.min_cluster_size
    );

    // Membership history per cluster: history[0] holds the k-means seeds,
    // history[t + 1] the state after iteration t.
    let mut history: BTreeMap<u32, Vec<BTreeSet<PatchRef>>> = clusters
        .iter()
        .map(|c| (c.id, vec![c.member_set()]))
        .collect();
    let lag = cfg.convergence_lag();

    let mut models = BTreeMap::new();
    let mut final_val_detections = BTreeMap::new();
    let mut iterations: Vec<IterationSnapshot> = Vec::new();
    let mut all_converged = false;
    let mut final_folds = cfg.folds_for(0);

    for t in 0..cfg.max_iterations as u32 {
        let (train_fold, val_fold) = cfg.folds_for(t);
        final_folds = (train_fold, val_fold);
        let alive_in = clusters.iter().filter(|c| c.alive).count();
        let out = run_iteration(&clusters, corpus, train_fold, val_fold, cfg, t, master_seed);

        let mut converged = 0;
        let mut churned = 0;
        for c in out.clusters.iter().filter(|c| c.alive) {
            let h = history.entry(c.id).or_default();
            let set = c.member_set();
            let same = h
                .len()
                .checked_sub(lag)
                .and_then(|i| h.get(i))
                .map(|prev| prev == &set)
                .unwrap_or(false);
            if same {
                converged += 1;
            } else if h.len() >= lag {
                churned += 1;
            }
            h.push(set);
        }

        let alive_out = out.clusters.iter().filter(|c| c.alive).count();
        let entry = DiscoveryLogEntry {
            iteration: t,
            train_fold: train_fold.into(),
            val_fold: val_fold.into(),
            alive_in,
            deaths: out.deaths.len(),
            alive_out,
            converged,
            churned,
        };
        log::info!(
            "iteration {t}: {alive_in} -> {alive_out} alive, {} deaths, {converged} converged",
            out.deaths.len()
        );
        iterations.push(IterationSnapshot {
            entry,
            clusters: out.clusters.clone(),
            models: out.models.clone(),
            deaths: out.deaths.clone(),
        });

        clusters = out.clusters;
        models = out.models;
        final_val_detections = out.val_detections;

        if alive_out == 0 {
            let diag = iterations
                .iter()
                .map(|s| format!("iter {}: {} alive, {} deaths", s.entry.iteration, s.entry.alive_out, s.entry.deaths))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::NoAliveClusters(diag));
        }
        if converged == alive_out {
            all_converged = true;
            break;
        }
    }

    Ok(DiscoveryOutcome {
        clusters,
        models,
        final_val_detections,
        iterations,
        all_converged,
        final_train_fold: final_folds.0,
        final_val_fold: final_folds.1,
        sampled_refs: refs.len(),
        kmeans_k,
    })
}

/// Load a manifest's images and run discovery.
pub fn run_discovery(
    manifest: &DatasetManifest,
    hog: &HogConfig,
    cfg: &DiscoveryConfig,
    master_seed: u64,
) -> Result<(CorpusData, DiscoveryOutcome)> {
    let corpus = CorpusData::load(manifest, hog)?;
    let outcome = discover(&corpus, cfg, master_seed)?;
    Ok((corpus, outcome))
}

/// A ranked cluster with its final membership attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedClusterFull {
    pub cluster_id: u32,
    pub purity: f64,
    pub discriminativeness: f64,
    pub combined: f64,
    pub members: Vec<PatchRef>,
}

/// Score every alive cluster on the held-out fold (purity: top-r detection
/// scores; discriminativeness: firing ratio against the natural fold),
/// rank, and de-duplicate near-identical clusters.
pub fn score_and_rank(
    corpus: &CorpusData,
    outcome: &DiscoveryOutcome,
    cfg: &DiscoveryConfig,
    rank_cfg: &RankConfig,
) -> Result<Vec<RankedClusterFull>> {
    rank_cfg.validate(cfg.members_per_cluster)?;
    let n_val_ids = corpus.ids(Role::Natural, outcome.final_val_fold);

    let alive: Vec<&Cluster> = outcome.clusters.iter().filter(|c| c.alive).collect();
    let scores: Vec<ClusterScores> = alive
        .par_iter()
        .map(|c| -> Result<ClusterScores> {
            let model = outcome
                .models
                .get(&c.id)
                .ok_or_else(|| Error::NoAliveClusters(format!("missing model for {}", c.id)))?;
            let d_dets = outcome
                .final_val_detections
                .get(&c.id)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            let det_scores: Vec<f64> = d_dets.iter().map(|d| d.score).collect();
            let purity = purity_score(&det_scores, rank_cfg.r, cfg.svm.score_floor);
            let mut n_fires = 0usize;
            for id in n_val_ids {
                let pyr = corpus.pyramid(id)?;
                n_fires += detect(model, pyr, cfg.svm.score_floor, cfg.nms_iou).len();
            }
            let discriminativeness = discriminativeness_score(c.id, d_dets.len(), n_fires)?;
            Ok(ClusterScores {
                cluster_id: c.id,
                purity,
                discriminativeness,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let all = rank_clusters(
        &scores,
        &RankConfig {
            n: scores.len().max(1),
            ..rank_cfg.clone()
        },
    );
    let member_sets: BTreeMap<u32, BTreeSet<PatchRef>> =
        alive.iter().map(|c| (c.id, c.member_set())).collect();
    let mut deduped = dedup_ranked(all, &member_sets, cfg.dedup_jaccard);
    deduped.truncate(rank_cfg.n);

    let by_id: BTreeMap<u32, &Cluster> = alive.iter().map(|c| (c.id, *c)).collect();
    Ok(deduped
        .into_iter()
        .map(|r: RankedCluster| RankedClusterFull {
            members: by_id[&r.cluster_id]
                .members
                .iter()
                .map(|m| m.patch.clone())
                .collect(),
            cluster_id: r.cluster_id,
            purity: r.purity,
            discriminativeness: r.discriminativeness,
            combined: r.combined,
        })
        .collect())
}
