//! Iterative cross-validated discriminative clustering: k-means
//! initialization, the train/detect/re-cluster loop with fold swapping,
//! convergence detection, and final ranking.

mod kmeans;
mod pipeline;
mod ranking;

pub use kmeans::{kmeans, KMeansResult};
pub use pipeline::{
    discover, has_converged, init_clusters, run_discovery, run_iteration, score_and_rank, Cluster,
    ClusterMember, CorpusData, DiscoveryConfig, DiscoveryLogEntry, DiscoveryOutcome,
    IterationOutcome, IterationSnapshot, RankedClusterFull,
};
pub use ranking::{
    dedup_ranked, discriminativeness_score, purity_score, rank_clusters, ClusterScores,
    RankConfig, RankedCluster,
};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::synth::{render_corpus, SynthConfig};
    use crate::corpus::{Fold, Role};
    use crate::features::{HogConfig, PatchRef, SampleConfig};
    use crate::svm::SvmConfig;

    fn mini_corpus(seed: u64, classes: usize, num_images: usize, natural: usize) -> CorpusData {
        let cfg = SynthConfig {
            num_images,
            natural_images: natural,
            pattern_classes: classes,
            patterns_per_image: (1, 1),
            pattern_scale_range: (80, 88),
            image_size: (192, 192),
            seed,
            ..SynthConfig::default()
        };
        let corpus = render_corpus(&cfg).unwrap();
        let dir = std::path::Path::new("/nonexistent");
        let manifest = corpus.manifest(dir);
        let images: Vec<(Arc<str>, crate::corpus::GrayImage)> = corpus
            .images
            .iter()
            .map(|s| (Arc::from(s.id.as_str()), s.image.clone()))
            .collect();
        CorpusData::from_images(manifest, images, &HogConfig::default()).unwrap()
    }

    fn desk_discovery_cfg() -> DiscoveryConfig {
        DiscoveryConfig {
            sampling: SampleConfig {
                per_image_samples: 20,
                ..SampleConfig::default()
            },
            svm: SvmConfig {
                round0_negatives: 400,
                negative_cache_cap: 2000,
                ..SvmConfig::default()
            },
            max_iterations: 6,
            ..DiscoveryConfig::default()
        }
    }

    fn cluster_of(refs: Vec<PatchRef>) -> Cluster {
        Cluster {
            id: 0,
            members: refs
                .into_iter()
                .map(|patch| ClusterMember { patch, score: None })
                .collect(),
            born_iteration: 0,
            alive: true,
        }
    }

    #[test]
    fn has_converged_compares_member_sets() {
        let r = |img: &str, cx: usize| PatchRef {
            image_id: Arc::from(img),
            level: 0,
            cx,
            cy: 1,
        };
        let a = cluster_of(vec![r("x", 1), r("y", 2)]);
        let b = cluster_of(vec![r("y", 2), r("x", 1)]); // order-insensitive
        assert!(has_converged(&a, &b));
        let c = cluster_of(vec![r("x", 1), r("y", 3)]);
        assert!(!has_converged(&a, &c));
    }

    #[test]
    fn init_clusters_requires_enough_refs() {
        let corpus = mini_corpus(1, 1, 4, 2);
        let cfg = desk_discovery_cfg();
        let refs: Vec<PatchRef> = Vec::new();
        assert!(matches!(
            init_clusters(&refs, &corpus, &cfg, 0),
            Err(crate::Error::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn paper_scale_k_arithmetic() {
        // 750 images x 150 samples = 112,500 patches; k = S/4 = 28,125.
        let s = 750 * 150;
        let cfg = DiscoveryConfig::default();
        assert_eq!(s / cfg.kmeans_k_divisor, 28_125);
    }

    #[test]
    fn rebuilt_members_land_on_planted_patterns() {
        // Seed a cluster with three planted-pattern patches; after one
        // iteration its members must overlap planted boxes (IoU > 0.2) in
        // the validation fold, checked against ground truth.
        let corpus = mini_corpus(3, 1, 10, 6);
        let cfg = desk_discovery_cfg();

        let d1: Vec<Arc<str>> = corpus.ids(Role::Discovery, Fold::One).to_vec();
        assert!(d1.len() >= 3);
        let mut refs = Vec::new();
        for id in d1.iter().take(3) {
            let ann = &corpus.manifest.annotations[id.as_ref()][0];
            let pyr = corpus.pyramid(id).unwrap();
            refs.push(pyr.best_window_for(&ann.bbox).unwrap());
        }
        let cluster = cluster_of(refs);

        let out = run_iteration(&[cluster], &corpus, Fold::One, Fold::Two, &cfg, 0, 11);
        let rebuilt = &out.clusters[0];
        assert!(rebuilt.alive, "died: {:?}", out.deaths);
        assert!(!rebuilt.members.is_empty());
        for m in &rebuilt.members {
            // members come from the validation fold and score above -1
            assert!(corpus
                .ids(Role::Discovery, Fold::Two)
                .iter()
                .any(|id| *id == m.patch.image_id));
            assert!(m.score.unwrap() > -1.0);
            let anns = &corpus.manifest.annotations[m.patch.image_id.as_ref()];
            let rect = corpus
                .pyramid(&m.patch.image_id)
                .unwrap()
                .footprint(&m.patch)
                .unwrap();
            let best_iou = anns
                .iter()
                .map(|a| rect.iou(&a.bbox))
                .fold(0.0f64, f64::max);
            assert!(
                best_iou > 0.2,
                "member {:?} iou {best_iou} with planted boxes",
                m.patch
            );
        }
    }

    #[test]
    fn discovery_on_three_class_corpus_recovers_every_class() {
        let corpus = mini_corpus(5, 3, 24, 12);
        let cfg = desk_discovery_cfg();
        let outcome = discover(&corpus, &cfg, 77).unwrap();

        // Structural invariants along the way.
        let mut seen_dead: std::collections::BTreeSet<u32> = Default::default();
        for snap in &outcome.iterations {
            let (train_fold, val_fold) = cfg.folds_for(snap.entry.iteration);
            assert_eq!(snap.entry.train_fold, u8::from(train_fold));
            for c in &snap.clusters {
                if c.alive {
                    assert!(
                        !seen_dead.contains(&c.id),
                        "cluster {} resurrected",
                        c.id
                    );
                    // After any iteration every alive cluster holds
                    // min_fires..=m members, all scoring above the floor,
                    // all from the validation fold.
                    assert!(c.members.len() >= cfg.min_fires);
                    assert!(c.members.len() <= cfg.members_per_cluster);
                    for m in &c.members {
                        assert!(m.score.unwrap() > cfg.svm.score_floor);
                        assert!(corpus
                            .ids(Role::Discovery, val_fold)
                            .iter()
                            .any(|id| *id == m.patch.image_id));
                    }
                } else {
                    seen_dead.insert(c.id);
                }
            }
        }

        // Ground-truth oracle: every planted class is the majority overlap
        // of at least one surviving cluster.
        let mut covered: std::collections::BTreeSet<String> = Default::default();
        for c in outcome.alive() {
            let mut label_votes: std::collections::BTreeMap<String, usize> = Default::default();
            for m in &c.members {
                let rect = corpus
                    .pyramid(&m.patch.image_id)
                    .unwrap()
                    .footprint(&m.patch)
                    .unwrap();
                let anns = &corpus.manifest.annotations[m.patch.image_id.as_ref()];
                if let Some(best) = anns
                    .iter()
                    .max_by(|a, b| {
                        rect.overlap_fraction(&a.bbox)
                            .partial_cmp(&rect.overlap_fraction(&b.bbox))
                            .unwrap()
                    })
                    .filter(|a| rect.overlap_fraction(&a.bbox) >= 0.2)
                {
                    *label_votes.entry(best.label.clone()).or_default() += 1;
                }
            }
            if let Some((label, votes)) = label_votes.into_iter().max_by_key(|(_, v)| *v) {
                if votes * 2 > c.members.len() {
                    covered.insert(label);
                }
            }
        }
        for class in ["class0", "class1", "class2"] {
            assert!(
                covered.contains(class),
                "no surviving cluster locked onto {class}; covered: {covered:?}"
            );
        }
    }

    #[test]
    fn convergence_stops_the_loop_and_respects_the_cap() {
        let corpus = mini_corpus(9, 1, 12, 8);
        let mut cfg = desk_discovery_cfg();
        cfg.max_iterations = 10;
        let outcome = discover(&corpus, &cfg, 3).unwrap();
        assert!(outcome.iterations.len() <= 10);
        if outcome.all_converged {
            // The last entry's converged count equals its alive count.
            let last = outcome.iterations.last().unwrap();
            assert_eq!(last.entry.converged, last.entry.alive_out);
        }
        // Fold alternation: iteration t trains on fold (t % 2) + 1.
        for (t, snap) in outcome.iterations.iter().enumerate() {
            assert_eq!(snap.entry.train_fold, (t % 2) as u8 + 1);
        }
    }

    #[test]
    fn score_and_rank_produces_ordered_finite_scores() {
        let corpus = mini_corpus(5, 2, 16, 8);
        let cfg = desk_discovery_cfg();
        let outcome = discover(&corpus, &cfg, 21).unwrap();
        let ranked = score_and_rank(&corpus, &outcome, &cfg, &RankConfig::default()).unwrap();
        assert!(!ranked.is_empty());
        for w in ranked.windows(2) {
            assert!(w[0].combined >= w[1].combined);
        }
        for r in &ranked {
            assert!(r.purity.is_finite());
            assert!((0.0..=1.0).contains(&r.discriminativeness));
            assert!(!r.members.is_empty());
        }
    }

    #[test]
    fn full_pipeline_is_deterministic() {
        let corpus = mini_corpus(2, 2, 12, 8);
        let cfg = desk_discovery_cfg();
        let rank = RankConfig::default();
        let a = discover(&corpus, &cfg, 5).unwrap();
        let b = discover(&corpus, &cfg, 5).unwrap();
        let ra: Vec<u32> = score_and_rank(&corpus, &a, &cfg, &rank)
            .unwrap()
            .iter()
            .map(|r| r.cluster_id)
            .collect();
        let rb: Vec<u32> = score_and_rank(&corpus, &b, &cfg, &rank)
            .unwrap()
            .iter()
            .map(|r| r.cluster_id)
            .collect();
        assert_eq!(ra, rb);
        assert_eq!(a.iterations.len(), b.iterations.len());
    }

    #[test]
    fn patch_ref_serializes_with_named_fields() {
        let r = PatchRef {
            image_id: Arc::from("img7"),
            level: 2,
            cx: 3,
            cy: 4,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"image_id":"img7","level":2,"cx":3,"cy":4}"#);
        let back: PatchRef = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
