//! Cluster ranking: purity (top-r validation scores) plus
//! discriminativeness (firing ratio on the discovery set), z-normalized and
//! linearly combined.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PatchRef;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankConfig {
    /// Top validation firings summed into the purity score; must exceed the
    /// cluster size m so ranking measures generalization.
    pub r: usize,
    /// Weight of discriminativeness after z-normalization of both terms.
    pub lambda: f64,
    /// Ranked clusters to keep.
    pub n: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            r: 10,
            lambda: 1.0,
            n: 1000,
        }
    }
}

impl RankConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.r <= m {
            return Err(Error::InvalidConfig(format!(
                "rank.r must exceed the cluster size m ({m}), got {}",
                self.r
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("rank.n must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw per-cluster ranking inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScores {
    pub cluster_id: u32,
    pub purity: f64,
    pub discriminativeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCluster {
    pub cluster_id: u32,
    pub purity: f64,
    pub discriminativeness: f64,
    /// `z(purity) + lambda * z(discriminativeness)`.
    pub combined: f64,
}

/// Sum of the `r` highest detection scores; detectors with fewer firings
/// are padded with the floor, penalizing sparse detectors.
pub fn purity_score(scores: &[f64], r: usize, floor: f64) -> f64 {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    sorted.truncate(r);
    let missing = r.saturating_sub(sorted.len());
    sorted.iter().sum::<f64>() + floor * missing as f64
}

/// Fraction of firings landing on the discovery set rather than on
/// discovery plus natural. Zero total firings indicate a dead cluster
/// leaked into ranking and are an error.
pub fn discriminativeness_score(cluster_id: u32, d_fires: usize, n_fires: usize) -> Result<f64> {
    let total = d_fires + n_fires;
    if total == 0 {
        return Err(Error::ZeroFirings(cluster_id));
    }
    Ok(d_fires as f64 / total as f64)
}

fn z_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|v| (v - mean) / std).collect()
    }
}

/// Rank clusters by `z(purity) + lambda * z(discriminativeness)`,
/// descending; ties broken by cluster id. The top `n` are returned.
pub fn rank_clusters(scores: &[ClusterScores], cfg: &RankConfig) -> Vec<RankedCluster> {
    let purities: Vec<f64> = scores.iter().map(|s| s.purity).collect();
    let discs: Vec<f64> = scores.iter().map(|s| s.discriminativeness).collect();
    let pz = z_normalize(&purities);
    let dz = z_normalize(&discs);
    let mut ranked: Vec<RankedCluster> = scores
        .iter()
        .zip(pz.iter().zip(&dz))
        .map(|(s, (&p, &d))| RankedCluster {
            cluster_id: s.cluster_id,
            purity: s.purity,
            discriminativeness: s.discriminativeness,
            combined: p + cfg.lambda * d,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.combined
            .partial_cmp(&a.combined)
            .expect("finite combined scores")
            .then_with(|| a.cluster_id.cmp(&b.cluster_id))
    });
    ranked.truncate(cfg.n);
    ranked
}

/// Drop clusters whose top-m member set is nearly identical (Jaccard at or
/// above `threshold`) to a higher-ranked one; keeps the ranked list diverse.
pub fn dedup_ranked(
    ranked: Vec<RankedCluster>,
    members: &BTreeMap<u32, BTreeSet<PatchRef>>,
    threshold: f64,
) -> Vec<RankedCluster> {
    let mut kept: Vec<RankedCluster> = Vec::with_capacity(ranked.len());
    for c in ranked {
        let Some(set) = members.get(&c.cluster_id) else {
            continue;
        };
        let duplicate = kept.iter().any(|k| {
            let kset = &members[&k.cluster_id];
            let inter = set.intersection(kset).count();
            let union = set.len() + kset.len() - inter;
            union > 0 && inter as f64 / union as f64 >= threshold
        });
        if !duplicate {
            kept.push(c);
        }
    }
    kept
}
