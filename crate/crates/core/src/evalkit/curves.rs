//! Cumulative purity/coverage curves and their areas under the curve.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::label::majority_label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// j: clusters considered so far.
    pub clusters_considered: usize,
    /// Mean label purity of the top-j clusters.
    pub cumulative_purity: f64,
    /// Fraction of dataset images fired on by the union of the top-j
    /// clusters; non-decreasing in j.
    pub cumulative_coverage: f64,
}

/// One cluster prepared for evaluation: each member is its image plus its
/// resolved ground-truth label (`None` = background).
#[derive(Debug, Clone)]
pub struct ClusterEvalInput {
    pub cluster_id: u32,
    pub members: Vec<(Arc<str>, Option<String>)>,
}

#[derive(Debug, Clone)]
pub struct PurityCoverage {
    pub points: Vec<CurvePoint>,
    pub auc_purity: f64,
    pub auc_coverage: f64,
}

/// Compute per-cluster label purity, sort clusters by decreasing purity,
/// and accumulate the curve. AUC is the mean over curve points, so both
/// areas live in `[0, 1]`.
pub fn purity_coverage_curves(
    clusters: &[ClusterEvalInput],
    dataset_images: usize,
) -> Result<PurityCoverage> {
    if clusters.is_empty() {
        return Err(Error::EmptyInput("clusters for evaluation"));
    }
    if dataset_images == 0 {
        return Err(Error::EmptyInput("evaluation dataset"));
    }

    let mut scored: Vec<(f64, &ClusterEvalInput)> = clusters
        .iter()
        .map(|c| {
            let (purity, _) = majority_label(c.members.iter().map(|(_, l)| l.as_deref()));
            (purity, c)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite purity")
            .then_with(|| a.1.cluster_id.cmp(&b.1.cluster_id))
    });

    let mut covered: BTreeSet<&str> = BTreeSet::new();
    let mut purity_sum = 0.0;
    let mut points = Vec::with_capacity(scored.len());
    for (j, (purity, cluster)) in scored.iter().enumerate() {
        purity_sum += purity;
        for (img, _) in &cluster.members {
            covered.insert(img.as_ref());
        }
        points.push(CurvePoint {
            clusters_considered: j + 1,
            cumulative_purity: purity_sum / (j + 1) as f64,
            cumulative_coverage: covered.len() as f64 / dataset_images as f64,
        });
    }
    let n = points.len() as f64;
    let auc_purity = points.iter().map(|p| p.cumulative_purity).sum::<f64>() / n;
    let auc_coverage = points.iter().map(|p| p.cumulative_coverage).sum::<f64>() / n;
    Ok(PurityCoverage {
        points,
        auc_purity,
        auc_coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(id: u32, members: &[(&str, Option<&str>)]) -> ClusterEvalInput {
        ClusterEvalInput {
            cluster_id: id,
            members: members
                .iter()
                .map(|(img, l)| (Arc::from(*img), l.map(str::to_string)))
                .collect(),
        }
    }

    #[test]
    fn single_pure_cluster_covering_10_of_100() {
        let members: Vec<(String, Option<&str>)> = (0..10)
            .map(|i| (format!("img{i}"), Some("a")))
            .collect();
        let input = ClusterEvalInput {
            cluster_id: 0,
            members: members
                .iter()
                .map(|(img, l)| (Arc::from(img.as_str()), l.map(str::to_string)))
                .collect(),
        };
        let pc = purity_coverage_curves(&[input], 100).unwrap();
        assert_eq!(pc.points.len(), 1);
        let p = &pc.points[0];
        assert_eq!(p.clusters_considered, 1);
        assert_eq!(p.cumulative_purity, 1.0);
        assert!((p.cumulative_coverage - 0.1).abs() < 1e-12);
        assert_eq!(pc.auc_purity, 1.0);
        assert!((pc.auc_coverage - 0.1).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_cluster_auc() {
        // Purities 1.0 and 0.5 -> cumulative purity (1.0, 0.75); the AUC
        // is exactly 0.875.
        let pure = cluster(0, &[("x1", Some("a")), ("x2", Some("a")), ("x3", Some("a")), ("x4", Some("a"))]);
        let half = cluster(
            1,
            &[("y1", Some("a")), ("y2", Some("a")), ("y3", Some("b")), ("y4", Some("b"))],
        );
        let pc = purity_coverage_curves(&[half.clone(), pure.clone()], 8).unwrap();
        assert_eq!(pc.points[0].cumulative_purity, 1.0);
        assert_eq!(pc.points[1].cumulative_purity, 0.75);
        assert_eq!(pc.auc_purity, 0.875);
        // All 8 images covered at j = 2.
        assert_eq!(pc.points[1].cumulative_coverage, 1.0);
    }

    #[test]
    fn coverage_is_monotone_and_purity_starts_at_best() {
        let clusters = vec![
            cluster(0, &[("a", Some("x")), ("b", Some("x")), ("c", None)]),
            cluster(1, &[("a", Some("y")), ("d", Some("y"))]),
            cluster(2, &[("e", None), ("f", None)]),
        ];
        let pc = purity_coverage_curves(&clusters, 10).unwrap();
        for w in pc.points.windows(2) {
            assert!(w[1].cumulative_coverage >= w[0].cumulative_coverage);
        }
        // First point carries the best cluster's purity (1.0 for cluster 1).
        assert_eq!(pc.points[0].cumulative_purity, 1.0);
        // The all-background cluster contributes zero purity.
        assert!(pc.points[2].cumulative_purity < pc.points[1].cumulative_purity);
    }

    #[test]
    fn empty_cluster_list_errors() {
        assert!(purity_coverage_curves(&[], 10).is_err());
    }
}
