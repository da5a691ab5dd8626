//! Clustering algorithms, validity indices, composite model selection and
//! the statistical checks run on the selected solution.

mod agglomerative;
mod composite;
mod density;
mod gap;
mod kmeans;
mod metrics;
mod sensitivity;
mod stability;
mod sweep;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use agglomerative::{agglomerative, Dendrogram, Linkage, Merge};
pub use composite::{
    composite_score, composite_value, granularity_bonus, normalize_scores, rank_scored, CompositeWeights,
    ScoredCandidate,
};
pub use density::{dbscan, k_distances, knee_index, optics, optics_ordering, xi_clusters, OpticsOrdering};
pub use gap::{gap_statistic, within_dispersion, GapResult};
pub use kmeans::kmeans;
pub use metrics::{calinski_harabasz, davies_bouldin, silhouette, validity_metrics, QualityScores, CH_CAP};
pub use sensitivity::{sample_bounded_dirichlet, weight_sensitivity, SensitivityReport, WinRate};
pub use stability::{adjusted_rand_index, bootstrap_stability, normalized_mutual_info, StabilityReport};
pub use sweep::{run_sweep, Candidate, SweepConfig, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    AgglomerativeWard,
    AgglomerativeAverage,
    KMeans,
    Dbscan,
    Optics,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::AgglomerativeWard => "Agglomerative (Ward)",
            Algorithm::AgglomerativeAverage => "Agglomerative (Average)",
            Algorithm::KMeans => "k-means",
            Algorithm::Dbscan => "DBSCAN",
            Algorithm::Optics => "OPTICS",
        })
    }
}

/// A fully parameterized clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum ClusterSpec {
    Agglomerative { linkage: Linkage, k: usize },
    KMeans { k: usize, seed: u64 },
    Dbscan { min_samples: usize },
    Optics { min_samples: usize, xi: f64 },
}

impl ClusterSpec {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ClusterSpec::Agglomerative {
                linkage: Linkage::Ward, ..
            } => Algorithm::AgglomerativeWard,
            ClusterSpec::Agglomerative {
                linkage: Linkage::Average,
                ..
            } => Algorithm::AgglomerativeAverage,
            ClusterSpec::KMeans { .. } => Algorithm::KMeans,
            ClusterSpec::Dbscan { .. } => Algorithm::Dbscan,
            ClusterSpec::Optics { .. } => Algorithm::Optics,
        }
    }

    pub fn run(&self, points: &Array2<f64>) -> Result<ClusterSolution> {
        match *self {
            ClusterSpec::Agglomerative { linkage, k } => agglomerative(points, linkage, k),
            ClusterSpec::KMeans { k, seed } => kmeans(points, k, seed),
            ClusterSpec::Dbscan { min_samples } => dbscan(points, min_samples),
            ClusterSpec::Optics { min_samples, xi } => optics(points, min_samples, xi),
        }
    }

    /// The same spec with a different cluster count, where that applies.
    pub fn with_k(&self, new_k: usize) -> ClusterSpec {
        match *self {
            ClusterSpec::Agglomerative { linkage, .. } => ClusterSpec::Agglomerative { linkage, k: new_k },
            ClusterSpec::KMeans { seed, .. } => ClusterSpec::KMeans { k: new_k, seed },
            ref other => other.clone(),
        }
    }
}

/// Labels plus bookkeeping. Label `-1` marks noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSolution {
    pub spec: ClusterSpec,
    pub labels: Vec<i32>,
    pub k_effective: usize,
    pub cluster_sizes: Vec<usize>,
    pub noise_fraction: f64,
    /// Set when the algorithm hit a degenerate case (e.g. k-means on
    /// identical points, or an ε of zero).
    #[serde(default)]
    pub degenerate: bool,
}

pub const NOISE: i32 = -1;

impl ClusterSolution {
    /// Build from raw labels, renumbering clusters `0..K` in order of first
    /// appearance so that equal partitions compare equal.
    pub fn from_labels(spec: ClusterSpec, raw: &[i32]) -> Self {
        let mut remap: BTreeMap<i32, i32> = BTreeMap::new();
        let mut next = 0;
        let labels: Vec<i32> = raw
            .iter()
            .map(|&l| {
                if l < 0 {
                    NOISE
                } else {
                    *remap.entry(l).or_insert_with(|| {
                        next += 1;
                        next - 1
                    })
                }
            })
            .collect();
        let k = next as usize;
        let mut sizes = vec![0usize; k];
        let mut noise = 0usize;
        for &l in &labels {
            if l < 0 {
                noise += 1;
            } else {
                sizes[l as usize] += 1;
            }
        }
        let n = labels.len().max(1);
        ClusterSolution {
            spec,
            labels,
            k_effective: k,
            cluster_sizes: sizes,
            noise_fraction: noise as f64 / n as f64,
            degenerate: false,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.spec.algorithm()
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }
}
