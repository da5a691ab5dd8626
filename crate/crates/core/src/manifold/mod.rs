//! Dimensionality reduction: exact kNN graphs, a self-contained UMAP, and
//! trustworthiness as an embedding-quality diagnostic.

mod knn;
mod trust;
mod umap;

use serde::{Deserialize, Serialize};

pub use knn::{build_knn_graph, pairwise_distance, KnnGraph};
pub use trust::trustworthiness;
pub use umap::{fit_ab, fuzzy_simplicial_set, smooth_knn_dist, spectral_layout, umap_project, FuzzyGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifoldConfig {
    /// Neighborhood size, counting the point itself.
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub out_dims: usize,
    pub metric: Metric,
    pub n_epochs: usize,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
    pub repulsion_strength: f64,
    pub rng_seed: u64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            n_neighbors: 10,
            min_dist: 0.0,
            spread: 1.0,
            out_dims: 4,
            metric: Metric::Cosine,
            n_epochs: 500,
            negative_sample_rate: 5,
            learning_rate: 1.0,
            repulsion_strength: 1.0,
            rng_seed: 42,
        }
    }
}

impl ManifoldConfig {
    pub fn with_dims(mut self, out_dims: usize) -> Self {
        self.out_dims = out_dims;
        self
    }

    pub fn validate(&self, n_points: usize) -> crate::Result<()> {
        use crate::AstraError;
        if self.n_neighbors < 2 || self.n_neighbors >= n_points {
            return Err(AstraError::invalid(format!(
                "n_neighbors={} requires 2 <= n_neighbors < n={n_points}",
                self.n_neighbors
            )));
        }
        if self.out_dims < 1 {
            return Err(AstraError::invalid("out_dims must be >= 1"));
        }
        if !(self.spread > 0.0) || !(self.min_dist >= 0.0) || self.min_dist > self.spread {
            return Err(AstraError::invalid(format!(
                "need 0 <= min_dist ({}) <= spread ({}) and spread > 0",
                self.min_dist, self.spread
            )));
        }
        if !(self.learning_rate > 0.0) || self.n_epochs == 0 {
            return Err(AstraError::invalid("learning_rate and n_epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub coords: ndarray::Array2<f64>,
    pub config: ManifoldConfig,
    /// Mean sampled cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
    pub a: f64,
    pub b: f64,
}
