use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::Metric;
use crate::error::{AstraError, Result};
use crate::linalg::{cosine, euclidean};

pub fn pairwise_distance(a: ArrayView1<f64>, b: ArrayView1<f64>, metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => euclidean(a, b),
        // Rounding leaves 1 - cos slightly off zero for parallel rows.
        Metric::Cosine => match 1.0 - cosine(a, b) {
            d if d < 1e-12 => 0.0,
            d => d,
        },
    }
}

/// Exact k-nearest-neighbor lists, self excluded, sorted by distance with
/// index as the tie-break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

pub fn build_knn_graph(features: &Array2<f64>, k: usize, metric: Metric) -> Result<KnnGraph> {
    let n = features.nrows();
    if k == 0 || k >= n {
        return Err(AstraError::invalid(format!("kNN with k={k} requires 1 <= k < n={n}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(AstraError::invalid("non-finite feature value"));
    }
    let mut dist = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = pairwise_distance(features.row(i), features.row(j), metric);
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    let mut indices = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[[i, a]].total_cmp(&dist[[i, b]]).then(a.cmp(&b)));
        order.truncate(k);
        distances.push(order.iter().map(|&j| dist[[i, j]]).collect());
        indices.push(order);
    }
    Ok(KnnGraph { indices, distances })
}
