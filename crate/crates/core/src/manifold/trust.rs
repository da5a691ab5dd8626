use ndarray::Array2;

use super::knn::pairwise_distance;
use super::Metric;
use crate::error::{AstraError, Result};

fn ranked_neighbors(x: &Array2<f64>, metric: Metric) -> Vec<Vec<usize>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let d: Vec<f64> = (0..n).map(|j| pairwise_distance(x.row(i), x.row(j), metric)).collect();
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
            order
        })
        .collect()
}

/// Trustworthiness of `low` as an embedding of `high`: 1 minus a
/// normalized penalty for every low-dimensional neighbor that is not a
/// high-dimensional neighbor, weighted by how far down the
/// high-dimensional ranking it sits. Distances are Euclidean in the low
/// space and `metric` in the high space; ties rank by index.
pub fn trustworthiness(high: &Array2<f64>, low: &Array2<f64>, k: usize, metric: Metric) -> Result<f64> {
    let n = high.nrows();
    if low.nrows() != n {
        return Err(AstraError::DimensionMismatch {
            expected: n,
            found: low.nrows(),
            context: "trustworthiness rows".into(),
        });
    }
    if k == 0 || 2 * k >= n {
        return Err(AstraError::invalid(format!(
            "trustworthiness needs 1 <= k < n/2 (k={k}, n={n})"
        )));
    }
    let hi = ranked_neighbors(high, metric);
    let lo = ranked_neighbors(low, Metric::Euclidean);
    let mut penalty = 0.0;
    let mut rank = vec![0usize; n];
    for i in 0..n {
        for (r, &j) in hi[i].iter().enumerate() {
            rank[j] = r + 1;
        }
        for &j in &lo[i][..k] {
            if rank[j] > k {
                penalty += (rank[j] - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}
