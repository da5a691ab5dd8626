//! Silhouette, Calinski–Harabasz and Davies–Bouldin indices. Noise points
//! (negative labels) are dropped before any index is computed.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{AstraError, Result};
use crate::linalg::{euclidean, euclidean_distances, sq_euclidean};

/// Sentinel reported for CH when the within-cluster dispersion is zero.
pub const CH_CAP: f64 = 1e12;
/// Sentinel reported for DB when two distinct clusters share a centroid.
pub const DB_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityScores {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
    /// Min-max normalized scores, filled in by the composite ranking.
    pub sil_hat: f64,
    pub ch_hat: f64,
    pub db_hat: f64,
    pub composite: f64,
    /// CH or DB hit its sentinel cap.
    pub capped: bool,
}

/// Non-noise points and labels remapped to `0..K`.
struct Partition {
    points: Array2<f64>,
    labels: Vec<usize>,
    k: usize,
}

fn partition(points: &Array2<f64>, labels: &[i32]) -> Result<Partition> {
    if labels.len() != points.nrows() {
        return Err(AstraError::DimensionMismatch {
            expected: points.nrows(),
            found: labels.len(),
            context: "labels".into(),
        });
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    let mut distinct: Vec<i32> = keep.iter().map(|&i| labels[i]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(AstraError::Degenerate(format!(
            "validity indices need at least 2 clusters, found {}",
            distinct.len()
        )));
    }
    let remapped = keep
        .iter()
        .map(|&i| distinct.binary_search(&labels[i]).unwrap_or(0))
        .collect();
    let sub = Array2::from_shape_fn((keep.len(), points.ncols()), |(r, c)| points[[keep[r], c]]);
    Ok(Partition {
        points: sub,
        labels: remapped,
        k: distinct.len(),
    })
}

fn centroids(p: &Partition) -> (Array2<f64>, Vec<usize>) {
    let mut c = Array2::<f64>::zeros((p.k, p.points.ncols()));
    let mut counts = vec![0usize; p.k];
    for (row, &l) in p.points.outer_iter().zip(&p.labels) {
        counts[l] += 1;
        let mut target = c.row_mut(l);
        target += &row;
    }
    for (l, &cnt) in counts.iter().enumerate() {
        c.row_mut(l).mapv_inplace(|v| v / cnt as f64);
    }
    (c, counts)
}

/// Mean silhouette width. Points in singleton clusters score 0.
pub fn silhouette(points: &Array2<f64>, labels: &[i32]) -> Result<f64> {
    let p = partition(points, labels)?;
    let n = p.points.nrows();
    let d = euclidean_distances(&p.points);
    let mut counts = vec![0usize; p.k];
    for &l in &p.labels {
        counts[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; p.k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[p.labels[j]] += d[[i, j]];
        }
        let own = p.labels[i];
        if counts[own] <= 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..p.k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Returns the index and whether it was capped.
pub fn calinski_harabasz(points: &Array2<f64>, labels: &[i32]) -> Result<(f64, bool)> {
    let p = partition(points, labels)?;
    let n = p.points.nrows();
    let (c, counts) = centroids(&p);
    let mean: Array1<f64> = p.points.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let between: f64 = (0..p.k)
        .map(|l| counts[l] as f64 * sq_euclidean(c.row(l), mean.view()))
        .sum();
    let within: f64 = p
        .points
        .outer_iter()
        .zip(&p.labels)
        .map(|(row, &l)| sq_euclidean(row, c.row(l)))
        .sum();
    if within <= 0.0 || n <= p.k {
        return Ok((CH_CAP, true));
    }
    let ch = (between / (p.k - 1) as f64) / (within / (n - p.k) as f64);
    Ok((ch.min(CH_CAP), ch >= CH_CAP))
}

/// Returns the index and whether it was capped.
pub fn davies_bouldin(points: &Array2<f64>, labels: &[i32]) -> Result<(f64, bool)> {
    let p = partition(points, labels)?;
    let (c, counts) = centroids(&p);
    let mut scatter = vec![0.0; p.k];
    for (row, &l) in p.points.outer_iter().zip(&p.labels) {
        scatter[l] += euclidean(row, c.row(l));
    }
    for l in 0..p.k {
        scatter[l] /= counts[l] as f64;
    }
    let mut capped = false;
    let mut total = 0.0;
    for i in 0..p.k {
        let mut worst = 0.0f64;
        for j in 0..p.k {
            if i == j {
                continue;
            }
            let m = euclidean(c.row(i), c.row(j));
            let s = scatter[i] + scatter[j];
            let r = if m > 0.0 {
                s / m
            } else if s > 0.0 {
                capped = true;
                DB_CAP
            } else {
                0.0
            };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(((total / p.k as f64).min(DB_CAP), capped))
}

/// Raw indices for one labelling; normalized fields are left at zero.
pub fn validity_metrics(points: &Array2<f64>, labels: &[i32]) -> Result<QualityScores> {
    let silhouette = silhouette(points, labels)?;
    let (ch, ch_capped) = calinski_harabasz(points, labels)?;
    let (db, db_capped) = davies_bouldin(points, labels)?;
    Ok(QualityScores {
        silhouette,
        calinski_harabasz: ch,
        davies_bouldin: db,
        capped: ch_capped || db_capped,
        ..Default::default()
    })
}
