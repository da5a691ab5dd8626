//! Gap statistic with uniform bounding-box reference sets and the
//! average-linkage clusterer used in the sweep.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dendrogram, Linkage};
use crate::error::{AstraError, Result};
use crate::linalg::sq_euclidean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    pub k_star: usize,
    pub ks: Vec<usize>,
    pub log_w: Vec<f64>,
    pub ref_log_w: Vec<f64>,
    pub gap: Vec<f64>,
    /// Simulation error `sd_k * sqrt(1 + 1/B)`.
    pub s: Vec<f64>,
}

/// Pooled within-cluster sum of squared distances to cluster centroids.
pub fn within_dispersion(points: &Array2<f64>, labels: &[i32]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1) as usize;
    let d = points.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (row, &l) in points.outer_iter().zip(labels) {
        if l < 0 {
            continue;
        }
        counts[l as usize] += 1;
        let mut t = sums.row_mut(l as usize);
        t += &row;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            sums.row_mut(c).mapv_inplace(|v| v / cnt as f64);
        }
    }
    points
        .outer_iter()
        .zip(labels)
        .filter(|(_, &l)| l >= 0)
        .map(|(row, &l)| sq_euclidean(row, sums.row(l as usize)))
        .sum()
}

fn log_dispersions(points: &Array2<f64>, ks: &[usize]) -> Result<Vec<f64>> {
    let dendro = Dendrogram::build(points, Linkage::Average);
    ks.iter()
        .map(|&k| {
            let labels = dendro.cut(k)?;
            Ok(within_dispersion(points, &labels).max(f64::MIN_POSITIVE).ln())
        })
        .collect()
}

/// Gap statistic over `k_min..=k_max` with `b` uniform reference sets.
/// `k*` is the smallest k with `Gap(k) >= Gap(k+1) - s(k+1)`, or `k_max`
/// when no k qualifies.
pub fn gap_statistic(points: &Array2<f64>, k_min: usize, k_max: usize, b: usize, seed: u64) -> Result<GapResult> {
    let n = points.nrows();
    if k_min == 0 || k_min > k_max || k_max >= n {
        return Err(AstraError::invalid(format!(
            "gap k range [{k_min}, {k_max}] must satisfy 1 <= k_min <= k_max < n={n}"
        )));
    }
    if b < 10 {
        return Err(AstraError::invalid(format!("gap statistic needs B >= 10, got {b}")));
    }
    let ks: Vec<usize> = (k_min..=k_max).collect();
    let log_w = log_dispersions(points, &ks)?;

    let dims = points.ncols();
    let lo: Vec<f64> = (0..dims)
        .map(|j| points.column(j).iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..dims)
        .map(|j| points.column(j).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();

    let refs: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let sample = Array2::from_shape_fn((n, dims), |(_, j)| {
                if hi[j] > lo[j] {
                    rng.random_range(lo[j]..hi[j])
                } else {
                    lo[j]
                }
            });
            log_dispersions(&sample, &ks)
        })
        .collect::<Result<_>>()?;

    let bf = b as f64;
    let mut ref_log_w = Vec::with_capacity(ks.len());
    let mut gap = Vec::with_capacity(ks.len());
    let mut s = Vec::with_capacity(ks.len());
    for (i, lw) in log_w.iter().enumerate() {
        let mean = refs.iter().map(|r| r[i]).sum::<f64>() / bf;
        let sd = (refs.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / bf).sqrt();
        ref_log_w.push(mean);
        gap.push(mean - lw);
        s.push(sd * (1.0 + 1.0 / bf).sqrt());
    }
    let k_star = (0..ks.len() - 1)
        .find(|&i| gap[i] >= gap[i + 1] - s[i + 1])
        .map_or(k_max, |i| ks[i]);
    Ok(GapResult {
        k_star,
        ks,
        log_w,
        ref_log_w,
        gap,
        s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dispersion_matches_pairwise_form() {
        // W = sum_r D_r / (2 n_r) with D_r the within-cluster pairwise sum
        let pts = ndarray::array![[0.0, 0.0], [2.0, 0.0], [5.0, 5.0], [6.0, 5.0], [5.0, 7.0]];
        let labels = [0, 0, 1, 1, 1];
        let mut expected = 0.0;
        for c in 0..2 {
            let idx: Vec<usize> = (0..5).filter(|&i| labels[i] == c).collect();
            let mut dsum = 0.0;
            for &i in &idx {
                for &j in &idx {
                    dsum += sq_euclidean(pts.row(i), pts.row(j));
                }
            }
            expected += dsum / (2.0 * idx.len() as f64);
        }
        assert!((within_dispersion(&pts, &labels) - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_blob_prefers_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = Array2::from_shape_fn((60, 2), |_| rng.random_range(0.0..1.0));
        let r = gap_statistic(&pts, 1, 6, 20, 1).unwrap();
        assert_eq!(r.k_star, 1, "{:?}", r.gap);
    }

    #[test]
    fn three_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let centers = [(0.0, 0.0), (6.0, 0.0), (3.0, 5.0)];
        let pts = Array2::from_shape_fn((60, 2), |(i, j)| {
            let c = centers[i / 20];
            (if j == 0 { c.0 } else { c.1 }) + normal.sample(&mut rng)
        });
        assert_eq!(gap_statistic(&pts, 1, 8, 20, 3).unwrap().k_star, 3);
    }

    #[test]
    fn range_checked() {
        let pts = Array2::zeros((5, 2));
        assert!(gap_statistic(&pts, 1, 5, 10, 0).is_err());
        assert!(gap_statistic(&pts, 1, 3, 5, 0).is_err());
    }
}
