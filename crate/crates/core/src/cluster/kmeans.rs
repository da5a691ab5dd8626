//! Spherical k-means: rows are L2-normalized, seeded with k-means++, then
//! refined with Lloyd iterations whose centroids are re-projected onto the
//! unit sphere.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClusterSolution, ClusterSpec};
use crate::error::{AstraError, Result};
use crate::linalg::{l2_normalize_rows, norm, sq_euclidean};

const MAX_ITER: usize = 300;
const MOVE_TOL: f64 = 1e-6;

pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<ClusterSolution> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(AstraError::invalid(format!("k-means k={k} requires 1 <= k <= n={n}")));
    }
    let mut x = points.clone();
    l2_normalize_rows(&mut x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = plus_plus_init(&x, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut degenerate = false;
    for _ in 0..MAX_ITER {
        assign(&x, &centroids, &mut labels);
        let mut next = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut row = next.row_mut(l);
            row += &x.row(i);
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed from the point farthest from its own centroid.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .map(|i| (i, sq_euclidean(x.row(i), centroids.row(labels[i]))))
                    .fold(
                        (usize::MAX, f64::NEG_INFINITY),
                        |best, cur| {
                            if cur.1 > best.1 {
                                cur
                            } else {
                                best
                            }
                        },
                    )
                    .0;
                if far == usize::MAX {
                    degenerate = true;
                    continue;
                }
                taken[far] = true;
                next.row_mut(c).assign(&x.row(far));
                counts[c] = 1;
                degenerate |= sq_euclidean(x.row(far), centroids.row(labels[far])) == 0.0;
            } else {
                let inv = 1.0 / counts[c] as f64;
                next.row_mut(c).mapv_inplace(|v| v * inv);
            }
            let nn = norm(next.row(c));
            if nn > 0.0 {
                next.row_mut(c).mapv_inplace(|v| v / nn);
            }
        }
        let moved = (0..k)
            .map(|c| sq_euclidean(next.row(c), centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if moved < MOVE_TOL {
            break;
        }
    }
    assign(&x, &centroids, &mut labels);
    let raw: Vec<i32> = labels.iter().map(|&l| l as i32).collect();
    let mut sol = ClusterSolution::from_labels(ClusterSpec::KMeans { k, seed }, &raw);
    if sol.k_effective < k {
        degenerate = true;
    }
    sol.degenerate = degenerate;
    if degenerate {
        log::warn!(
            "k-means with k={k} is degenerate ({} non-empty clusters)",
            sol.k_effective
        );
    }
    Ok(sol)
}

fn nearest(row: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.outer_iter().enumerate() {
        let d = sq_euclidean(row, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(x: &Array2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) {
    for (i, row) in x.outer_iter().enumerate() {
        labels[i] = nearest(row, centroids).0;
    }
}

fn plus_plus_init(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_euclidean(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_euclidean(x.row(i), x.row(pick)));
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Exhaustive minimization of the spherical objective
    /// sum_i (1 - cos(x_i, centroid(label_i))).
    fn brute_force(points: &Array2<f64>, k: usize) -> Vec<i32> {
        let mut x = points.clone();
        l2_normalize_rows(&mut x);
        let n = x.nrows();
        let mut best = (f64::INFINITY, vec![]);
        let total = k.pow(n as u32);
        for code in 0..total {
            let labels: Vec<usize> = (0..n).map(|i| (code / k.pow(i as u32)) % k).collect();
            let mut obj = 0.0;
            let mut ok = true;
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    ok = false;
                    break;
                }
                let mut s = vec![0.0; x.ncols()];
                for &i in &members {
                    for (a, b) in s.iter_mut().zip(x.row(i)) {
                        *a += b;
                    }
                }
                let sn = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                for &i in &members {
                    let cos: f64 = x.row(i).iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / sn;
                    obj += 1.0 - cos;
                }
            }
            if ok && obj < best.0 - 1e-12 {
                best = (obj, labels.iter().map(|&l| l as i32).collect());
            }
        }
        ClusterSolution::from_labels(ClusterSpec::KMeans { k, seed: 0 }, &best.1).labels
    }

    #[test]
    fn antipodal_points_split() {
        let pts = array![[1.0, 0.0], [-1.0, 0.0]];
        let sol = kmeans(&pts, 2, 3).unwrap();
        assert_eq!(sol.labels, vec![0, 1]);
    }

    #[test]
    fn angular_pairs_match_brute_force() {
        let pts = array![[1.0, 0.05], [2.0, 0.0], [0.0, 1.0], [0.1, 3.0]];
        let expected = brute_force(&pts, 2);
        assert_eq!(expected, vec![0, 0, 1, 1]);
        for seed in 0..10 {
            assert_eq!(kmeans(&pts, 2, seed).unwrap().labels, expected);
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let pts = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        assert_eq!(kmeans(&pts, 4, 9).unwrap(), kmeans(&pts, 4, 9).unwrap());
    }

    #[test]
    fn identical_points_flagged() {
        let pts = Array2::from_elem((5, 2), 1.0);
        let sol = kmeans(&pts, 3, 1).unwrap();
        assert!(sol.degenerate);
        assert!(kmeans(&pts, 6, 1).is_err());
    }
}
