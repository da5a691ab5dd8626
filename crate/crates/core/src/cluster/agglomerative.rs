//! Agglomerative clustering with the Lance–Williams update.
//!
//! Cluster slots are identified by their smallest member index; merging
//! slots `i < j` keeps `i`. Among equal distances the lexicographically
//! smallest `(i, j)` pair merges first.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClusterSolution, ClusterSpec};
use crate::error::{AstraError, Result};
use crate::linalg::euclidean_distances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Ward,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub kept: usize,
    pub absorbed: usize,
    pub distance: f64,
    pub size: usize,
}

/// The full merge sequence over `n` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub linkage: Linkage,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn build(points: &Array2<f64>, linkage: Linkage) -> Self {
        Self::from_distances(euclidean_distances(points), linkage)
    }

    pub fn from_distances(mut d: Array2<f64>, linkage: Linkage) -> Self {
        let n = d.nrows();
        let mut active = vec![true; n];
        let mut size = vec![1usize; n];
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        for _ in 1..n {
            let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
            for i in 0..n {
                if !active[i] {
                    continue;
                }
                for j in (i + 1)..n {
                    if active[j] && d[[i, j]] < best.2 {
                        best = (i, j, d[[i, j]]);
                    }
                }
            }
            if best.0 == usize::MAX {
                // Only reachable with NaN distances: merge the first two
                // active slots.
                let mut it = (0..n).filter(|&s| active[s]);
                best = (it.next().unwrap_or(0), it.next().unwrap_or(0), f64::NAN);
            }
            let (i, j, dij) = best;
            let (ni, nj) = (size[i] as f64, size[j] as f64);
            for k in 0..n {
                if !active[k] || k == i || k == j {
                    continue;
                }
                let (dki, dkj) = (d[[k, i]], d[[k, j]]);
                let updated = match linkage {
                    Linkage::Average => (ni * dki + nj * dkj) / (ni + nj),
                    Linkage::Ward => {
                        let nk = size[k] as f64;
                        let v = ((ni + nk) * dki * dki + (nj + nk) * dkj * dkj - nk * dij * dij) / (ni + nj + nk);
                        v.max(0.0).sqrt()
                    }
                };
                d[[k, i]] = updated;
                d[[i, k]] = updated;
            }
            active[j] = false;
            size[i] += size[j];
            merges.push(Merge {
                kept: i,
                absorbed: j,
                distance: dij,
                size: size[i],
            });
        }
        Dendrogram { n, linkage, merges }
    }

    /// Flat labels with `k` clusters, numbered by smallest member index.
    pub fn cut(&self, k: usize) -> Result<Vec<i32>> {
        if k == 0 || k > self.n {
            return Err(AstraError::invalid(format!(
                "cluster count {k} outside [1, {}]",
                self.n
            )));
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for m in &self.merges[..self.n - k] {
            let a = find(&mut parent, m.kept);
            let b = find(&mut parent, m.absorbed);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            parent[hi] = lo;
        }
        let mut label_of_root = vec![-1i32; self.n];
        let mut next = 0;
        let mut labels = Vec::with_capacity(self.n);
        for x in 0..self.n {
            let r = find(&mut parent, x);
            if label_of_root[r] < 0 {
                label_of_root[r] = next;
                next += 1;
            }
            labels.push(label_of_root[r]);
        }
        Ok(labels)
    }
}

pub fn agglomerative(points: &Array2<f64>, linkage: Linkage, k: usize) -> Result<ClusterSolution> {
    let n = points.nrows();
    if k < 2 || k > n {
        return Err(AstraError::invalid(format!(
            "agglomerative k={k} requires 2 <= k <= n={n}"
        )));
    }
    let dendro = Dendrogram::build(points, linkage);
    let labels = dendro.cut(k)?;
    Ok(ClusterSolution::from_labels(
        ClusterSpec::Agglomerative { linkage, k },
        &labels,
    ))
}
