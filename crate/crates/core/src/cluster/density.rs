//! DBSCAN with knee-selected ε, and OPTICS with ξ-steep cluster extraction.
//!
//! `min_samples` counts the point itself, so a point is core when its
//! closed ε-ball holds at least `min_samples` points, and its core distance
//! is the distance to its `(min_samples - 1)`-th nearest other point. The
//! k-distance curve used for the DBSCAN knee is the sorted core distance.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClusterSolution, ClusterSpec, NOISE};
use crate::error::{AstraError, Result};
use crate::linalg::euclidean_distances;

fn check_min_samples(n: usize, min_samples: usize) -> Result<()> {
    if min_samples < 2 || min_samples > n {
        return Err(AstraError::invalid(format!(
            "min_samples={min_samples} requires 2 <= min_samples <= n={n}"
        )));
    }
    Ok(())
}

fn core_distances(d: &Array2<f64>, min_samples: usize) -> Vec<f64> {
    d.outer_iter()
        .map(|row| {
            let mut r: Vec<f64> = row.to_vec();
            r.sort_by(f64::total_cmp);
            // r[0] is the point itself.
            r[min_samples - 1]
        })
        .collect()
}

/// Sorted (ascending) k-distance curve.
pub fn k_distances(points: &Array2<f64>, min_samples: usize) -> Result<Vec<f64>> {
    check_min_samples(points.nrows(), min_samples)?;
    let mut kd = core_distances(&euclidean_distances(points), min_samples);
    kd.sort_by(f64::total_cmp);
    Ok(kd)
}

/// Index of the point farthest from the chord joining the first and last
/// points of `curve`, after scaling both axes to [0, 1]. Ties resolve to
/// the smallest index.
pub fn knee_index(curve: &[f64]) -> usize {
    let n = curve.len();
    if n < 3 {
        return n.saturating_sub(1);
    }
    let (y0, y1) = (curve[0], curve[n - 1]);
    let span = y1 - y0;
    if span.abs() < f64::EPSILON {
        return 0;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &y) in curve.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let yn = (y - y0) / span;
        // distance to the line y = x, up to a constant factor
        let dist = (x - yn).abs();
        if dist > best.1 + 1e-15 {
            best = (i, dist);
        }
    }
    best.0
}

pub fn dbscan_with_eps(points: &Array2<f64>, eps: f64, min_samples: usize) -> Result<Vec<i32>> {
    let n = points.nrows();
    check_min_samples(n, min_samples)?;
    let d = euclidean_distances(points);
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| d[[i, j]] <= eps).collect()).collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();
    let mut labels = vec![NOISE; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start] != NOISE || !is_core[start] {
            continue;
        }
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q] == NOISE {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}

/// DBSCAN with ε taken at the knee of the k-distance curve.
pub fn dbscan(points: &Array2<f64>, min_samples: usize) -> Result<ClusterSolution> {
    let curve = k_distances(points, min_samples)?;
    let eps = curve[knee_index(&curve)];
    let labels = dbscan_with_eps(points, eps, min_samples)?;
    let mut sol = ClusterSolution::from_labels(ClusterSpec::Dbscan { min_samples }, &labels);
    sol.degenerate = eps == 0.0 || sol.k_effective == 0;
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticsOrdering {
    pub ordering: Vec<usize>,
    /// Reachability per point (not per position); `INFINITY` when undefined.
    pub reachability: Vec<f64>,
    pub predecessor: Vec<Option<usize>>,
    pub core_distance: Vec<f64>,
}

pub fn optics_ordering(points: &Array2<f64>, min_samples: usize) -> Result<OpticsOrdering> {
    let n = points.nrows();
    check_min_samples(n, min_samples)?;
    let d = euclidean_distances(points);
    let core = core_distances(&d, min_samples);
    let mut reach = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut processed = vec![false; n];
    let mut ordering = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = usize::MAX;
        for i in 0..n {
            if !processed[i] && (p == usize::MAX || reach[i] < reach[p]) {
                p = i;
            }
        }
        processed[p] = true;
        ordering.push(p);
        if core[p].is_finite() {
            for o in 0..n {
                if processed[o] {
                    continue;
                }
                let r = core[p].max(d[[p, o]]);
                if r < reach[o] {
                    reach[o] = r;
                    pred[o] = Some(p);
                }
            }
        }
    }
    Ok(OpticsOrdering {
        ordering,
        reachability: reach,
        predecessor: pred,
        core_distance: core,
    })
}

#[derive(Clone, Copy)]
struct SteepDown {
    start: usize,
    end: usize,
    mib: f64,
}

fn extend_region(steep: &[bool], xward: &[bool], start: usize, min_samples: usize) -> usize {
    let mut non_xward = 0;
    let mut end = start;
    let mut index = start;
    while index < steep.len() {
        if steep[index] {
            non_xward = 0;
            end = index;
        } else if !xward[index] {
            non_xward += 1;
            if non_xward > min_samples {
                break;
            }
        }
        index += 1;
    }
    end
}

fn update_filter_sdas(sdas: Vec<SteepDown>, mib: f64, xi_c: f64, r: &[f64]) -> Vec<SteepDown> {
    if mib.is_infinite() {
        return Vec::new();
    }
    sdas.into_iter()
        .filter(|sda| mib <= r[sda.start] * xi_c)
        .map(|mut sda| {
            sda.mib = sda.mib.max(mib);
            sda
        })
        .collect()
}

fn correct_predecessor(
    r: &[f64],
    pred: &[Option<usize>],
    ordering: &[usize],
    s: usize,
    mut e: usize,
) -> Option<(usize, usize)> {
    while s < e {
        if r[s] > r[e] {
            return Some((s, e));
        }
        if let Some(p_e) = pred[e] {
            if ordering[s..e].contains(&p_e) {
                return Some((s, e));
            }
        }
        e -= 1;
    }
    None
}

/// ξ-steep cluster extraction over an OPTICS ordering. Returns clusters as
/// inclusive `(start, end)` ranges of ordering positions, innermost first.
pub fn xi_clusters(ord: &OpticsOrdering, xi: f64, min_samples: usize, min_cluster_size: usize) -> Vec<(usize, usize)> {
    let n = ord.ordering.len();
    // Reachability and predecessor in ordering position, with a trailing
    // infinity sentinel.
    let mut r: Vec<f64> = ord.ordering.iter().map(|&p| ord.reachability[p]).collect();
    r.push(f64::INFINITY);
    let pred: Vec<Option<usize>> = ord.ordering.iter().map(|&p| ord.predecessor[p]).collect();
    let xi_c = 1.0 - xi;

    let ratio: Vec<f64> = (0..n).map(|i| r[i] / r[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&q| q <= xi_c).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&q| q >= 1.0 / xi_c).collect();
    let down: Vec<bool> = ratio.iter().map(|&q| q > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&q| q < 1.0).collect();

    let mut sdas: Vec<SteepDown> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0;
    let mut mib = 0.0f64;
    for steep_index in 0..n {
        if !(steep_up[steep_index] || steep_down[steep_index]) || steep_index < index {
            continue;
        }
        mib = r[index..=steep_index].iter().copied().fold(mib, f64::max);
        if steep_down[steep_index] {
            sdas = update_filter_sdas(sdas, mib, xi_c, &r);
            let d_start = steep_index;
            let d_end = extend_region(&steep_down, &up, d_start, min_samples);
            sdas.push(SteepDown {
                start: d_start,
                end: d_end,
                mib: 0.0,
            });
            index = d_end + 1;
            mib = r[index];
        } else {
            sdas = update_filter_sdas(sdas, mib, xi_c, &r);
            let u_start = steep_index;
            let u_end = extend_region(&steep_up, &down, u_start, min_samples);
            index = u_end + 1;
            mib = r[index];
            let mut u_clusters = Vec::new();
            for sda in &sdas {
                let mut c_start = sda.start;
                let mut c_end = u_end;
                if r[c_end + 1] * xi_c < sda.mib {
                    continue;
                }
                let d_max = r[sda.start];
                if d_max * xi_c >= r[c_end + 1] {
                    while r[c_start + 1] > r[c_end + 1] && c_start < sda.end {
                        c_start += 1;
                    }
                } else if r[c_end + 1] * xi_c >= d_max {
                    while c_end > u_start && r[c_end - 1] > d_max {
                        c_end -= 1;
                    }
                }
                let Some((s, e)) = correct_predecessor(&r, &pred, &ord.ordering, c_start, c_end) else {
                    continue;
                };
                if e - s + 1 < min_cluster_size || s > sda.end || e < u_start {
                    continue;
                }
                u_clusters.push((s, e));
            }
            u_clusters.reverse();
            clusters.extend(u_clusters);
        }
    }
    clusters
}

/// Flat labels from ξ clusters: each cluster claims its range unless some
/// point in it is already labelled.
fn xi_labels(ordering: &[usize], clusters: &[(usize, usize)]) -> Vec<i32> {
    let n = ordering.len();
    let mut by_pos = vec![NOISE; n];
    let mut label = 0;
    for &(s, e) in clusters {
        if by_pos[s..=e].iter().all(|&l| l == NOISE) {
            by_pos[s..=e].iter_mut().for_each(|l| *l = label);
            label += 1;
        }
    }
    let mut labels = vec![NOISE; n];
    for (pos, &p) in ordering.iter().enumerate() {
        labels[p] = by_pos[pos];
    }
    labels
}

pub fn optics(points: &Array2<f64>, min_samples: usize, xi: f64) -> Result<ClusterSolution> {
    if !(0.0 < xi && xi < 1.0) {
        return Err(AstraError::invalid(format!("xi={xi} must lie in (0, 1)")));
    }
    let ord = optics_ordering(points, min_samples)?;
    let clusters = xi_clusters(&ord, xi, min_samples, min_samples);
    let labels = xi_labels(&ord.ordering, &clusters);
    let mut sol = ClusterSolution::from_labels(ClusterSpec::Optics { min_samples, xi }, &labels);
    sol.degenerate = sol.k_effective == 0;
    Ok(sol)
}
