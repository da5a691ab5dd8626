//! UMAP: smooth-kNN calibration, fuzzy union of the directed membership
//! graph, spectral initialization, and negative-sampling SGD on the fuzzy
//! cross-entropy.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::knn::{build_knn_graph, KnnGraph};
use super::{ManifoldConfig, Projection};
use crate::error::{AstraError, Result};
use crate::linalg::symmetric_eigen_desc;

const SMOOTH_K_TOLERANCE: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;
const BANDWIDTH_ITERS: usize = 64;
/// Above this size the dense spectral solve is skipped for random init.
const SPECTRAL_MAX_N: usize = 3000;
/// Weight of the complete graph mixed into the Laplacian so that
/// disconnected components still get a well-defined layout.
const SPECTRAL_COUPLING: f64 = 1e-6;

/// Per-point `(rho, sigma)`: distance to the nearest non-identical
/// neighbor, and the bandwidth making the neighbor memberships sum to
/// `log2(k)`, where `k` counts the point itself.
pub fn smooth_knn_dist(distances: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>) {
    let target = (k as f64).log2();
    let all: Vec<f64> = distances.iter().flatten().copied().collect();
    let mean_all = all.iter().sum::<f64>() / all.len().max(1) as f64;
    let mut rhos = Vec::with_capacity(distances.len());
    let mut sigmas = Vec::with_capacity(distances.len());
    for ds in distances {
        let rho = ds.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
        let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
        for _ in 0..BANDWIDTH_ITERS {
            let psum: f64 = ds
                .iter()
                .map(|&d| {
                    let t = d - rho;
                    if t > 0.0 {
                        (-t / mid).exp()
                    } else {
                        1.0
                    }
                })
                .sum();
            if (psum - target).abs() < SMOOTH_K_TOLERANCE {
                break;
            }
            if psum > target {
                hi = mid;
                mid = (lo + hi) / 2.0;
            } else {
                lo = mid;
                mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
            }
        }
        let floor = if rho > 0.0 {
            MIN_K_DIST_SCALE * ds.iter().sum::<f64>() / ds.len().max(1) as f64
        } else {
            MIN_K_DIST_SCALE * mean_all
        };
        rhos.push(rho);
        sigmas.push(mid.max(floor));
    }
    (rhos, sigmas)
}

/// Symmetric weighted graph, stored as directed edges `(i, j, w)` sorted
/// by `(i, j)`, with both directions present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl FuzzyGraph {
    pub fn dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for &(i, j, w) in &self.edges {
            m[[i, j]] = w;
        }
        m
    }
}

/// Membership strengths from the kNN graph combined with the
/// probabilistic t-conorm `a + b - a*b`.
pub fn fuzzy_simplicial_set(knn: &KnnGraph, n_neighbors: usize) -> FuzzyGraph {
    let n = knn.indices.len();
    let (rhos, sigmas) = smooth_knn_dist(&knn.distances, n_neighbors);
    let mut directed = std::collections::BTreeMap::new();
    for i in 0..n {
        for (&j, &d) in knn.indices[i].iter().zip(&knn.distances[i]) {
            let w = if d - rhos[i] <= 0.0 || sigmas[i] == 0.0 {
                1.0
            } else {
                (-(d - rhos[i]) / sigmas[i]).exp()
            };
            directed.insert((i, j), w);
        }
    }
    let mut sym = std::collections::BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let wt = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let v = w + wt - w * wt;
        sym.insert((i, j), v);
        sym.insert((j, i), v);
    }
    FuzzyGraph {
        n,
        edges: sym.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
    }
}

/// Least-squares fit of `1 / (1 + a d^(2b))` to the target membership
/// curve (1 below `min_dist`, exponential decay with scale `spread`
/// beyond), sampled at 300 points on `[0, 3 * spread]`. Solved with
/// Levenberg–Marquardt from `(1, 1)`.
pub fn fit_ab(spread: f64, min_dist: f64) -> (f64, f64) {
    let m = 300;
    let xs: Vec<f64> = (0..m).map(|i| 3.0 * spread * i as f64 / (m - 1) as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (y - f).powi(2)
            })
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cur = sse(a, b);
    for _ in 0..500 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let u = x.powf(2.0 * b);
            let denom = 1.0 + a * u;
            let f = 1.0 / denom;
            let da = -u / (denom * denom);
            let db = -a * u * 2.0 * x.ln() / (denom * denom);
            let r = y - f;
            let g = [da, db];
            for p in 0..2 {
                jtr[p] += g[p] * r;
                for q in 0..2 {
                    jtj[p][q] += g[p] * g[q];
                }
            }
        }
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let da = (m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = (m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (na, nb) = (a + da, b + db);
        let next = if na > 0.0 && nb > 0.0 {
            sse(na, nb)
        } else {
            f64::INFINITY
        };
        if next < cur {
            let done = (cur - next) <= 1e-15 * cur.max(1e-300) && da.abs() < 1e-12 && db.abs() < 1e-12;
            a = na;
            b = nb;
            cur = next;
            lambda = (lambda / 10.0).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

/// Trailing eigenvectors of the symmetric normalized Laplacian (after a
/// tiny all-pairs coupling), scaled to `[0, 10]` per dimension. Returns
/// `None` when the dense solve is not applicable.
pub fn spectral_layout(graph: &FuzzyGraph, dims: usize) -> Option<Array2<f64>> {
    let n = graph.n;
    if n > SPECTRAL_MAX_N || dims + 1 >= n {
        return None;
    }
    let mut w = graph.dense();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[[i, j]] += SPECTRAL_COUPLING;
            }
        }
    }
    let deg: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    if deg.iter().any(|&d| !(d > 0.0)) {
        return None;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    // Largest eigenvectors of D^-1/2 W D^-1/2 are the smallest of the
    // normalized Laplacian.
    let m = Array2::from_shape_fn((n, n), |(i, j)| w[[i, j]] * inv_sqrt[i] * inv_sqrt[j]);
    let (_, vecs) = symmetric_eigen_desc(&m);
    let mut out = Array2::zeros((n, dims));
    for d in 0..dims {
        let col = vecs.column(d + 1);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for i in 0..n {
            out[[i, d]] = if span > 0.0 { 10.0 * (col[i] - lo) / span } else { 0.0 };
        }
    }
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Distinct rows in first-appearance order, plus the distinct index of
/// every input row.
fn distinct_rows(features: &Array2<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut seen = std::collections::HashMap::new();
    let mut keep = Vec::new();
    let slot = features
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let key: Vec<u64> = r.iter().map(|v| v.to_bits()).collect();
            *seen.entry(key).or_insert_with(|| {
                keep.push(i);
                keep.len() - 1
            })
        })
        .collect();
    (keep, slot)
}

fn clip(v: f64) -> f64 {
    v.clamp(-4.0, 4.0)
}

/// Projects the rows of `features`. Identical rows are embedded once and
/// share their coordinates.
pub fn umap_project(features: &Array2<f64>, config: &ManifoldConfig) -> Result<Projection> {
    config.validate(features.nrows())?;
    if features.iter().any(|v| !v.is_finite()) {
        return Err(AstraError::invalid("non-finite input to UMAP"));
    }
    let (keep, slot) = distinct_rows(features);
    if keep.len() == features.nrows() {
        return optimize(features, config);
    }
    if keep.len() <= config.n_neighbors {
        return Err(AstraError::invalid(format!(
            "only {} distinct rows for n_neighbors={}",
            keep.len(),
            config.n_neighbors
        )));
    }
    let distinct = features.select(ndarray::Axis(0), &keep);
    let mut p = optimize(&distinct, config)?;
    p.coords = p.coords.select(ndarray::Axis(0), &slot);
    Ok(p)
}

fn optimize(features: &Array2<f64>, config: &ManifoldConfig) -> Result<Projection> {
    let n = features.nrows();
    let knn = build_knn_graph(features, config.n_neighbors - 1, config.metric)?;
    let graph = fuzzy_simplicial_set(&knn, config.n_neighbors);
    let (a, b) = fit_ab(config.spread, config.min_dist);
    let dims = config.out_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let noise = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut emb = match spectral_layout(&graph, dims) {
        Some(mut init) => {
            init.mapv_inplace(|v| v + noise.sample(&mut rng));
            init
        }
        None => {
            log::warn!("spectral initialization unavailable; using seeded random layout");
            Array2::from_shape_fn((n, dims), |_| rng.random_range(-10.0..10.0))
        }
    };

    // Drop edges too weak to be sampled even once.
    let max_w = graph.edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let n_epochs = config.n_epochs;
    let edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .copied()
        .filter(|e| e.2 >= max_w / n_epochs as f64)
        .collect();
    let epochs_per_sample: Vec<f64> = edges.iter().map(|e| max_w / e.2).collect();
    let neg_rate = config.negative_sample_rate as f64;
    let epochs_per_negative: Vec<f64> = epochs_per_sample.iter().map(|e| e / neg_rate).collect();
    let mut next_sample = epochs_per_sample.clone();
    let mut next_negative = epochs_per_negative.clone();
    let gamma = config.repulsion_strength;
    let mut loss_trace = Vec::with_capacity(n_epochs);
    let mut cur = vec![0.0; dims];

    for epoch in 0..n_epochs {
        let alpha = config.learning_rate * (1.0 - epoch as f64 / n_epochs as f64);
        let ep = epoch as f64;
        let (mut loss, mut terms) = (0.0f64, 0usize);
        for (e, &(head, tail, _)) in edges.iter().enumerate() {
            if next_sample[e] > ep {
                continue;
            }
            let d2: f64 = (0..dims).map(|d| (emb[[head, d]] - emb[[tail, d]]).powi(2)).sum();
            let q = 1.0 / (1.0 + a * d2.powf(b));
            loss -= q.clamp(1e-12, 1.0).ln();
            terms += 1;
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for d in 0..dims {
                let g = clip(coeff * (emb[[head, d]] - emb[[tail, d]]));
                emb[[head, d]] += g * alpha;
                emb[[tail, d]] -= g * alpha;
            }
            next_sample[e] += epochs_per_sample[e];

            let n_neg = ((ep - next_negative[e]) / epochs_per_negative[e]).max(0.0) as usize;
            for d in 0..dims {
                cur[d] = emb[[head, d]];
            }
            for _ in 0..n_neg {
                let other = rng.random_range(0..n);
                if other == head {
                    continue;
                }
                let d2: f64 = (0..dims).map(|d| (cur[d] - emb[[other, d]]).powi(2)).sum();
                let coeff = if d2 > 0.0 {
                    2.0 * gamma * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                } else {
                    0.0
                };
                let q = 1.0 / (1.0 + a * d2.powf(b));
                loss -= (1.0 - q).clamp(1e-12, 1.0).ln();
                terms += 1;
                if coeff > 0.0 {
                    for d in 0..dims {
                        cur[d] += clip(coeff * (cur[d] - emb[[other, d]])) * alpha;
                    }
                }
            }
            for d in 0..dims {
                emb[[head, d]] = cur[d];
            }
            next_negative[e] += n_neg as f64 * epochs_per_negative[e];
        }
        loss_trace.push(if terms > 0 { loss / terms as f64 } else { 0.0 });
    }
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(AstraError::Degenerate("UMAP produced non-finite coordinates".into()));
    }
    Ok(Projection {
        coords: emb,
        config: config.clone(),
        loss_trace,
        a,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{trustworthiness, Metric};
    use rand_distr::StandardNormal;

    /// Grid search over (a, b) minimizing the same squared error.
    fn grid_fit(spread: f64, min_dist: f64) -> (f64, f64) {
        let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
        let sse = |a: f64, b: f64| -> f64 {
            xs.iter()
                .map(|&x| {
                    let y = if x < min_dist {
                        1.0
                    } else {
                        (-(x - min_dist) / spread).exp()
                    };
                    (y - 1.0 / (1.0 + a * x.powf(2.0 * b))).powi(2)
                })
                .sum()
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for ia in 0..=400 {
            for ib in 0..=200 {
                let a = 0.5 + ia as f64 * 0.005;
                let b = 0.5 + ib as f64 * 0.005;
                let s = sse(a, b);
                if s < best.0 {
                    best = (s, a, b);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn curve_fit_matches_grid_oracle() {
        for (spread, min_dist) in [(1.0, 0.0), (1.0, 0.1)] {
            let (a, b) = fit_ab(spread, min_dist);
            let (ga, gb) = grid_fit(spread, min_dist);
            assert!((a - ga).abs() < 0.01 && (b - gb).abs() < 0.01, "{a},{b} vs {ga},{gb}");
        }
        let (a, b) = fit_ab(1.0, 0.0);
        assert!((a - 1.929).abs() < 5e-3 && (b - 0.7915).abs() < 5e-3, "{a} {b}");
    }

    #[test]
    fn bandwidth_hits_target() {
        let d = vec![vec![0.5, 0.7, 1.0, 1.3, 2.0]];
        let (rho, sigma) = smooth_knn_dist(&d, 6);
        assert_eq!(rho[0], 0.5);
        let psum: f64 = d[0].iter().map(|&x| (-(x - rho[0]).max(0.0) / sigma[0]).exp()).sum();
        assert!((psum - 6f64.log2()).abs() < 1e-4);
    }

    #[test]
    fn fuzzy_union_symmetric_and_bounded() {
        let x = Array2::from_shape_fn((15, 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 + i as f64 * 0.1);
        let knn = build_knn_graph(&x, 4, Metric::Euclidean).unwrap();
        let g = fuzzy_simplicial_set(&knn, 5);
        let m = g.dense();
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(m[[i, j]], m[[j, i]]);
                assert!((0.0..=1.0).contains(&m[[i, j]]));
            }
        }
    }

    #[test]
    fn fuzzy_graph_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((20, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let perm: Vec<usize> = (0..20).rev().collect();
        let y = Array2::from_shape_fn((20, 4), |(i, j)| x[[perm[i], j]]);
        let gx = fuzzy_simplicial_set(&build_knn_graph(&x, 5, Metric::Euclidean).unwrap(), 6).dense();
        let gy = fuzzy_simplicial_set(&build_knn_graph(&y, 5, Metric::Euclidean).unwrap(), 6).dense();
        for i in 0..20 {
            for j in 0..20 {
                assert!((gy[[i, j]] - gx[[perm[i], perm[j]]]).abs() < 1e-12);
            }
        }
    }

    fn three_blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((60, 5), |(i, j)| {
            let c = i / 20;
            (if j == c { 8.0 } else { 0.0 }) + rng.sample::<f64, _>(StandardNormal) * 0.5
        });
        (x, (0..60).map(|i| i / 20).collect())
    }

    #[test]
    fn blobs_stay_pure_and_runs_repeat() {
        let (x, labels) = three_blobs(1);
        let cfg = ManifoldConfig {
            metric: Metric::Euclidean,
            out_dims: 2,
            n_epochs: 200,
            ..Default::default()
        };
        let p = umap_project(&x, &cfg).unwrap();
        let knn = build_knn_graph(&p.coords, 10, Metric::Euclidean).unwrap();
        let same: usize = knn
            .indices
            .iter()
            .enumerate()
            .map(|(i, nb)| nb.iter().filter(|&&j| labels[j] == labels[i]).count())
            .sum();
        assert!(same as f64 / 600.0 >= 0.95);
        assert!(p.loss_trace.iter().all(|v| v.is_finite()));
        assert!(trustworthiness(&x, &p.coords, 10, Metric::Euclidean).unwrap() > 0.9);
        assert_eq!(p, umap_project(&x, &cfg).unwrap());
    }

    #[test]
    fn small_disconnected_groups_stay_whole_and_bounded() {
        // Four 12-point groups with no kNN edges between them. Sampling a
        // point as its own negative must not push it anywhere.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((48, 8), |(i, j)| {
            (if j == i / 12 { 10.0 } else { 0.0 }) + rng.sample::<f64, _>(StandardNormal) * 0.5
        });
        let p = umap_project(&x, &ManifoldConfig::default()).unwrap();
        assert!(p.coords.iter().all(|v| v.abs() < 50.0), "layout drifted");
        let knn = build_knn_graph(&p.coords, 11, Metric::Euclidean).unwrap();
        for (i, nb) in knn.indices.iter().enumerate() {
            assert!(nb.iter().all(|&j| j / 12 == i / 12), "point {i} split from its group");
        }
    }

    #[test]
    fn duplicated_rows_collapse() {
        let (x, _) = three_blobs(4);
        let mut rows: Vec<f64> = x.iter().copied().collect();
        rows.extend(x.iter().copied());
        let doubled = Array2::from_shape_vec((120, 5), rows).unwrap();
        let p = umap_project(&doubled, &ManifoldConfig::default()).unwrap();
        for i in 0..60 {
            let d: f64 = (0..4).map(|d| (p.coords[[i, d]] - p.coords[[i + 60, d]]).powi(2)).sum();
            assert!(d.sqrt() < 1e-3, "row {i}: {}", d.sqrt());
        }
    }

    #[test]
    fn permuted_input_keeps_neighborhoods() {
        let (x, _) = three_blobs(6);
        let perm: Vec<usize> = (0..60).map(|i| (i * 17) % 60).collect();
        let y = x.select(ndarray::Axis(0), &perm);
        let cfg = ManifoldConfig {
            metric: Metric::Euclidean,
            ..Default::default()
        };
        let px = umap_project(&x, &cfg).unwrap().coords;
        let py = umap_project(&y, &cfg).unwrap().coords;
        let kx = build_knn_graph(&px, 10, Metric::Euclidean).unwrap();
        let ky = build_knn_graph(&py, 10, Metric::Euclidean).unwrap();
        let mut total = 0.0;
        for (i, &src) in perm.iter().enumerate() {
            let a: std::collections::BTreeSet<usize> = kx.indices[src].iter().copied().collect();
            let b: std::collections::BTreeSet<usize> = ky.indices[i].iter().map(|&j| perm[j]).collect();
            total += a.intersection(&b).count() as f64 / a.union(&b).count() as f64;
        }
        assert!(total / 60.0 > 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        let x = Array2::from_elem((5, 2), 1.0);
        assert!(umap_project(&x, &ManifoldConfig::default()).is_err());
        let mut y = Array2::from_shape_fn((20, 2), |(i, j)| (i + j) as f64);
        y[[3, 1]] = f64::NAN;
        assert!(umap_project(&y, &ManifoldConfig::default()).is_err());
    }
}
