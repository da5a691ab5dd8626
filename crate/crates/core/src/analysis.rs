//! Similarity links, neighbor-cluster entropy, K_nn sensitivity of the
//! boundary set, leave-one-axis-out ablation and shuffle controls.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cluster::{calinski_harabasz, run_sweep, silhouette, Algorithm, ClusterSpec, SweepConfig};
use crate::codebook::{quantize, Codebook, FeatureFamilies};
use crate::corpus::AxisId;
use crate::embed::{pool_axis_embedding, TokenEmbeddingTable};
use crate::error::{AstraError, Result};
use crate::linalg::{cosine, l2_normalize_rows};
use crate::manifold::{umap_project, ManifoldConfig};

pub const BOUNDARY_THRESHOLD: f64 = 0.999;
pub const DEFAULT_K_SET: [usize; 6] = [3, 5, 7, 10, 15, 20];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

/// Top-`k` cosine neighbors of each row, self excluded, similarity
/// descending with the lower index first on ties.
pub fn similarity_topk(features: &Array2<f64>, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    let n = features.nrows();
    if k >= n {
        return Err(AstraError::invalid(format!("{k} neighbors requested from {n} rows")));
    }
    Ok((0..n)
        .map(|i| {
            let mut all: Vec<Neighbor> = (0..n)
                .filter(|&j| j != i)
                .map(|j| Neighbor {
                    index: j,
                    similarity: cosine(features.row(i), features.row(j)),
                })
                .collect();
            all.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.index.cmp(&b.index)));
            all.truncate(k);
            all
        })
        .collect())
}

/// Normalized Shannon entropy of a histogram over its nonzero bins;
/// zero when fewer than two bins are occupied.
pub fn normalized_entropy(counts: &[usize]) -> f64 {
    let occupied: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    if occupied.len() < 2 {
        return 0.0;
    }
    let total: f64 = occupied.iter().sum();
    let h: f64 = occupied
        .iter()
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum();
    (h / (occupied.len() as f64).ln()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEntry {
    pub index: usize,
    pub entropy: f64,
    /// Neighbor share per cluster label (noise counts as its own label).
    pub distribution: Vec<(i32, f64)>,
    pub distinct_clusters: usize,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub k_nn: usize,
    pub threshold: f64,
    pub entries: Vec<BoundaryEntry>,
}

impl BoundaryReport {
    pub fn boundary_set(&self) -> Vec<usize> {
        self.entries.iter().filter(|e| e.boundary).map(|e| e.index).collect()
    }
}

pub fn neighbor_entropy(features: &Array2<f64>, labels: &[i32], k_nn: usize) -> Result<BoundaryReport> {
    if labels.len() != features.nrows() {
        return Err(AstraError::DimensionMismatch {
            expected: features.nrows(),
            found: labels.len(),
            context: "cluster labels".into(),
        });
    }
    let neighbors = similarity_topk(features, k_nn)?;
    let entries = neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut hist: BTreeMap<i32, usize> = BTreeMap::new();
            for n in nb {
                *hist.entry(labels[n.index]).or_default() += 1;
            }
            let counts: Vec<usize> = hist.values().copied().collect();
            let entropy = normalized_entropy(&counts);
            BoundaryEntry {
                index: i,
                entropy,
                distribution: hist.iter().map(|(&l, &c)| (l, c as f64 / k_nn as f64)).collect(),
                distinct_clusters: hist.len(),
                boundary: entropy >= BOUNDARY_THRESHOLD,
            }
        })
        .collect();
    Ok(BoundaryReport {
        k_nn,
        threshold: BOUNDARY_THRESHOLD,
        entries,
    })
}

/// |A ∩ B| / |A ∪ B|, with two empty sets counting as identical.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnSensitivity {
    pub ks: Vec<usize>,
    pub boundary_sets: Vec<Vec<usize>>,
    pub jaccard: Vec<Vec<f64>>,
    /// Institutions flagged for at least half of the K values.
    pub stable: Vec<usize>,
}

/// Boundary sets across neighbor counts. K values not below `n` are
/// skipped with a warning.
pub fn knn_sensitivity(features: &Array2<f64>, labels: &[i32], k_set: &[usize]) -> Result<KnnSensitivity> {
    let n = features.nrows();
    let ks: Vec<usize> = k_set.iter().copied().filter(|&k| k >= 1 && k < n).collect();
    if ks.len() < k_set.len() {
        log::warn!("skipping neighbor counts not in 1..{n}");
    }
    let sets: Vec<BTreeSet<usize>> = ks
        .iter()
        .map(|&k| {
            Ok(neighbor_entropy(features, labels, k)?
                .boundary_set()
                .into_iter()
                .collect())
        })
        .collect::<Result<_>>()?;
    let jac = sets
        .iter()
        .map(|a| sets.iter().map(|b| jaccard(a, b)).collect())
        .collect();
    let mut hits = vec![0usize; n];
    for s in &sets {
        for &i in s {
            hits[i] += 1;
        }
    }
    let stable = (0..n).filter(|&i| hits[i] > 0 && 2 * hits[i] >= ks.len()).collect();
    Ok(KnnSensitivity {
        ks,
        boundary_sets: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        jaccard: jac,
        stable,
    })
}

/// Everything the ablations need to rebuild features and recluster.
#[derive(Debug, Clone)]
pub struct AblationSetup<'a> {
    /// `[institution][axis][token]` over all eight axes.
    pub token_lists: &'a [Vec<Vec<String>>],
    pub codebook: &'a Codebook,
    pub families: FeatureFamilies,
    pub manifold: ManifoldConfig,
    pub cluster: ClusterSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScores {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
}

impl<'a> AblationSetup<'a> {
    fn features(&self, lists: &[Vec<Vec<String>>], axes: &[AxisId]) -> Result<Array2<f64>> {
        let picked: Vec<Vec<Vec<String>>> = lists
            .iter()
            .map(|inst| axes.iter().map(|a| inst[a.index()].clone()).collect())
            .collect();
        Ok(quantize(&picked, axes, self.codebook, self.families)?.data)
    }

    /// Project, cluster, and score the labels in the feature space itself.
    pub fn score(&self, features: &Array2<f64>, umap_seed: u64) -> Result<FeatureScores> {
        let cfg = ManifoldConfig {
            rng_seed: umap_seed,
            ..self.manifold.clone()
        };
        let proj = umap_project(features, &cfg)?;
        let sol = self.cluster.run(&proj.coords)?;
        match (
            silhouette(features, &sol.labels),
            calinski_harabasz(features, &sol.labels),
        ) {
            (Ok(s), Ok((ch, _))) => Ok(FeatureScores {
                silhouette: s,
                calinski_harabasz: ch,
            }),
            // A partition that collapsed to one cluster has no separation.
            (Err(AstraError::Degenerate(msg)), _) | (_, Err(AstraError::Degenerate(msg))) => {
                log::warn!("scoring as zero: {msg}");
                Ok(FeatureScores {
                    silhouette: 0.0,
                    calinski_harabasz: 0.0,
                })
            }
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisAblation {
    pub axis: AxisId,
    pub scores: FeatureScores,
    /// Baseline minus ablated: positive means removing the axis hurts.
    pub delta_silhouette: f64,
    pub delta_calinski_harabasz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneAxisOut {
    pub baseline: FeatureScores,
    pub axes: Vec<AxisAblation>,
}

pub fn leave_one_axis_out(setup: &AblationSetup) -> Result<LeaveOneAxisOut> {
    let base_feat = setup.features(setup.token_lists, &AxisId::ALL)?;
    let baseline = setup.score(&base_feat, setup.manifold.rng_seed)?;
    let axes = AxisId::ALL
        .par_iter()
        .map(|&removed| {
            let kept: Vec<AxisId> = AxisId::ALL.iter().copied().filter(|&a| a != removed).collect();
            let feat = setup.features(setup.token_lists, &kept)?;
            let scores = setup.score(&feat, setup.manifold.rng_seed)?;
            Ok(AxisAblation {
                axis: removed,
                scores,
                delta_silhouette: baseline.silhouette - scores.silhouette,
                delta_calinski_harabasz: baseline.calinski_harabasz - scores.calinski_harabasz,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LeaveOneAxisOut { baseline, axes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Permute the eight axis texts within each institution.
    Axis,
    /// Per axis, reassign texts across institutions.
    InterInstitution,
    /// Per axis, pool every institution's tokens and deal them back out
    /// with the original list lengths.
    Token,
}

impl ShuffleMode {
    pub const ALL: [ShuffleMode; 3] = [ShuffleMode::Axis, ShuffleMode::InterInstitution, ShuffleMode::Token];

    pub fn key(self) -> &'static str {
        match self {
            ShuffleMode::Axis => "axis",
            ShuffleMode::InterInstitution => "inter_institution",
            ShuffleMode::Token => "token",
        }
    }
}

impl std::fmt::Display for ShuffleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for ShuffleMode {
    type Err = AstraError;
    fn from_str(s: &str) -> Result<Self> {
        ShuffleMode::ALL
            .into_iter()
            .find(|m| m.key() == s.replace('-', "_"))
            .ok_or_else(|| AstraError::invalid(format!("unknown shuffle mode '{s}' (axis, inter_institution, token)")))
    }
}

pub fn shuffle_token_lists(
    lists: &[Vec<Vec<String>>],
    mode: ShuffleMode,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Vec<String>>> {
    let mut out = lists.to_vec();
    let n_axes = lists.first().map_or(0, Vec::len);
    match mode {
        ShuffleMode::Axis => {
            for inst in &mut out {
                inst.shuffle(rng);
            }
        }
        ShuffleMode::InterInstitution => {
            for a in 0..n_axes {
                let mut order: Vec<usize> = (0..lists.len()).collect();
                order.shuffle(rng);
                for (i, &src) in order.iter().enumerate() {
                    out[i][a] = lists[src][a].clone();
                }
            }
        }
        ShuffleMode::Token => {
            for a in 0..n_axes {
                let mut pool: Vec<String> = lists.iter().flat_map(|inst| inst[a].iter().cloned()).collect();
                pool.shuffle(rng);
                let mut it = pool.into_iter();
                for (i, inst) in lists.iter().enumerate() {
                    out[i][a] = it.by_ref().take(inst[a].len()).collect();
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    /// Two-sided.
    pub p_value: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

/// Two-sample unequal-variance t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AstraError::invalid("Welch test needs two samples of size >= 2"));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (va, vb) = (sa * sa / a.len() as f64, sb * sb / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        let t = if ma == mb { 0.0 } else { f64::INFINITY.copysign(ma - mb) };
        return Ok(WelchTest {
            t_statistic: t,
            degrees_of_freedom: f64::INFINITY,
            p_value: if ma == mb { 1.0 } else { 0.0 },
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| AstraError::invalid(e.to_string()))?;
    Ok(WelchTest {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleResult {
    pub mode: ShuffleMode,
    pub replicates: usize,
    /// Unshuffled silhouette for each UMAP seed.
    pub baseline: Vec<f64>,
    pub shuffled: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub shuffled_mean: f64,
    pub shuffled_std: f64,
    pub delta_silhouette: f64,
    pub test: WelchTest,
}

/// Replicate `r` shuffles with its own random stream and projects with
/// UMAP seed `manifold.rng_seed + r`; the baseline reuses those seeds on
/// the unshuffled corpus.
pub fn shuffle_controls(setup: &AblationSetup, mode: ShuffleMode, n_reps: usize, seed: u64) -> Result<ShuffleResult> {
    if n_reps < 2 {
        return Err(AstraError::invalid("shuffle controls need at least 2 replicates"));
    }
    let base_feat = setup.features(setup.token_lists, &AxisId::ALL)?;
    let runs = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let umap_seed = setup.manifold.rng_seed.wrapping_add(r as u64);
            let base = setup.score(&base_feat, umap_seed)?.silhouette;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let lists = shuffle_token_lists(setup.token_lists, mode, &mut rng);
            let feat = setup.features(&lists, &AxisId::ALL)?;
            Ok((base, setup.score(&feat, umap_seed)?.silhouette))
        })
        .collect::<Result<Vec<_>>>()?;
    let (baseline, shuffled): (Vec<f64>, Vec<f64>) = runs.into_iter().unzip();
    let (bm, bs) = mean_std(&baseline);
    let (sm, ss) = mean_std(&shuffled);
    let test = welch_t_test(&baseline, &shuffled)?;
    Ok(ShuffleResult {
        mode,
        replicates: n_reps,
        baseline,
        shuffled,
        baseline_mean: bm,
        baseline_std: bs,
        shuffled_mean: sm,
        shuffled_std: ss,
        delta_silhouette: bm - sm,
        test,
    })
}

/// Concatenated axis embeddings, each axis block pooled and L2-normalized.
pub fn raw_axis_features(
    ids: &[&str],
    token_lists: &[Vec<Vec<String>>],
    table: &TokenEmbeddingTable,
) -> Result<Array2<f64>> {
    let d = table.dim();
    let mut x = Array2::zeros((token_lists.len(), AxisId::COUNT * d));
    for (i, inst) in token_lists.iter().enumerate() {
        for axis in AxisId::ALL {
            let pooled = pool_axis_embedding(ids[i], axis, &inst[axis.index()], table)?;
            for (j, v) in pooled.vector.iter().enumerate() {
                x[[i, axis.index() * d + j]] = *v;
            }
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub spec: ClusterSpec,
    pub k: usize,
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVsCodebook {
    pub raw: PathMetrics,
    pub codebook: PathMetrics,
}

fn best_agglomerative(features: &Array2<f64>, manifold: &ManifoldConfig, sweep: &SweepConfig) -> Result<PathMetrics> {
    let mut x = features.clone();
    l2_normalize_rows(&mut x);
    let proj = umap_project(&x, manifold)?;
    let cfg = SweepConfig {
        algorithms: vec![Algorithm::AgglomerativeWard, Algorithm::AgglomerativeAverage],
        ..sweep.clone()
    };
    let report = run_sweep(&proj.coords, &cfg)?;
    let best = report.best();
    let s = best
        .scores
        .as_ref()
        .ok_or_else(|| AstraError::Degenerate("no scored agglomerative solution".into()))?;
    Ok(PathMetrics {
        spec: best.solution.spec.clone(),
        k: best.solution.k_effective,
        silhouette: s.silhouette,
        calinski_harabasz: s.calinski_harabasz,
        davies_bouldin: s.davies_bouldin,
        composite: s.composite,
    })
}

/// Runs both feature sets through the same projection and agglomerative
/// sweep and reports the selected solutions side by side.
pub fn raw_vs_codebook_ablation(
    raw: &Array2<f64>,
    codebook: &Array2<f64>,
    manifold: &ManifoldConfig,
    sweep: &SweepConfig,
) -> Result<RawVsCodebook> {
    Ok(RawVsCodebook {
        raw: best_agglomerative(raw, manifold, sweep)?,
        codebook: best_agglomerative(codebook, manifold, sweep)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Linkage;
    use crate::codebook::{build_codebook, CodebookConfig};
    use crate::synthetic::{planted_corpus, SyntheticSpec};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn orthogonal_rows_tie_by_index() {
        let x = Array2::<f64>::eye(4);
        let nb = similarity_topk(&x, 3).unwrap();
        assert_eq!(nb[2].iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 3]);
        assert!(nb.iter().flatten().all(|n| n.similarity == 0.0));
    }

    #[test]
    fn duplicate_row_ranks_first() {
        let x = array![[0.6, 0.8], [1.0, 0.0], [0.6, 0.8]];
        let nb = similarity_topk(&x, 2).unwrap();
        assert_eq!(nb[0][0].index, 2);
        assert!((nb[0][0].similarity - 1.0).abs() < 1e-15);
    }

    #[test]
    fn topk_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = Array2::from_shape_fn((20, 6), |_| rng.random::<f64>() - 0.5);
        l2_normalize_rows(&mut x);
        let nb = similarity_topk(&x, 5).unwrap();
        for i in 0..20 {
            // Rank by counting strictly better rows.
            let sims: Vec<f64> = (0..20)
                .map(|j| x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| a * b).sum())
                .collect();
            let mut want: Vec<(usize, usize)> = Vec::new();
            for j in (0..20).filter(|&j| j != i) {
                let better = (0..20)
                    .filter(|&m| m != i && m != j)
                    .filter(|&m| sims[m] > sims[j] || (sims[m] == sims[j] && m < j))
                    .count();
                if better < 5 {
                    want.push((better, j));
                }
            }
            want.sort();
            let got: Vec<usize> = nb[i].iter().map(|n| n.index).collect();
            assert_eq!(got, want.iter().map(|w| w.1).collect::<Vec<_>>());
        }
    }

    #[test]
    fn entropy_hand_values() {
        assert_eq!(normalized_entropy(&[10]), 0.0);
        assert_eq!(normalized_entropy(&[5, 5]), 1.0);
        let h = normalized_entropy(&[8, 1, 1]);
        let want = -(0.8f64 * 0.8f64.ln() + 2.0 * 0.1 * 0.1f64.ln()) / 3f64.ln();
        assert!((h - want).abs() < 1e-15);
        assert!((h - 0.582).abs() < 1e-3);
    }

    #[test]
    fn boundary_report_on_two_groups() {
        // Row 4 sits exactly between the two groups.
        let x = array![[1.0, 0.0], [0.99, 0.14], [0.0, 1.0], [0.14, 0.99], [0.7, 0.7]];
        let labels = [0, 0, 1, 1, 2];
        let r = neighbor_entropy(&x, &labels, 4).unwrap();
        let e = &r.entries[4];
        assert_eq!(e.distinct_clusters, 2);
        assert_eq!(e.entropy, 1.0);
        assert!(e.boundary);
        assert!(r
            .entries
            .iter()
            .all(|e| (e.distribution.iter().map(|d| d.1).sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(neighbor_entropy(&x, &labels, 5).is_err());
    }

    #[test]
    fn jaccard_extremes() {
        let a: BTreeSet<usize> = [1, 2].into();
        let b: BTreeSet<usize> = [3].into();
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &b), 0.0);
        assert_eq!(jaccard(&BTreeSet::new(), &BTreeSet::new()), 1.0);
    }

    #[test]
    fn sensitivity_identical_sets() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let s = knn_sensitivity(&x, &[0, 1, 0, 1, 0, 1], &[1, 2]).unwrap();
        assert!(s.jaccard.iter().flatten().all(|&j| j == 1.0));
    }

    #[test]
    fn welch_matches_hand_example() {
        let a = [19.8, 20.4, 19.6, 17.8, 18.5, 18.9, 18.3, 18.9, 19.5, 22.0];
        let b = [28.2, 26.6, 20.1, 23.3, 25.2, 22.1, 17.7, 27.6, 20.6, 13.7];
        let t = welch_t_test(&a, &b).unwrap();
        // Reference values from an independent statistics package.
        assert!((t.t_statistic - -2.0740146266783652).abs() < 1e-9);
        assert!((t.degrees_of_freedom - 10.209185368660295).abs() < 1e-9);
        assert!((t.p_value - 0.06427999772458466).abs() < 1e-7, "{}", t.p_value);
    }

    fn toy_setup(spec: &SyntheticSpec) -> (Vec<Vec<Vec<String>>>, Codebook) {
        let s = planted_corpus(spec).unwrap();
        let cb = build_codebook(&s.table, &s.corpus.vocabulary(), &CodebookConfig::default()).unwrap();
        (s.corpus.token_lists(), cb)
    }

    fn setup<'a>(lists: &'a [Vec<Vec<String>>], cb: &'a Codebook, k: usize) -> AblationSetup<'a> {
        AblationSetup {
            token_lists: lists,
            codebook: cb,
            families: FeatureFamilies::Tfidf,
            manifold: ManifoldConfig {
                n_epochs: 200,
                ..Default::default()
            },
            cluster: ClusterSpec::Agglomerative {
                linkage: Linkage::Ward,
                k,
            },
        }
    }

    #[test]
    fn token_shuffle_within_description_is_noop() {
        let (lists, cb) = toy_setup(&SyntheticSpec::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut shuffled = lists.clone();
        for inst in &mut shuffled {
            for axis in inst.iter_mut() {
                axis.shuffle(&mut rng);
            }
        }
        let s = setup(&lists, &cb, 4);
        assert_eq!(
            s.features(&lists, &AxisId::ALL).unwrap(),
            s.features(&shuffled, &AxisId::ALL).unwrap()
        );
    }

    #[test]
    fn shuffles_keep_token_multisets_where_promised() {
        let (lists, _) = toy_setup(&SyntheticSpec::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in ShuffleMode::ALL {
            let out = shuffle_token_lists(&lists, mode, &mut rng);
            for a in 0..8 {
                let mut before: Vec<&String> = lists.iter().flat_map(|i| &i[a]).collect();
                let mut after: Vec<&String> = out.iter().flat_map(|i| &i[a]).collect();
                before.sort();
                after.sort();
                if mode != ShuffleMode::Axis {
                    assert_eq!(before, after, "{mode}");
                }
            }
            assert_ne!(out, lists, "{mode}");
        }
    }

    #[test]
    fn empty_axis_removal_changes_nothing() {
        let (mut lists, cb) = toy_setup(&SyntheticSpec::default());
        for inst in &mut lists {
            inst[5].clear();
        }
        let r = leave_one_axis_out(&setup(&lists, &cb, 4)).unwrap();
        let a = &r.axes[5];
        assert_eq!(a.delta_silhouette, 0.0);
        assert_eq!(a.delta_calinski_harabasz, 0.0);
    }

    #[test]
    fn single_signal_axis_carries_the_clusters() {
        let spec = SyntheticSpec {
            signal_axes: vec![AxisId::ALL[1]],
            purity: 1.0,
            ..Default::default()
        };
        let (lists, cb) = toy_setup(&spec);
        let r = leave_one_axis_out(&setup(&lists, &cb, 4)).unwrap();
        let signal = r.axes[1].delta_silhouette;
        assert!(signal > 0.05, "{signal}");
        for (a, ab) in r.axes.iter().enumerate().filter(|(a, _)| *a != 1) {
            assert!(ab.delta_silhouette < signal, "axis {a}");
        }
    }

    #[test]
    fn duplicated_axis_removal_is_symmetric() {
        let (mut lists, cb) = toy_setup(&SyntheticSpec::default());
        for inst in &mut lists {
            inst[7] = inst[6].clone();
        }
        let r = leave_one_axis_out(&setup(&lists, &cb, 4)).unwrap();
        let (a, b) = (&r.axes[6].scores, &r.axes[7].scores);
        assert!((a.silhouette - b.silhouette).abs() < 1e-9);
        assert!((a.calinski_harabasz - b.calinski_harabasz).abs() < 1e-9 * a.calinski_harabasz.abs());
    }

    #[test]
    fn identical_inputs_give_identical_paths() {
        let (lists, cb) = toy_setup(&SyntheticSpec::default());
        let f = setup(&lists, &cb, 4).features(&lists, &AxisId::ALL).unwrap();
        let sweep = SweepConfig {
            k_max: 8,
            ..Default::default()
        };
        let m = ManifoldConfig {
            n_epochs: 100,
            ..Default::default()
        };
        let r = raw_vs_codebook_ablation(&f, &f, &m, &sweep).unwrap();
        assert_eq!(r.raw, r.codebook);
    }

    proptest! {
        #[test]
        fn entropy_in_unit_interval_and_relabel_invariant(counts in proptest::collection::vec(0usize..20, 1..8)) {
            let h = normalized_entropy(&counts);
            prop_assert!((0.0..=1.0).contains(&h));
            let mut rev = counts.clone();
            rev.reverse();
            prop_assert!((normalized_entropy(&rev) - h).abs() < 1e-12);
        }
    }
}
