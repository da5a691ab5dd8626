//! Partition agreement (ARI, NMI) and bootstrap stability of a fixed
//! clustering spec.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterSpec;
use crate::error::{AstraError, Result};

fn contingency(a: &[i32], b: &[i32]) -> (HashMap<(i32, i32), usize>, HashMap<i32, usize>, HashMap<i32, usize>) {
    let mut joint = HashMap::new();
    let mut ra = HashMap::new();
    let mut rb = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *ra.entry(x).or_insert(0) += 1;
        *rb.entry(y).or_insert(0) += 1;
    }
    (joint, ra, rb)
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index. Noise labels are treated as an ordinary label.
pub fn adjusted_rand_index(a: &[i32], b: &[i32]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let (joint, ra, rb) = contingency(a, b);
    let index: f64 = joint.values().map(|&v| comb2(v)).sum();
    let sa: f64 = ra.values().map(|&v| comb2(v)).sum();
    let sb: f64 = rb.values().map(|&v| comb2(v)).sum();
    let expected = sa * sb / comb2(n);
    let max_index = 0.5 * (sa + sb);
    let denom = max_index - expected;
    if denom == 0.0 {
        // Both labelings trivial (one cluster, or all singletons).
        return if index == max_index { 1.0 } else { 0.0 };
    }
    (index - expected) / denom
}

fn entropy(counts: &HashMap<i32, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn normalized_mutual_info(a: &[i32], b: &[i32]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let (joint, ra, rb) = contingency(a, b);
    let ha = entropy(&ra, n);
    let hb = entropy(&rb, n);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ra[&x] as f64 / n;
            let py = rb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    let denom = 0.5 * (ha + hb);
    (mi / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mean_ari: f64,
    pub std_ari: f64,
    pub mean_nmi: f64,
    pub std_nmi: f64,
    pub replicates: usize,
    pub skipped: usize,
    pub ari: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

fn spec_k(spec: &ClusterSpec) -> usize {
    match *spec {
        ClusterSpec::Agglomerative { k, .. } | ClusterSpec::KMeans { k, .. } => k,
        ClusterSpec::Dbscan { min_samples } | ClusterSpec::Optics { min_samples, .. } => min_samples,
    }
}

/// Resample rows with replacement, re-cluster the resample with `spec`,
/// and compare against `reference` on the distinct rows drawn.
pub fn bootstrap_stability(
    points: &Array2<f64>,
    spec: &ClusterSpec,
    reference: &[i32],
    n_boot: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let n = points.nrows();
    if reference.len() != n {
        return Err(AstraError::DimensionMismatch {
            expected: n,
            found: reference.len(),
            context: "reference labels".into(),
        });
    }
    let need = spec_k(spec);
    let outcomes: Vec<Option<(f64, f64)>> = (0..n_boot)
        .into_par_iter()
        .map(|rep| -> Result<Option<(f64, f64)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut first_pos = vec![usize::MAX; n];
            for (pos, &i) in idx.iter().enumerate() {
                if first_pos[i] == usize::MAX {
                    first_pos[i] = pos;
                }
            }
            let distinct: Vec<usize> = (0..n).filter(|&i| first_pos[i] != usize::MAX).collect();
            if distinct.len() < need {
                return Ok(None);
            }
            let sample = Array2::from_shape_fn((n, points.ncols()), |(r, c)| points[[idx[r], c]]);
            let sol = spec.run(&sample)?;
            let got: Vec<i32> = distinct.iter().map(|&i| sol.labels[first_pos[i]]).collect();
            let want: Vec<i32> = distinct.iter().map(|&i| reference[i]).collect();
            Ok(Some((
                adjusted_rand_index(&want, &got),
                normalized_mutual_info(&want, &got),
            )))
        })
        .collect::<Result<_>>()?;
    let ari: Vec<f64> = outcomes.iter().flatten().map(|o| o.0).collect();
    let nmi: Vec<f64> = outcomes.iter().flatten().map(|o| o.1).collect();
    let (mean_ari, std_ari) = mean_std(&ari);
    let (mean_nmi, std_nmi) = mean_std(&nmi);
    Ok(StabilityReport {
        mean_ari,
        std_ari,
        mean_nmi,
        std_nmi,
        replicates: ari.len(),
        skipped: n_boot - ari.len(),
        ari,
    })
}
