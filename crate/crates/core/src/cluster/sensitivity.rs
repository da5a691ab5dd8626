//! Robustness of the composite winner to the blend weights: weight vectors
//! are drawn from a flat Dirichlet, restricted by rejection to a box, and
//! the pooled candidates are re-ranked under each draw.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use super::composite::{composite_value, rank_scored, CompositeWeights, ScoredCandidate};
use super::sweep::Candidate;
use super::Algorithm;
use crate::error::{AstraError, Result};

const MAX_ATTEMPTS_PER_SAMPLE: usize = 100_000;

/// Draw from Dirichlet(1,…,1) until every component lies in `[lo, hi]`.
pub fn sample_bounded_dirichlet<const N: usize>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Result<([f64; N], usize)> {
    let nf = N as f64;
    if lo < 0.0 || hi < lo || nf * lo > 1.0 || nf * hi < 1.0 {
        return Err(AstraError::invalid(format!(
            "bounds [{lo}, {hi}] are infeasible for {N} components summing to 1"
        )));
    }
    let dist = Dirichlet::new([1.0f64; N]).map_err(|e| AstraError::invalid(e.to_string()))?;
    for attempt in 0..MAX_ATTEMPTS_PER_SAMPLE {
        let w: [f64; N] = dist.sample(rng);
        if w.iter().all(|&v| v >= lo && v <= hi) {
            return Ok((w, attempt));
        }
    }
    Err(AstraError::Degenerate(format!(
        "no Dirichlet draw within [{lo}, {hi}] after {MAX_ATTEMPTS_PER_SAMPLE} attempts"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub algorithm: Algorithm,
    pub k: usize,
    pub wins: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub samples: usize,
    pub rejected: usize,
    /// Per (algorithm, k), sorted by descending wins.
    pub win_rates: Vec<WinRate>,
    pub algorithm_win_rates: BTreeMap<Algorithm, f64>,
}

/// Re-rank already-normalized candidates under `n_samples` random blends.
pub fn weight_sensitivity(
    candidates: &[Candidate],
    base: &CompositeWeights,
    n_samples: usize,
    bounds: (f64, f64),
    seed: u64,
) -> Result<SensitivityReport> {
    let scored: Vec<(usize, &Candidate)> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.scores.is_some())
        .collect();
    if scored.is_empty() {
        return Err(AstraError::Degenerate("no scored candidates".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins: BTreeMap<(Algorithm, usize), usize> = BTreeMap::new();
    let mut rejected = 0;
    for _ in 0..n_samples {
        let (blend, rej) = sample_bounded_dirichlet::<6>(&mut rng, bounds.0, bounds.1)?;
        rejected += rej;
        let w = base.with_blend(blend);
        let mut items: Vec<ScoredCandidate> = scored
            .iter()
            .map(|&(index, c)| {
                let s = c.scores.as_ref().expect("filtered");
                ScoredCandidate {
                    index,
                    composite: composite_value(s.sil_hat, s.ch_hat, s.db_hat, &c.solution.cluster_sizes, &w),
                    silhouette: s.silhouette,
                    k: c.solution.k_effective,
                }
            })
            .collect();
        rank_scored(&mut items);
        let top = &candidates[items[0].index].solution;
        *wins.entry((top.algorithm(), top.k_effective)).or_insert(0) += 1;
    }
    let total = n_samples.max(1) as f64;
    let mut win_rates: Vec<WinRate> = wins
        .iter()
        .map(|(&(algorithm, k), &w)| WinRate {
            algorithm,
            k,
            wins: w,
            fraction: w as f64 / total,
        })
        .collect();
    win_rates.sort_by(|a, b| {
        b.wins
            .cmp(&a.wins)
            .then(a.algorithm.cmp(&b.algorithm))
            .then(a.k.cmp(&b.k))
    });
    let mut algorithm_win_rates = BTreeMap::new();
    for r in &win_rates {
        *algorithm_win_rates.entry(r.algorithm).or_insert(0.0) += r.fraction;
    }
    Ok(SensitivityReport {
        samples: n_samples,
        rejected,
        win_rates,
        algorithm_win_rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterSolution, ClusterSpec, Linkage, QualityScores};

    fn candidate(linkage: Linkage, k: usize, sil: f64, ch: f64, db: f64) -> Candidate {
        let labels: Vec<i32> = (0..k as i32).flat_map(|c| [c, c, c]).collect();
        let solution = ClusterSolution::from_labels(ClusterSpec::Agglomerative { linkage, k }, &labels);
        Candidate {
            solution,
            scores: Some(QualityScores {
                sil_hat: sil,
                ch_hat: ch,
                db_hat: db,
                ..Default::default()
            }),
            noise_flagged: false,
        }
    }

    #[test]
    fn dominant_candidate_always_wins() {
        let cands = vec![
            candidate(Linkage::Average, 8, 1.0, 1.0, 1.0),
            candidate(Linkage::Ward, 8, 0.5, 0.4, 0.3),
            candidate(Linkage::Ward, 3, 0.0, 0.0, 0.0),
        ];
        let rep = weight_sensitivity(&cands, &CompositeWeights::default(), 200, (0.05, 0.5), 1).unwrap();
        assert_eq!(rep.win_rates.len(), 1);
        assert_eq!(rep.win_rates[0].fraction, 1.0);
        assert_eq!(rep.algorithm_win_rates[&Algorithm::AgglomerativeAverage], 1.0);
    }

    #[test]
    fn bounded_draws_respect_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (w, _) = sample_bounded_dirichlet::<6>(&mut rng, 0.05, 0.5).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&v| (0.05..=0.5).contains(&v)));
        }
        assert!(sample_bounded_dirichlet::<6>(&mut rng, 0.2, 0.5).is_err());
        assert!(sample_bounded_dirichlet::<6>(&mut rng, 0.0, 0.1).is_err());
    }

    #[test]
    fn trade_off_splits_wins_like_the_grid_oracle() {
        // A wins on silhouette, B on CH; other terms equal.
        let cands = vec![
            candidate(Linkage::Average, 6, 1.0, 0.0, 0.5),
            candidate(Linkage::Ward, 6, 0.0, 1.0, 0.5),
        ];
        // Exhaustive grid over the bounded simplex: A wins iff alpha > beta.
        let step = 0.01;
        let (mut a_wins, mut total) = (0usize, 0usize);
        let grid: Vec<f64> = (5..=50).map(|i| i as f64 * step).collect();
        for &a in &grid {
            for &b in &grid {
                let rest = 1.0 - a - b;
                // the other four components must fit in [0.05, 0.5]
                if !(4.0 * 0.05 - 1e-12..=4.0 * 0.5 + 1e-12).contains(&rest) {
                    continue;
                }
                total += 1;
                if a > b {
                    a_wins += 1;
                }
            }
        }
        let grid_rate = a_wins as f64 / total as f64;
        assert!(grid_rate > 0.0 && grid_rate < 1.0);

        let rep = weight_sensitivity(&cands, &CompositeWeights::default(), 500, (0.05, 0.5), 7).unwrap();
        let avg = rep
            .algorithm_win_rates
            .get(&Algorithm::AgglomerativeAverage)
            .copied()
            .unwrap_or(0.0);
        assert!(avg > 0.0 && avg < 1.0, "{avg}");
        // By symmetry of alpha and beta both rates sit near one half.
        assert!((avg - 0.5).abs() < 0.1 && (grid_rate - 0.5).abs() < 0.05);
    }
}
