//! The composite model-selection score: a weighted blend of min-max
//! normalized validity indices, a granularity bonus for cluster counts in
//! a preferred band, and penalties for singleton clusters.

use serde::{Deserialize, Serialize};

use super::sweep::Candidate;
use super::QualityScores;
use crate::error::{AstraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights {
            alpha: 0.30,
            beta: 0.25,
            gamma: 0.20,
            delta: 0.10,
            lambda1: 0.10,
            lambda2: 0.05,
            eta: 0.02,
            k_min: 5,
            k_max: 12,
        }
    }
}

impl CompositeWeights {
    pub fn max_bonus(&self) -> f64 {
        self.eta * (self.k_max - self.k_min) as f64
    }

    /// The six blend weights in order (α, β, γ, δ, λ₁, λ₂).
    pub fn blend(&self) -> [f64; 6] {
        [
            self.alpha,
            self.beta,
            self.gamma,
            self.delta,
            self.lambda1,
            self.lambda2,
        ]
    }

    pub fn with_blend(&self, w: [f64; 6]) -> Self {
        CompositeWeights {
            alpha: w[0],
            beta: w[1],
            gamma: w[2],
            delta: w[3],
            lambda1: w[4],
            lambda2: w[5],
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blend().iter().chain([&self.eta]).any(|&v| !(v >= 0.0)) {
            return Err(AstraError::invalid("composite weights must be non-negative"));
        }
        if self.k_max < self.k_min {
            return Err(AstraError::invalid("k_max must be >= k_min"));
        }
        Ok(())
    }
}

/// Zero below `k_min`, a linear ramp with slope η on `[k_min, k_max]`, and
/// held at the ramp's top value above `k_max`.
pub fn granularity_bonus(k: usize, w: &CompositeWeights) -> f64 {
    if k < w.k_min {
        0.0
    } else {
        w.eta * (k.min(w.k_max) - w.k_min) as f64
    }
}

/// Evaluate the composite for already-normalized scores.
pub fn composite_value(sil_hat: f64, ch_hat: f64, db_hat: f64, cluster_sizes: &[usize], w: &CompositeWeights) -> f64 {
    let k_eff = cluster_sizes.iter().filter(|&&s| s > 0).count();
    let (p_singleton, p_small) = if k_eff == 0 {
        (0.0, 0.0)
    } else {
        let singles = cluster_sizes.iter().filter(|&&s| s == 1).count() as f64;
        let small = cluster_sizes.iter().filter(|&&s| s > 0 && s < 2).count() as f64;
        (singles / k_eff as f64, small / k_eff as f64)
    };
    w.alpha * sil_hat + w.beta * ch_hat + w.gamma * db_hat + w.delta * granularity_bonus(k_eff, w)
        - w.lambda1 * p_singleton
        - w.lambda2 * p_small
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn scale(v: f64, lo: f64, hi: f64, invert: bool) -> f64 {
    if hi - lo <= 0.0 {
        return 1.0;
    }
    if invert {
        (hi - v) / (hi - lo)
    } else {
        (v - lo) / (hi - lo)
    }
}

/// Min-max normalize silhouette and CH ascending and DB inverted, pooled
/// over all scores given. A metric with zero range normalizes to 1.0.
pub fn normalize_scores(scores: &mut [&mut QualityScores]) {
    let sil: Vec<f64> = scores.iter().map(|s| s.silhouette).collect();
    let ch: Vec<f64> = scores.iter().map(|s| s.calinski_harabasz).collect();
    let db: Vec<f64> = scores.iter().map(|s| s.davies_bouldin).collect();
    let (sl, sh) = min_max(&sil);
    let (cl, chh) = min_max(&ch);
    let (dl, dh) = min_max(&db);
    for (name, lo, hi) in [("silhouette", sl, sh), ("CH", cl, chh), ("DB", dl, dh)] {
        if hi - lo <= 0.0 {
            log::warn!("{name} identical across all candidates; normalized to 1.0");
        }
    }
    for s in scores.iter_mut() {
        s.sil_hat = scale(s.silhouette, sl, sh, false);
        s.ch_hat = scale(s.calinski_harabasz, cl, chh, false);
        s.db_hat = scale(s.davies_bouldin, dl, dh, true);
    }
}

/// Compact view of a ranked candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub composite: f64,
    pub silhouette: f64,
    pub k: usize,
}

/// Order candidate indices by composite (desc), then raw silhouette (desc),
/// then smaller k.
pub fn rank_scored(items: &mut [ScoredCandidate]) {
    items.sort_by(|a, b| {
        b.composite
            .total_cmp(&a.composite)
            .then(b.silhouette.total_cmp(&a.silhouette))
            .then(a.k.cmp(&b.k))
            .then(a.index.cmp(&b.index))
    });
}

/// Normalize, score and rank every candidate with metrics. Candidates
/// without metrics (fewer than two clusters) are left unscored and do not
/// appear in the ranking.
pub fn composite_score(candidates: &mut [Candidate], weights: &CompositeWeights) -> Result<Vec<ScoredCandidate>> {
    weights.validate()?;
    let scorable = candidates.iter().filter(|c| c.scores.is_some()).count();
    if scorable < 2 {
        return Err(AstraError::Degenerate(format!(
            "composite normalization needs at least 2 scored candidates, found {scorable}"
        )));
    }
    {
        let mut refs: Vec<&mut QualityScores> = candidates.iter_mut().filter_map(|c| c.scores.as_mut()).collect();
        normalize_scores(&mut refs);
    }
    let mut ranked = Vec::with_capacity(scorable);
    for (index, c) in candidates.iter_mut().enumerate() {
        let sizes = c.solution.cluster_sizes.clone();
        if let Some(s) = c.scores.as_mut() {
            s.composite = composite_value(s.sil_hat, s.ch_hat, s.db_hat, &sizes, weights);
            ranked.push(ScoredCandidate {
                index,
                composite: s.composite,
                silhouette: s.silhouette,
                k: c.solution.k_effective,
            });
        }
    }
    rank_scored(&mut ranked);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonus_ramp() {
        let w = CompositeWeights::default();
        assert_eq!(granularity_bonus(4, &w), 0.0);
        assert_eq!(granularity_bonus(5, &w), 0.0);
        assert!((granularity_bonus(10, &w) - 0.10).abs() < 1e-15);
        assert!((granularity_bonus(12, &w) - w.max_bonus()).abs() < 1e-15);
        assert_eq!(granularity_bonus(20, &w), granularity_bonus(12, &w));
        assert!((w.max_bonus() - 0.14).abs() < 1e-15);
    }

    #[test]
    fn equal_metrics_normalize_to_one() {
        let mut a = QualityScores {
            silhouette: 0.5,
            calinski_harabasz: 10.0,
            davies_bouldin: 0.3,
            ..Default::default()
        };
        let mut b = a;
        normalize_scores(&mut [&mut a, &mut b]);
        assert_eq!((a.sil_hat, a.ch_hat, a.db_hat), (1.0, 1.0, 1.0));
    }

    #[test]
    fn db_is_inverted() {
        let mut a = QualityScores {
            davies_bouldin: 0.2,
            ..Default::default()
        };
        let mut b = QualityScores {
            davies_bouldin: 1.0,
            ..Default::default()
        };
        let mut c = QualityScores {
            davies_bouldin: 0.6,
            ..Default::default()
        };
        normalize_scores(&mut [&mut a, &mut b, &mut c]);
        assert_eq!((a.db_hat, b.db_hat), (1.0, 0.0));
        assert!((c.db_hat - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tie_break_prefers_silhouette_then_small_k() {
        let mut items = vec![
            ScoredCandidate {
                index: 0,
                composite: 0.5,
                silhouette: 0.4,
                k: 6,
            },
            ScoredCandidate {
                index: 1,
                composite: 0.5,
                silhouette: 0.4,
                k: 5,
            },
            ScoredCandidate {
                index: 2,
                composite: 0.5,
                silhouette: 0.6,
                k: 9,
            },
            ScoredCandidate {
                index: 3,
                composite: 0.7,
                silhouette: 0.1,
                k: 9,
            },
        ];
        rank_scored(&mut items);
        let order: Vec<usize> = items.iter().map(|c| c.index).collect();
        assert_eq!(order, vec![3, 2, 1, 0]);
    }
}
