//! Hyperparameter sweep over all four algorithm families, scored and
//! ranked with the composite on one pooled candidate set.

use std::collections::BTreeMap;
use std::fmt::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::composite::{composite_score, CompositeWeights, ScoredCandidate};
use super::metrics::{validity_metrics, QualityScores};
use super::{Algorithm, ClusterSolution, ClusterSpec, Dendrogram, Linkage};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub min_samples: Vec<usize>,
    pub xis: Vec<f64>,
    pub kmeans_seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub noise_flag_fraction: f64,
    pub weights: CompositeWeights,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_min: 2,
            k_max: 20,
            min_samples: vec![3, 5, 10, 15],
            xis: vec![0.01, 0.05, 0.1, 0.15],
            kmeans_seed: 0,
            algorithms: vec![
                Algorithm::AgglomerativeWard,
                Algorithm::AgglomerativeAverage,
                Algorithm::KMeans,
                Algorithm::Dbscan,
                Algorithm::Optics,
            ],
            noise_flag_fraction: 0.25,
            weights: CompositeWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub solution: ClusterSolution,
    /// `None` when fewer than two clusters survive noise removal.
    pub scores: Option<QualityScores>,
    pub noise_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub candidates: Vec<Candidate>,
    pub ranking: Vec<ScoredCandidate>,
    pub best_per_algorithm: BTreeMap<Algorithm, usize>,
}

impl SweepReport {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.ranking[0].index]
    }

    /// One row per candidate in ranking order, then unscored candidates.
    pub fn to_table(&self) -> String {
        let mut out = String::from("rank\talgorithm\tparams\tk\tcomposite\tsilhouette\tch\tdb\tnoise_pct\tflags\n");
        let mut rows: Vec<(String, usize)> = self
            .ranking
            .iter()
            .enumerate()
            .map(|(r, s)| ((r + 1).to_string(), s.index))
            .collect();
        rows.extend(
            self.candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.scores.is_none())
                .map(|(i, _)| ("-".to_string(), i)),
        );
        for (rank, i) in rows {
            let c = &self.candidates[i];
            let params = spec_params(&c.solution.spec);
            let mut flags = Vec::new();
            if c.noise_flagged {
                flags.push("noise");
            }
            if c.solution.degenerate {
                flags.push("degenerate");
            }
            let (comp, sil, ch, db) = match &c.scores {
                Some(s) => (
                    format!("{:.4}", s.composite),
                    format!("{:.4}", s.silhouette),
                    format!("{:.1}", s.calinski_harabasz),
                    format!("{:.4}", s.davies_bouldin),
                ),
                None => ("-".into(), "-".into(), "-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{rank}\t{}\t{params}\t{}\t{comp}\t{sil}\t{ch}\t{db}\t{:.1}\t{}",
                c.solution.algorithm(),
                c.solution.k_effective,
                100.0 * c.solution.noise_fraction,
                flags.join(",")
            );
        }
        out
    }
}

fn spec_params(spec: &ClusterSpec) -> String {
    match spec {
        ClusterSpec::Agglomerative { k, .. } => format!("k={k}"),
        ClusterSpec::KMeans { k, seed } => format!("k={k},seed={seed}"),
        ClusterSpec::Dbscan { min_samples } => format!("min_samples={min_samples}"),
        ClusterSpec::Optics { min_samples, xi } => format!("min_samples={min_samples},xi={xi}"),
    }
}

fn evaluate(points: &Array2<f64>, solution: ClusterSolution, cfg: &SweepConfig) -> Candidate {
    let scores = if solution.k_effective >= 2 {
        validity_metrics(points, &solution.labels).ok()
    } else {
        None
    };
    let noise_flagged = solution.noise_fraction > cfg.noise_flag_fraction;
    Candidate {
        solution,
        scores,
        noise_flagged,
    }
}

/// The candidate specs the sweep will run for `n` points, in report order.
fn grid(n: usize, cfg: &SweepConfig) -> Vec<ClusterSpec> {
    let k_hi = cfg.k_max.min(n);
    let ks = cfg.k_min.max(2)..=k_hi;
    let mut specs = Vec::new();
    for &alg in &cfg.algorithms {
        match alg {
            Algorithm::AgglomerativeWard => specs.extend(ks.clone().map(|k| ClusterSpec::Agglomerative {
                linkage: Linkage::Ward,
                k,
            })),
            Algorithm::AgglomerativeAverage => specs.extend(ks.clone().map(|k| ClusterSpec::Agglomerative {
                linkage: Linkage::Average,
                k,
            })),
            Algorithm::KMeans => specs.extend(ks.clone().map(|k| ClusterSpec::KMeans {
                k,
                seed: cfg.kmeans_seed,
            })),
            Algorithm::Dbscan => specs.extend(
                cfg.min_samples
                    .iter()
                    .filter(|&&m| m <= n)
                    .map(|&min_samples| ClusterSpec::Dbscan { min_samples }),
            ),
            Algorithm::Optics => {
                for &min_samples in cfg.min_samples.iter().filter(|&&m| m <= n) {
                    specs.extend(cfg.xis.iter().map(|&xi| ClusterSpec::Optics { min_samples, xi }));
                }
            }
        }
    }
    specs
}

pub fn run_sweep(points: &Array2<f64>, cfg: &SweepConfig) -> Result<SweepReport> {
    let specs = grid(points.nrows(), cfg);
    // One dendrogram per linkage serves every k.
    let mut dendrograms = BTreeMap::new();
    for linkage in [Linkage::Ward, Linkage::Average] {
        if specs
            .iter()
            .any(|s| matches!(s, ClusterSpec::Agglomerative { linkage: l, .. } if *l == linkage))
        {
            dendrograms.insert(linkage as u8, Dendrogram::build(points, linkage));
        }
    }
    let solutions: Vec<Result<ClusterSolution>> = specs
        .par_iter()
        .map(|spec| match spec {
            ClusterSpec::Agglomerative { linkage, k } => {
                let labels = dendrograms[&(*linkage as u8)].cut(*k)?;
                Ok(ClusterSolution::from_labels(spec.clone(), &labels))
            }
            other => other.run(points),
        })
        .collect();
    let mut candidates = Vec::with_capacity(solutions.len());
    for s in solutions {
        candidates.push(evaluate(points, s?, cfg));
    }
    let ranking = composite_score(&mut candidates, &cfg.weights)?;
    let mut best_per_algorithm = BTreeMap::new();
    for r in &ranking {
        best_per_algorithm
            .entry(candidates[r.index].solution.algorithm())
            .or_insert(r.index);
    }
    Ok(SweepReport {
        candidates,
        ranking,
        best_per_algorithm,
    })
}
