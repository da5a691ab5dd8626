//! Seeded generators for toy corpora and point clouds with planted
//! structure. Used by the tests, the benchmarks and `astra synth`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{AxisId, Corpus, InstitutionProfile, KNOWN_TYPES};
use crate::embed::TokenEmbeddingTable;
use crate::error::{AstraError, Result};

const COUNTRIES: [&str; 6] = ["KR", "DE", "US", "JP", "NL", "BR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub per_group: usize,
    /// Token families; the codebook should recover one codeword per concept.
    pub concepts: usize,
    pub tokens_per_concept: usize,
    pub dim: usize,
    pub tokens_per_axis: usize,
    /// Probability that a token on a signal axis comes from the group's
    /// preferred concept rather than a uniformly random one.
    pub purity: f64,
    /// Standard deviation of token vectors around their concept center.
    pub embedding_noise: f64,
    /// Axes whose text follows the group; the others are pure noise.
    pub signal_axes: Vec<AxisId>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            groups: 4,
            per_group: 12,
            concepts: 7,
            tokens_per_concept: 6,
            dim: 16,
            tokens_per_axis: 6,
            purity: 0.85,
            embedding_noise: 0.05,
            signal_axes: AxisId::ALL.to_vec(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub table: TokenEmbeddingTable,
    /// Planted group of each institution.
    pub groups: Vec<usize>,
    /// Planted concept of each token.
    pub token_concepts: std::collections::BTreeMap<String, usize>,
}

pub fn concept_token(concept: usize, j: usize) -> String {
    format!("cpt{concept}tok{j}")
}

/// Institutions in `groups` planted groups. On every signal axis each group
/// prefers its own concept (distinct across groups on that axis), so the
/// group is recoverable from codeword histograms.
pub fn planted_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.groups == 0 || spec.per_group == 0 || spec.tokens_per_axis == 0 || spec.tokens_per_concept == 0 {
        return Err(AstraError::invalid("synthetic corpus needs nonzero sizes"));
    }
    if spec.groups > spec.concepts {
        return Err(AstraError::invalid(format!(
            "{} groups need at least as many concepts (got {})",
            spec.groups, spec.concepts
        )));
    }
    if !(0.0..=1.0).contains(&spec.purity) || spec.dim < spec.concepts {
        return Err(AstraError::invalid("purity must be in [0, 1] and dim >= concepts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.embedding_noise.max(0.0)).map_err(|e| AstraError::invalid(e.to_string()))?;

    // Concept centers on distinct coordinate axes keep them far apart.
    let mut table = TokenEmbeddingTable::new(spec.dim);
    let mut token_concepts = std::collections::BTreeMap::new();
    for c in 0..spec.concepts {
        for j in 0..spec.tokens_per_concept {
            let v: Vec<f32> = (0..spec.dim)
                .map(|d| (if d == c { 1.0 } else { 0.0 } + noise.sample(&mut rng)) as f32)
                .collect();
            let t = concept_token(c, j);
            table.insert(t.clone(), v)?;
            token_concepts.insert(t, c);
        }
    }

    let mut preferred = vec![[0usize; AxisId::COUNT]; spec.groups];
    for a in 0..AxisId::COUNT {
        let mut order: Vec<usize> = (0..spec.concepts).collect();
        order.shuffle(&mut rng);
        for g in 0..spec.groups {
            preferred[g][a] = order[g];
        }
    }

    let mut institutions = Vec::new();
    let mut groups = Vec::new();
    for g in 0..spec.groups {
        for m in 0..spec.per_group {
            let i = institutions.len();
            let axes: [String; 8] = std::array::from_fn(|a| {
                let signal = spec.signal_axes.contains(&AxisId::ALL[a]);
                (0..spec.tokens_per_axis)
                    .map(|_| {
                        let c = if signal && rng.random::<f64>() < spec.purity {
                            preferred[g][a]
                        } else {
                            rng.random_range(0..spec.concepts)
                        };
                        concept_token(c, rng.random_range(0..spec.tokens_per_concept))
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            });
            institutions.push(InstitutionProfile {
                id: format!("inst-{i:03}"),
                name: format!("Institution {g}-{m}"),
                primary_type: KNOWN_TYPES[g % KNOWN_TYPES.len()].to_string(),
                secondary_type: None,
                country: COUNTRIES[i % COUNTRIES.len()].to_string(),
                founding_year: 1950 + (i % 70) as i32,
                axes,
            });
            groups.push(g);
        }
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(institutions)?,
        table,
        groups,
        token_concepts,
    })
}

/// Isotropic Gaussian blobs around the given centers.
pub fn gaussian_blobs(centers: &[Vec<f64>], per_blob: usize, std: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let dim = centers.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = centers.len() * per_blob;
    let mut x = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for p in 0..per_blob {
            let i = c * per_blob + p;
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[i, d]] = center[d] + std * z;
            }
            labels.push(c);
        }
    }
    (x, labels)
}

/// `k` blob centers at distance `sep` along distinct coordinate axes.
pub fn axis_centers(k: usize, dim: usize, sep: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| (0..dim).map(|d| if d == c % dim { sep } else { 0.0 }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_corpus_is_valid_and_seeded() {
        let spec = SyntheticSpec::default();
        let a = planted_corpus(&spec).unwrap();
        assert_eq!(a.corpus.len(), 48);
        a.corpus.validate().unwrap();
        let cov = a.table.coverage(&a.corpus.vocabulary());
        assert!(cov.missing.is_empty());
        let b = planted_corpus(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn noise_axes_do_not_follow_groups() {
        let spec = SyntheticSpec {
            signal_axes: vec![AxisId::ALL[2]],
            purity: 1.0,
            ..Default::default()
        };
        let s = planted_corpus(&spec).unwrap();
        for (inst, &g) in s.corpus.institutions.iter().zip(&s.groups) {
            let toks = inst.token_lists();
            let concepts: std::collections::BTreeSet<usize> = toks[2].iter().map(|t| s.token_concepts[t]).collect();
            assert_eq!(concepts.len(), 1, "group {g}");
        }
    }

    #[test]
    fn blobs_have_requested_shape() {
        let (x, l) = gaussian_blobs(&axis_centers(3, 4, 10.0), 5, 0.1, 1);
        assert_eq!(x.dim(), (15, 4));
        assert_eq!(l, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert!((x[[7, 1]] - 10.0).abs() < 1.0);
    }
}
