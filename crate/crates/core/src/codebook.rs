//! Word-level codebook: PCA on token embeddings, agglomerative clustering
//! of the projected tokens into codewords, and quantization of each
//! institution into per-axis codeword histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::{Dendrogram, Linkage};
use crate::corpus::AxisId;
use crate::embed::TokenEmbeddingTable;
use crate::error::{AstraError, Result};
use crate::linalg::{l2_normalize_rows, sq_euclidean, symmetric_eigen_desc};

pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    pub variance_target: f64,
    pub max_pca_dims: usize,
    pub codebook_k: usize,
    pub linkage: Linkage,
    pub rng_seed: u64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig {
            variance_target: 0.953,
            max_pca_dims: 64,
            codebook_k: 7,
            linkage: Linkage::Ward,
            rng_seed: 0,
        }
    }
}

impl CodebookConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(AstraError::invalid(format!(
                "variance_target {} outside (0, 1]",
                self.variance_target
            )));
        }
        if self.codebook_k < 2 {
            return Err(AstraError::invalid("codebook_k must be >= 2"));
        }
        if self.max_pca_dims == 0 {
            return Err(AstraError::invalid("max_pca_dims must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `dims × input_dim`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub retained_variance: f64,
}

impl Pca {
    pub fn dims(&self) -> usize {
        self.components.len()
    }

    pub fn transform_row(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(v).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.dims()));
        for (i, row) in x.outer_iter().enumerate() {
            let t = self.transform_row(row.as_slice().expect("standard layout"));
            out.row_mut(i).assign(&Array1::from(t));
        }
        out
    }
}

/// Fit PCA keeping the fewest components whose cumulative explained
/// variance reaches `variance_target`, capped by `max_pca_dims` and by the
/// numerical rank of the data.
pub fn fit_pca(vectors: &Array2<f64>, config: &CodebookConfig) -> Result<Pca> {
    config.validate()?;
    let (n, d) = vectors.dim();
    if n < 2 {
        return Err(AstraError::invalid(format!("PCA needs at least 2 vectors, got {n}")));
    }
    let mean = vectors.mean_axis(Axis(0)).expect("n >= 2");
    let centered = vectors - &mean;

    // Work in whichever of the Gram or covariance space is smaller.
    let (eigvals, components): (Vec<f64>, Vec<Vec<f64>>) = if n <= d {
        let gram = centered.dot(&centered.t());
        let (vals, vecs) = symmetric_eigen_desc(&gram);
        let comps = (0..vals.len())
            .map(|j| {
                let u = vecs.column(j);
                let mut c = centered.t().dot(&u);
                let norm = c.dot(&c).sqrt();
                if norm > 0.0 {
                    c.mapv_inplace(|v| v / norm);
                }
                c.to_vec()
            })
            .collect();
        (vals, comps)
    } else {
        let cov = centered.t().dot(&centered);
        let (vals, vecs) = symmetric_eigen_desc(&cov);
        let comps = (0..vals.len()).map(|j| vecs.column(j).to_vec()).collect();
        (vals, comps)
    };
    let eigvals: Vec<f64> = eigvals.iter().map(|&v| v.max(0.0) / (n - 1) as f64).collect();
    let total: f64 = eigvals.iter().sum();
    if !(total > 0.0) {
        return Err(AstraError::Degenerate("zero-variance input to PCA".into()));
    }
    let rank = eigvals.iter().filter(|&&v| v > total * 1e-12).count().max(1);
    let mut dims = 0;
    let mut acc = 0.0;
    while dims < rank {
        acc += eigvals[dims];
        dims += 1;
        if acc / total >= config.variance_target - 1e-12 {
            break;
        }
    }
    let dims = dims.min(config.max_pca_dims).min(rank);
    let mut comps = components;
    comps.truncate(dims);
    // Orientation: largest-magnitude loading positive.
    for c in comps.iter_mut() {
        let s = crate::linalg::sign_of_largest(c.iter().copied());
        c.iter_mut().for_each(|v| *v *= s);
    }
    let explained: Vec<f64> = eigvals[..dims].to_vec();
    Ok(Pca {
        mean: mean.to_vec(),
        components: comps,
        retained_variance: explained.iter().sum::<f64>() / total,
        explained_variance: explained,
    })
}

/// PCA projection plus codeword centroids and the token assignment map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: u32,
    pub config: CodebookConfig,
    pub pca: Pca,
    /// One centroid per codeword in PCA space.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn retained_variance(&self) -> f64 {
        self.pca.retained_variance
    }

    pub fn codeword(&self, token: &str) -> Option<usize> {
        self.assignments.get(token).copied()
    }

    /// Codeword for a token outside the fitted vocabulary: nearest centroid
    /// in PCA space.
    pub fn assign_vector(&self, v: &[f32]) -> usize {
        let x: Vec<f64> = v.iter().map(|&f| f64::from(f)).collect();
        let p = Array1::from(self.pca.transform_row(&x));
        self.centroids
            .iter()
            .enumerate()
            .map(|(c, cen)| (c, sq_euclidean(p.view(), Array1::from(cen.clone()).view())))
            .fold((0, f64::INFINITY), |b, cur| if cur.1 < b.1 { cur } else { b })
            .0
    }

    /// Extend the assignment map with any table tokens not yet assigned.
    pub fn apply(&mut self, table: &TokenEmbeddingTable, tokens: &BTreeSet<String>) -> usize {
        let mut added = 0;
        for t in tokens {
            if self.assignments.contains_key(t) {
                continue;
            }
            if let Some(v) = table.get(t) {
                let c = self.assign_vector(v);
                self.assignments.insert(t.clone(), c);
                added += 1;
            }
        }
        added
    }

    /// Member tokens of a codeword, nearest the centroid first.
    pub fn representatives(&self, codeword: usize, table: &TokenEmbeddingTable, limit: usize) -> Vec<String> {
        let cen = Array1::from(self.centroids[codeword].clone());
        let mut members: Vec<(f64, &String)> = self
            .assignments
            .iter()
            .filter(|(_, &c)| c == codeword)
            .map(|(t, _)| {
                let d = table
                    .get(t)
                    .map(|v| {
                        let x: Vec<f64> = v.iter().map(|&f| f64::from(f)).collect();
                        sq_euclidean(Array1::from(self.pca.transform_row(&x)).view(), cen.view())
                    })
                    .unwrap_or(f64::INFINITY);
                (d, t)
            })
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        members.into_iter().take(limit).map(|(_, t)| t.clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| AstraError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AstraError::io(path, e))?;
        let cb: Codebook = serde_json::from_str(&text)?;
        if cb.version != CODEBOOK_FORMAT_VERSION {
            return Err(AstraError::invalid(format!(
                "unsupported codebook version {}",
                cb.version
            )));
        }
        Ok(cb)
    }
}

/// Build the codebook over `vocab` (tokens absent from `table` are skipped
/// with a warning). Tokens are processed in lexicographic order, and
/// codeword ids are ordered by descending member count.
pub fn build_codebook(
    table: &TokenEmbeddingTable,
    vocab: &BTreeSet<String>,
    config: &CodebookConfig,
) -> Result<Codebook> {
    config.validate()?;
    let tokens: Vec<&String> = vocab.iter().filter(|t| table.contains(t)).collect();
    let skipped = vocab.len() - tokens.len();
    if skipped > 0 {
        log::warn!("{skipped} vocabulary tokens have no embedding and are left out of the codebook");
    }
    if tokens.len() < config.codebook_k {
        return Err(AstraError::invalid(format!(
            "vocabulary of {} tokens is smaller than codebook_k={}",
            tokens.len(),
            config.codebook_k
        )));
    }
    let x = Array2::from_shape_fn((tokens.len(), table.dim()), |(i, j)| {
        f64::from(table.get(tokens[i]).expect("filtered")[j])
    });
    let pca = fit_pca(&x, config)?;
    let projected = pca.transform(&x);
    let raw = Dendrogram::build(&projected, config.linkage).cut(config.codebook_k)?;

    // Relabel by descending size; ties keep first-appearance order, which
    // is lexicographic token order.
    let k = config.codebook_k;
    let mut sizes = vec![0usize; k];
    for &l in &raw {
        sizes[l as usize] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut new_id = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = new;
    }
    let mut centroids = vec![vec![0.0; pca.dims()]; k];
    let mut assignments = BTreeMap::new();
    for (i, &l) in raw.iter().enumerate() {
        let c = new_id[l as usize];
        assignments.insert(tokens[i].clone(), c);
        for (acc, v) in centroids[c].iter_mut().zip(projected.row(i)) {
            *acc += v;
        }
    }
    for (c, cen) in centroids.iter_mut().enumerate() {
        let cnt = sizes[order[c]] as f64;
        cen.iter_mut().for_each(|v| *v /= cnt);
    }
    log::info!(
        "codebook: {} tokens, {} PCA dims ({:.1}% variance), k={k}",
        tokens.len(),
        pca.dims(),
        100.0 * pca.retained_variance
    );
    Ok(Codebook {
        version: CODEBOOK_FORMAT_VERSION,
        config: config.clone(),
        pca,
        centroids,
        assignments,
    })
}

/// Which feature blocks form the clustering input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamilies {
    #[default]
    Tfidf,
    Counts,
    Both,
}

impl std::str::FromStr for FeatureFamilies {
    type Err = AstraError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfidf" => Ok(FeatureFamilies::Tfidf),
            "counts" => Ok(FeatureFamilies::Counts),
            "both" => Ok(FeatureFamilies::Both),
            other => Err(AstraError::invalid(format!("unknown feature family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Tfidf,
    Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub family: Family,
    pub axis: AxisId,
    pub codeword: usize,
}

/// Per-institution codeword histograms, rows L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub columns: Vec<FeatureColumn>,
    pub families: FeatureFamilies,
    /// Raw counts `[institution][axis][codeword]` before weighting.
    pub counts: Vec<Vec<Vec<u32>>>,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn density(&self) -> f64 {
        let nz = self.data.iter().filter(|&&v| v != 0.0).count();
        nz as f64 / self.data.len().max(1) as f64
    }
}

/// Quantize token lists (`[institution][axis][token]`) with a codebook.
/// `axes` names the axis of each inner list, in column-group order.
pub fn quantize(
    token_lists: &[Vec<Vec<String>>],
    axes: &[AxisId],
    codebook: &Codebook,
    families: FeatureFamilies,
) -> Result<FeatureMatrix> {
    let k = codebook.k();
    let n = token_lists.len();
    let n_axes = axes.len();
    let mut counts = vec![vec![vec![0u32; k]; n_axes]; n];
    let mut dropped = 0usize;
    for (i, inst) in token_lists.iter().enumerate() {
        if inst.len() != n_axes {
            return Err(AstraError::DimensionMismatch {
                expected: n_axes,
                found: inst.len(),
                context: format!("axis lists of institution #{i}"),
            });
        }
        for (a, tokens) in inst.iter().enumerate() {
            for t in tokens {
                match codebook.codeword(t) {
                    Some(c) => counts[i][a][c] += 1,
                    None => dropped += 1,
                }
            }
        }
        if counts[i].iter().flatten().all(|&c| c == 0) {
            return Err(AstraError::Degenerate(format!(
                "institution #{i} has no in-vocabulary tokens on any axis"
            )));
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} token occurrences not covered by the codebook were dropped");
    }

    // idf per (axis, codeword) column group with smoothing.
    let nf = n as f64;
    let mut idf = vec![vec![0.0; k]; n_axes];
    for a in 0..n_axes {
        for c in 0..k {
            let df = counts.iter().filter(|inst| inst[a][c] > 0).count() as f64;
            idf[a][c] = ((1.0 + nf) / (1.0 + df)).ln() + 1.0;
        }
    }

    let blocks: Vec<Family> = match families {
        FeatureFamilies::Tfidf => vec![Family::Tfidf],
        FeatureFamilies::Counts => vec![Family::Counts],
        FeatureFamilies::Both => vec![Family::Tfidf, Family::Counts],
    };
    let mut columns = Vec::with_capacity(blocks.len() * n_axes * k);
    for &family in &blocks {
        for &axis in axes {
            for codeword in 0..k {
                columns.push(FeatureColumn { family, axis, codeword });
            }
        }
    }
    let mut data = Array2::zeros((n, columns.len()));
    for i in 0..n {
        let mut col = 0;
        for &family in &blocks {
            for a in 0..n_axes {
                for c in 0..k {
                    let cnt = f64::from(counts[i][a][c]);
                    data[[i, col]] = match family {
                        Family::Tfidf => cnt * idf[a][c],
                        Family::Counts => cnt,
                    };
                    col += 1;
                }
            }
        }
    }
    l2_normalize_rows(&mut data);
    Ok(FeatureMatrix {
        data,
        columns,
        families,
        counts,
    })
}

/// Quantize all eight axes.
pub fn quantize_corpus(
    token_lists: &[Vec<Vec<String>>],
    codebook: &Codebook,
    families: FeatureFamilies,
) -> Result<FeatureMatrix> {
    quantize(token_lists, &AxisId::ALL, codebook, families)
}
