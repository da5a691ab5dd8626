//! NMF topic extraction over the codebook feature matrix, topic-count
//! selection and codeword descriptors for each topic.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, FeatureColumn};
use crate::corpus::AxisId;
use crate::embed::TokenEmbeddingTable;
use crate::error::{AstraError, Result};
use crate::linalg::{cosine, to_nalgebra};

pub const TOP_TERMS: usize = 10;
const DENOM_FLOOR: f64 = 1e-16;
/// Values below this are zeroed after NNDSVD, as in the reference init.
const INIT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    /// Institutions × topics.
    pub w: Array2<f64>,
    /// Topics × features.
    pub h: Array2<f64>,
    pub k: usize,
    /// Frobenius norm of `X - WH`.
    pub reconstruction_error: f64,
    pub relative_error: f64,
    pub error_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Rows of `X` that were entirely zero.
    pub zero_rows: Vec<usize>,
}

impl TopicModel {
    pub fn reconstruct(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }

    /// Feature indices of a topic's largest positive entries, at most
    /// [`TOP_TERMS`], weight descending then index ascending.
    pub fn top_features(&self, topic: usize) -> Vec<(usize, f64)> {
        let mut entries: Vec<(usize, f64)> = self
            .h
            .row(topic)
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v > 0.0)
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(TOP_TERMS);
        entries
    }

    /// Dominant topic per institution (first index on ties).
    pub fn dominant_topics(&self) -> Vec<usize> {
        self.w
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                    )
                    .0
            })
            .collect()
    }
}

fn frobenius(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    (x - &w.dot(h)).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// NNDSVD with zeros filled by small seeded noise scaled to the data mean.
fn nndsvd_ar(x: &Array2<f64>, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (n, f) = x.dim();
    let svd = to_nalgebra(x).svd(true, true);
    let u: DMatrix<f64> = svd.u.expect("requested U");
    let vt: DMatrix<f64> = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut w = Array2::zeros((n, k));
    let mut h = Array2::zeros((k, f));
    for (j, &idx) in order.iter().take(k).enumerate() {
        let s = svd.singular_values[idx];
        let uc: Vec<f64> = u.column(idx).iter().copied().collect();
        let vr: Vec<f64> = vt.row(idx).iter().copied().collect();
        if j == 0 {
            for i in 0..n {
                w[[i, 0]] = s.sqrt() * uc[i].abs();
            }
            for c in 0..f {
                h[[0, c]] = s.sqrt() * vr[c].abs();
            }
            continue;
        }
        let pos = |v: &[f64]| v.iter().map(|&a| a.max(0.0)).collect::<Vec<_>>();
        let neg = |v: &[f64]| v.iter().map(|&a| (-a).max(0.0)).collect::<Vec<_>>();
        let nrm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let (xp, xn, yp, yn) = (pos(&uc), neg(&uc), pos(&vr), neg(&vr));
        let (xpn, xnn, ypn, ynn) = (nrm(&xp), nrm(&xn), nrm(&yp), nrm(&yn));
        let (mp, mn) = (xpn * ypn, xnn * ynn);
        let (uu, vv, sigma) = if mp > mn {
            (
                xp.iter().map(|a| a / xpn).collect::<Vec<_>>(),
                yp.iter().map(|a| a / ypn).collect::<Vec<_>>(),
                mp,
            )
        } else if mn > 0.0 {
            (
                xn.iter().map(|a| a / xnn).collect(),
                yn.iter().map(|a| a / ynn).collect(),
                mn,
            )
        } else {
            (vec![0.0; n], vec![0.0; f], 0.0)
        };
        let lbd = (s * sigma).sqrt();
        for i in 0..n {
            w[[i, j]] = lbd * uu[i];
        }
        for c in 0..f {
            h[[j, c]] = lbd * vv[c];
        }
    }
    w.mapv_inplace(|v| if v < INIT_EPS { 0.0 } else { v });
    h.mapv_inplace(|v| if v < INIT_EPS { 0.0 } else { v });

    let avg = x.mean().unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in w.iter_mut().chain(h.iter_mut()) {
        if *v == 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = (avg * z).abs() / 100.0;
        }
    }
    (w, h)
}

/// Frobenius NMF with multiplicative updates from an NNDSVD-ar start.
pub fn fit_nmf(x: &Array2<f64>, k: usize, config: &NmfConfig) -> Result<TopicModel> {
    let (n, f) = x.dim();
    if k == 0 || k > n.min(f) {
        return Err(AstraError::invalid(format!("NMF rank {k} must be in 1..={}", n.min(f))));
    }
    if x.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(AstraError::invalid("NMF input must be finite and nonnegative"));
    }
    let zero_rows: Vec<usize> = x
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().all(|&v| v == 0.0))
        .map(|(i, _)| i)
        .collect();
    if !zero_rows.is_empty() {
        log::warn!(
            "NMF input has {} all-zero rows; they get zero loadings",
            zero_rows.len()
        );
    }
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();

    let (mut w, mut h) = nndsvd_ar(x, k, config.seed);
    let mut trace = vec![frobenius(x, &w, &h)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        let wtx = w.t().dot(x);
        let wtwh = w.t().dot(&w).dot(&h);
        ndarray::Zip::from(&mut h)
            .and(&wtx)
            .and(&wtwh)
            .for_each(|hv, &num, &den| *hv *= num / den.max(DENOM_FLOOR));
        let xht = x.dot(&h.t());
        let whht = w.dot(&h.dot(&h.t()));
        ndarray::Zip::from(&mut w)
            .and(&xht)
            .and(&whht)
            .for_each(|wv, &num, &den| *wv *= num / den.max(DENOM_FLOOR));
        iterations += 1;
        let err = frobenius(x, &w, &h);
        let prev = *trace.last().expect("non-empty trace");
        trace.push(err);
        if (prev - err) / prev.max(f64::MIN_POSITIVE) < config.tol {
            converged = true;
            break;
        }
    }
    let err = *trace.last().expect("non-empty trace");
    Ok(TopicModel {
        w,
        h,
        k,
        reconstruction_error: err,
        relative_error: if x_norm > 0.0 { err / x_norm } else { 0.0 },
        error_trace: trace,
        iterations,
        converged,
        zero_rows,
    })
}

/// Fraction of distinct features among all topics' top lists.
pub fn topic_diversity(model: &TopicModel) -> f64 {
    let mut all = Vec::new();
    for t in 0..model.k {
        all.extend(model.top_features(t).into_iter().map(|(c, _)| c));
    }
    if all.is_empty() {
        return 0.0;
    }
    let total = all.len();
    all.sort_unstable();
    all.dedup();
    all.len() as f64 / total as f64
}

/// Mean cosine similarity over all pairs of topic basis rows.
pub fn mean_intertopic_cosine(model: &TopicModel) -> f64 {
    let k = model.k;
    if k < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            sum += cosine(model.h.row(a), model.h.row(b));
        }
    }
    sum / (k * (k - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCountRow {
    pub k: usize,
    pub reconstruction_error: f64,
    pub diversity: f64,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSelectionDiagnostics {
    pub rows: Vec<TopicCountRow>,
    /// Point of maximum distance below the chord of the normalized error curve.
    pub elbow: usize,
    /// Candidates considered: `k_min..=elbow + ELBOW_SLACK`.
    pub region: (usize, usize),
    pub k_star: usize,
    pub fallback: bool,
    pub max_cosine: f64,
    pub min_diversity: f64,
}

pub const ELBOW_SLACK: usize = 2;
pub const MAX_INTERTOPIC_COSINE: f64 = 0.02;
pub const MIN_DIVERSITY: f64 = 0.9;

/// Elbow of a decreasing curve by maximum distance below the chord after
/// min-max normalization of both axes; smallest `k` on ties.
pub fn error_elbow(ks: &[usize], errors: &[f64]) -> usize {
    let (lo, hi) = errors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &e| (l.min(e), h.max(e)));
    if ks.len() < 3 || !(hi > lo) {
        return ks[0];
    }
    let span = (ks[ks.len() - 1] - ks[0]) as f64;
    let mut best = (ks[0], f64::NEG_INFINITY);
    for (&k, &e) in ks.iter().zip(errors) {
        let x = (k - ks[0]) as f64 / span;
        let y = (e - lo) / (hi - lo);
        let d = (1.0 - x) - y;
        if d > best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Fits every `k` in the range (concurrently) and picks the smallest `k`
/// up to just past the error elbow whose topics are near-orthogonal and
/// diverse; falls back to the elbow itself with a warning.
pub fn select_topic_count(
    x: &Array2<f64>,
    k_range: std::ops::RangeInclusive<usize>,
    config: &NmfConfig,
) -> Result<TopicSelectionDiagnostics> {
    let cap = x.nrows().min(x.ncols());
    let ks: Vec<usize> = k_range.filter(|&k| k >= 1 && k <= cap).collect();
    if ks.is_empty() {
        return Err(AstraError::invalid(format!(
            "no topic count fits a {}x{} matrix",
            x.nrows(),
            x.ncols()
        )));
    }
    let rows = ks
        .par_iter()
        .map(|&k| {
            let m = fit_nmf(x, k, config)?;
            Ok(TopicCountRow {
                k,
                reconstruction_error: m.reconstruction_error,
                diversity: topic_diversity(&m),
                mean_cosine: mean_intertopic_cosine(&m),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = rows.iter().map(|r| r.reconstruction_error).collect();
    let elbow = error_elbow(&ks, &errors);
    let region = (ks[0], (elbow + ELBOW_SLACK).min(ks[ks.len() - 1]));
    let pick = rows.iter().find(|r| {
        r.k >= region.0 && r.k <= region.1 && r.mean_cosine < MAX_INTERTOPIC_COSINE && r.diversity >= MIN_DIVERSITY
    });
    let (k_star, fallback) = match pick {
        Some(r) => (r.k, false),
        None => {
            log::warn!(
                "no topic count in {}..={} has cosine < {MAX_INTERTOPIC_COSINE} and diversity >= {MIN_DIVERSITY}; using elbow k={elbow}",
                region.0,
                region.1
            );
            (elbow, true)
        }
    };
    Ok(TopicSelectionDiagnostics {
        rows,
        elbow,
        region,
        k_star,
        fallback,
        max_cosine: MAX_INTERTOPIC_COSINE,
        min_diversity: MIN_DIVERSITY,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDescriptor {
    pub feature: usize,
    pub axis: AxisId,
    pub codeword: usize,
    pub weight: f64,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicLabel {
    pub topic: usize,
    pub descriptors: Vec<TopicDescriptor>,
}

impl TopicLabel {
    pub fn text(&self) -> String {
        self.descriptors
            .iter()
            .map(|d| format!("{}:c{}", d.axis.key(), d.codeword))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Top (axis, codeword) descriptors per topic with a few member tokens of
/// each codeword (nearest the centroid when embeddings are available,
/// otherwise alphabetical).
pub fn label_topics(
    model: &TopicModel,
    columns: &[FeatureColumn],
    codebook: &Codebook,
    table: Option<&TokenEmbeddingTable>,
    tokens_per_codeword: usize,
) -> Result<Vec<TopicLabel>> {
    if columns.len() != model.h.ncols() {
        return Err(AstraError::DimensionMismatch {
            expected: model.h.ncols(),
            found: columns.len(),
            context: "feature columns for topic labels".into(),
        });
    }
    Ok((0..model.k)
        .map(|t| TopicLabel {
            topic: t,
            descriptors: model
                .top_features(t)
                .into_iter()
                .map(|(feature, weight)| {
                    let col = columns[feature];
                    let tokens = match table {
                        Some(tab) => codebook.representatives(col.codeword, tab, tokens_per_codeword),
                        None => codebook
                            .assignments
                            .iter()
                            .filter(|(_, &c)| c == col.codeword)
                            .take(tokens_per_codeword)
                            .map(|(t, _)| t.clone())
                            .collect(),
                    };
                    TopicDescriptor {
                        feature,
                        axis: col.axis,
                        codeword: col.codeword,
                        weight,
                        tokens,
                    }
                })
                .collect(),
        })
        .collect())
}

/// Topic weights normalized per institution so each row sums to 1
/// (all-zero rows stay zero).
pub fn normalized_loadings(model: &TopicModel) -> Array2<f64> {
    let mut w = model.w.clone();
    for mut row in w.axis_iter_mut(Axis(0)) {
        let s: f64 = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }
    w
}
