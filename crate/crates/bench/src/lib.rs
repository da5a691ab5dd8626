//! Seeded inputs for the benchmarks, sized like a desk-scale corpus.

use astra_core::codebook::{build_codebook, quantize_corpus, CodebookConfig};
use astra_core::synthetic::{axis_centers, gaussian_blobs, planted_corpus, SyntheticSpec};
use astra_core::FeatureFamilies;
use ndarray::Array2;

/// Codebook features of a planted corpus with `n` institutions split over
/// four groups (rounded down to a multiple of four).
pub fn corpus_features(n: usize, seed: u64) -> Array2<f64> {
    let spec = SyntheticSpec {
        per_group: (n / 4).max(1),
        seed,
        ..Default::default()
    };
    let s = planted_corpus(&spec).expect("valid synthetic spec");
    let codebook = build_codebook(&s.table, &s.corpus.vocabulary(), &CodebookConfig::default()).expect("codebook");
    quantize_corpus(&s.corpus.token_lists(), &codebook, FeatureFamilies::Tfidf)
        .expect("quantize")
        .data
}

/// `k` Gaussian blobs of `per_blob` points in `dim` dimensions.
pub fn blobs(k: usize, per_blob: usize, dim: usize, seed: u64) -> Array2<f64> {
    gaussian_blobs(&axis_centers(k, dim, 10.0), per_blob, 1.0, seed).0
}
