//! Core algorithms for mapping institutions described along eight conceptual
//! axes: tokenization and embedding ingestion, codebook quantization, UMAP
//! projection, clustering with composite model selection, NMF topics and
//! neighbor-entropy boundary analysis, plus the JSON bundle exporter.

pub mod analysis;
pub mod cluster;
pub mod codebook;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod export;
pub mod linalg;
pub mod manifold;
pub mod synthetic;
pub mod topics;

pub use analysis::{BoundaryReport, ShuffleMode};
pub use cluster::{Algorithm, ClusterSolution, ClusterSpec, CompositeWeights, QualityScores};
pub use codebook::{Codebook, CodebookConfig, FeatureFamilies, FeatureMatrix};
pub use corpus::{AxisId, Corpus, InstitutionProfile};
pub use embed::TokenEmbeddingTable;
pub use error::{AstraError, Result};
pub use export::{ExplorerBundle, PipelineConfig};
pub use manifold::{ManifoldConfig, Metric, Projection};
pub use topics::{TopicModel, TopicSelectionDiagnostics};
