//! Pipeline configuration, the resumable end-to-end run, and the explorer
//! bundle.
//!
//! A run directory holds `config.json` (the resolved configuration), one
//! `stages/<stage>.json` artifact per completed stage, `metrics.json`, and
//! the bundle `astra_bundle.json`. Each artifact records a key chained from
//! the upstream keys and the stage's own settings; a rerun reuses every
//! artifact whose key still matches.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{neighbor_entropy, similarity_topk, BoundaryReport, Neighbor, DEFAULT_K_SET};
use crate::cluster::{run_sweep, Algorithm, ClusterSolution, ClusterSpec, QualityScores, SweepConfig, SweepReport};
use crate::codebook::{build_codebook, quantize_corpus, Codebook, CodebookConfig, FeatureFamilies, FeatureMatrix};
use crate::corpus::{load_corpus, Corpus};
use crate::embed::{
    fetch_remote_embeddings, load_token_embeddings, CoverageReport, RemoteConfig, TokenEmbeddingTable, EMBED_URL_ENV,
};
use crate::error::{AstraError, Result};
use crate::manifold::{umap_project, ManifoldConfig, Projection};
use crate::topics::{
    fit_nmf, label_topics, normalized_loadings, select_topic_count, NmfConfig, TopicLabel, TopicModel,
    TopicSelectionDiagnostics,
};

pub const BUNDLE_FILE: &str = "astra_bundle.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const STAGES_DIR: &str = "stages";
pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
/// JSON Schema for [`ExplorerBundle`] documents.
pub const BUNDLE_SCHEMA: &str = include_str!("../schema/astra_bundle.schema.json");
pub const PALETTE_SIZE: usize = 12;

pub const STAGES: [&str; 11] = [
    "corpus",
    "embed",
    "codebook",
    "features",
    "manifold4d",
    "sweep",
    "select",
    "topics",
    "boundary",
    "manifold2d",
    "export",
];

/// Topic count: chosen by the selection rule or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopicCount {
    #[default]
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for TopicCount {
    type Err = AstraError;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(TopicCount::Auto);
        }
        s.parse::<usize>()
            .map(TopicCount::Fixed)
            .map_err(|_| AstraError::invalid(format!("topic count must be 'auto' or an integer, got '{s}'")))
    }
}

impl Serialize for TopicCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TopicCount::Auto => s.serialize_str("auto"),
            TopicCount::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TopicCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(TopicCount::Fixed(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsConfig {
    pub k: TopicCount,
    pub k_min: usize,
    pub k_max: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig {
            k: TopicCount::Auto,
            k_min: 3,
            k_max: 20,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Similarity links per institution in the bundle.
    pub k_links: usize,
    /// Neighbors for the boundary entropy.
    pub k_nn: usize,
    pub k_set: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            k_links: 5,
            k_nn: 10,
            k_set: DEFAULT_K_SET.to_vec(),
        }
    }
}

/// Everything a run depends on. All stage seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    /// Token vector file. When absent, the HTTP provider is used.
    pub embeddings: Option<PathBuf>,
    pub embed_endpoint: Option<String>,
    pub features: FeatureFamilies,
    pub codebook: CodebookConfig,
    /// Settings of the clustering projection; the display projection uses
    /// the same with two output dimensions.
    pub manifold: ManifoldConfig,
    pub sweep: SweepConfig,
    pub topics: TopicsConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            corpus: PathBuf::from("corpus.json"),
            embeddings: None,
            embed_endpoint: None,
            features: FeatureFamilies::Tfidf,
            codebook: CodebookConfig::default(),
            manifold: ManifoldConfig::default(),
            sweep: SweepConfig::default(),
            topics: TopicsConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config types serialize")
}

impl PipelineConfig {
    /// Parse TOML; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| AstraError::Config(e.to_string()))?;
        if cfg.corpus.is_relative() {
            cfg.corpus = base_dir.join(&cfg.corpus);
        }
        if let Some(p) = cfg.embeddings.as_mut().filter(|p| p.is_relative()) {
            *p = base_dir.join(&*p);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AstraError::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| AstraError::Config(e.to_string()))
    }

    /// Copy with every stage seed derived from the root seed.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.codebook.rng_seed = self.seed;
        c.manifold.rng_seed = self.seed;
        c.sweep.kmeans_seed = self.seed;
        c
    }

    pub fn display_manifold(&self) -> ManifoldConfig {
        ManifoldConfig {
            out_dims: 2,
            rng_seed: self.seed.wrapping_add(1),
            ..self.manifold.clone()
        }
    }

    pub fn nmf(&self) -> NmfConfig {
        NmfConfig {
            max_iter: self.topics.max_iter,
            tol: self.topics.tol,
            seed: self.seed,
        }
    }

    /// SHA-256 over the canonical JSON of the seeded configuration.
    pub fn config_hash(&self) -> String {
        sha256_hex(&json_bytes(&self.seeded()))
    }

    fn embedding_endpoint(&self) -> Option<String> {
        self.embed_endpoint
            .clone()
            .or_else(|| std::env::var(EMBED_URL_ENV).ok().filter(|s| !s.is_empty()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Artifact<T> {
    stage: String,
    key: String,
    data: T,
}

/// Whether a stage was recomputed or taken from its artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Cached,
    Computed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub stages: Vec<(String, StageStatus)>,
    pub bundle_path: PathBuf,
    pub metrics_path: PathBuf,
}

impl RunReport {
    pub fn status(&self, stage: &str) -> Option<StageStatus> {
        self.stages.iter().find(|(s, _)| s == stage).map(|(_, st)| *st)
    }

    pub fn summary(&self) -> String {
        self.stages
            .iter()
            .map(|(s, st)| {
                format!(
                    "{s:<11} {}",
                    if *st == StageStatus::Cached {
                        "cached"
                    } else {
                        "computed"
                    }
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn stage_path(run_dir: &Path, stage: &str) -> PathBuf {
    run_dir.join(STAGES_DIR).join(format!("{stage}.json"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| AstraError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| AstraError::io(path, e))
}

fn read_artifact<T: DeserializeOwned>(run_dir: &Path, stage: &str) -> Result<Artifact<T>> {
    let path = stage_path(run_dir, stage);
    if !path.exists() {
        return Err(AstraError::MissingStage(stage.to_string()));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| AstraError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Load a stage artifact regardless of its key.
pub fn load_stage<T: DeserializeOwned>(run_dir: &Path, stage: &str) -> Result<T> {
    Ok(read_artifact(run_dir, stage)?.data)
}

struct Runner<'a> {
    dir: &'a Path,
    statuses: Vec<(String, StageStatus)>,
    key: String,
}

impl Runner<'_> {
    /// Run or reuse one stage. `settings` are the stage's own inputs
    /// beyond the upstream chain.
    fn stage<T, S, F>(&mut self, name: &str, settings: &S, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        S: Serialize,
        F: FnOnce() -> Result<T>,
    {
        let mut material = self.key.clone().into_bytes();
        material.extend_from_slice(name.as_bytes());
        material.extend(json_bytes(settings));
        let key = sha256_hex(&material);
        self.key = key.clone();
        if let Ok(art) = read_artifact::<T>(self.dir, name) {
            if art.key == key {
                log::info!("stage {name}: cache hit");
                self.statuses.push((name.to_string(), StageStatus::Cached));
                return Ok(art.data);
            }
        }
        log::info!("stage {name}: running");
        let data = compute().map_err(|e| e.in_stage(name))?;
        let art = Artifact {
            stage: name.to_string(),
            key,
            data,
        };
        write_atomic(&stage_path(self.dir, name), &serde_json::to_vec(&art)?)?;
        self.statuses.push((name.to_string(), StageStatus::Computed));
        Ok(art.data)
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| AstraError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub dim: usize,
    pub tokens: usize,
    pub coverage: CoverageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub candidate: usize,
    pub solution: ClusterSolution,
    pub scores: QualityScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicsArtifact {
    pub model: TopicModel,
    pub diagnostics: Option<TopicSelectionDiagnostics>,
    pub labels: Vec<TopicLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryArtifact {
    pub links: Vec<Vec<Neighbor>>,
    pub report: BoundaryReport,
}

/// The embedding table for the corpus vocabulary, from the configured
/// file or the HTTP provider (cached under `cache_dir`).
pub fn resolve_embeddings(cfg: &PipelineConfig, corpus: &Corpus, cache_dir: &Path) -> Result<TokenEmbeddingTable> {
    let vocab = corpus.vocabulary();
    let full = match (&cfg.embeddings, cfg.embedding_endpoint()) {
        (Some(path), _) => load_token_embeddings(path)?,
        (None, Some(url)) => {
            fetch_remote_embeddings(&RemoteConfig::new(url, cache_dir.join("remote_cache.vec")), &vocab)?
        }
        (None, None) => {
            return Err(AstraError::Config(format!(
                "no embedding source: set `embeddings` or `embed_endpoint`, or export {EMBED_URL_ENV}"
            )))
        }
    };
    let mut table = TokenEmbeddingTable::new(full.dim());
    for t in &vocab {
        if let Some(v) = full.get(t) {
            table.insert(t.clone(), v.to_vec())?;
        }
    }
    Ok(table)
}

/// Execute (or resume) the full pipeline into `run_dir`.
pub fn run_pipeline(config: &PipelineConfig, run_dir: &Path) -> Result<RunReport> {
    let cfg = config.seeded();
    let stages_dir = run_dir.join(STAGES_DIR);
    std::fs::create_dir_all(&stages_dir).map_err(|e| AstraError::io(&stages_dir, e))?;
    let snapshot = serde_json::to_vec_pretty(&cfg)?;
    write_atomic(&run_dir.join(CONFIG_SNAPSHOT), &snapshot)?;

    let mut r = Runner {
        dir: run_dir,
        statuses: Vec::new(),
        key: String::new(),
    };

    let corpus_digest = file_digest(&cfg.corpus)?;
    let corpus: Corpus = r.stage("corpus", &corpus_digest, || {
        let c = load_corpus(&cfg.corpus)?;
        log::info!("loaded {} institutions: {:?}", c.len(), c.type_histogram());
        Ok(c)
    })?;

    let embed_source = match &cfg.embeddings {
        Some(p) => file_digest(p)?,
        None => cfg.embedding_endpoint().unwrap_or_default(),
    };
    let vec_path = stages_dir.join("embed.vec");
    let summary: EmbedSummary = r.stage("embed", &embed_source, || {
        let table = resolve_embeddings(&cfg, &corpus, &stages_dir)?;
        let coverage = table.coverage(&corpus.vocabulary());
        if !coverage.missing.is_empty() {
            log::warn!("{} corpus tokens have no embedding", coverage.missing.len());
        }
        table.save(&vec_path)?;
        Ok(EmbedSummary {
            dim: table.dim(),
            tokens: table.len(),
            coverage,
        })
    })?;
    let table = load_token_embeddings(&vec_path).map_err(|e| e.in_stage("embed"))?;
    if table.dim() != summary.dim {
        return Err(AstraError::MissingStage("embed".into()));
    }

    let codebook: Codebook = r.stage("codebook", &cfg.codebook, || {
        build_codebook(&table, &corpus.vocabulary(), &cfg.codebook)
    })?;

    let token_lists = corpus.token_lists();
    let features: FeatureMatrix = r.stage("features", &cfg.features, || {
        quantize_corpus(&token_lists, &codebook, cfg.features)
    })?;

    let proj4: Projection = r.stage("manifold4d", &cfg.manifold, || {
        umap_project(&features.data, &cfg.manifold)
    })?;

    let sweep: SweepReport = r.stage("sweep", &cfg.sweep, || {
        let report = run_sweep(&proj4.coords, &cfg.sweep)?;
        let tsv = run_dir.join("sweep.tsv");
        std::fs::write(&tsv, report.to_table()).map_err(|e| AstraError::io(&tsv, e))?;
        Ok(report)
    })?;

    let selection: Selection = r.stage("select", &(), || {
        let idx = sweep.ranking[0].index;
        let best = &sweep.candidates[idx];
        Ok(Selection {
            candidate: idx,
            solution: best.solution.clone(),
            scores: best
                .scores
                .ok_or_else(|| AstraError::Degenerate("best candidate has no scores".into()))?,
        })
    })?;

    let topics: TopicsArtifact = r.stage("topics", &(&cfg.topics, cfg.seed), || {
        let x = &features.data;
        let nmf = cfg.nmf();
        let (k, diagnostics) = match cfg.topics.k {
            TopicCount::Fixed(k) => (k, None),
            TopicCount::Auto => {
                let d = select_topic_count(x, cfg.topics.k_min..=cfg.topics.k_max, &nmf)?;
                (d.k_star, Some(d))
            }
        };
        let model = fit_nmf(x, k, &nmf)?;
        let labels = label_topics(&model, &features.columns, &codebook, Some(&table), 5)?;
        Ok(TopicsArtifact {
            model,
            diagnostics,
            labels,
        })
    })?;

    let boundary: BoundaryArtifact = r.stage("boundary", &cfg.analysis, || {
        let n = features.nrows();
        let cap = |k: usize, what: &str| {
            if k >= n {
                log::warn!("{what}={k} capped to {}", n - 1);
            }
            k.min(n - 1)
        };
        Ok(BoundaryArtifact {
            links: similarity_topk(&features.data, cap(cfg.analysis.k_links, "k_links"))?,
            report: neighbor_entropy(
                &features.data,
                &selection.solution.labels,
                cap(cfg.analysis.k_nn, "k_nn"),
            )?,
        })
    })?;

    let display = cfg.display_manifold();
    let _proj2: Projection = r.stage("manifold2d", &display, || umap_project(&features.data, &display))?;

    let config_hash = cfg.config_hash();
    let _: String = r.stage("export", &config_hash, || {
        export_bundle(run_dir)?;
        Ok(BUNDLE_FILE.to_string())
    })?;
    let bundle_path = run_dir.join(BUNDLE_FILE);
    if !bundle_path.exists() {
        export_bundle(run_dir)?;
    }

    let metrics = RunMetrics {
        config_hash: config_hash.clone(),
        n_institutions: corpus.len(),
        codebook_k: codebook.k(),
        retained_variance: codebook.retained_variance(),
        feature_density: features.density(),
        selected: SelectedSummary::new(&selection),
        best_per_algorithm: sweep
            .best_per_algorithm
            .iter()
            .map(|(&alg, &i)| {
                (
                    alg,
                    sweep.candidates[i].scores.as_ref().map_or(f64::NAN, |s| s.composite),
                )
            })
            .collect(),
        k_topics: topics.model.k,
        topic_relative_error: topics.model.relative_error,
        boundary_count: boundary.report.boundary_set().len(),
        stages: r.statuses.clone(),
    };
    let metrics_path = run_dir.join(METRICS_FILE);
    write_atomic(&metrics_path, &serde_json::to_vec_pretty(&metrics)?)?;

    Ok(RunReport {
        run_dir: run_dir.to_path_buf(),
        config_hash,
        stages: r.statuses,
        bundle_path,
        metrics_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSummary {
    pub algorithm: Algorithm,
    pub spec: ClusterSpec,
    pub k: usize,
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
    pub composite: f64,
    pub noise_fraction: f64,
}

impl SelectedSummary {
    fn new(sel: &Selection) -> Self {
        SelectedSummary {
            algorithm: sel.solution.algorithm(),
            spec: sel.solution.spec.clone(),
            k: sel.solution.k_effective,
            silhouette: sel.scores.silhouette,
            calinski_harabasz: sel.scores.calinski_harabasz,
            davies_bouldin: sel.scores.davies_bouldin,
            composite: sel.scores.composite,
            noise_fraction: sel.solution.noise_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub n_institutions: usize,
    pub codebook_k: usize,
    pub retained_variance: f64,
    pub feature_density: f64,
    pub selected: SelectedSummary,
    pub best_per_algorithm: BTreeMap<Algorithm, f64>,
    pub k_topics: usize,
    pub topic_relative_error: f64,
    pub boundary_count: usize,
    pub stages: Vec<(String, StageStatus)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub generator: String,
    pub feature_families: FeatureFamilies,
    pub n_institutions: usize,
    pub k_topics: usize,
    pub k_links: usize,
    pub k_nn: usize,
    pub selected: SelectedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRef {
    pub label: i32,
    /// Color slot; `None` for noise points.
    pub palette: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarRef {
    pub id: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRef {
    pub entropy: f64,
    pub flag: bool,
    pub distinct_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInstitution {
    pub id: String,
    pub name: String,
    pub primary_type: String,
    pub secondary_type: Option<String>,
    pub country: String,
    pub founding_year: i32,
    #[serde(with = "crate::corpus::axis_map")]
    pub axis_texts: [String; 8],
    pub coords2d: [f64; 2],
    pub cluster: ClusterRef,
    pub topic_weights: Vec<f64>,
    pub dominant_topic: usize,
    pub top_similar: Vec<SimilarRef>,
    pub boundary: BoundaryRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleCluster {
    pub label: i32,
    pub size: usize,
    pub palette: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleDescriptor {
    pub axis: String,
    pub codeword: usize,
    pub weight: f64,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleTopic {
    pub index: usize,
    pub label: String,
    pub descriptors: Vec<BundleDescriptor>,
}

/// The single file consumed by the explorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorerBundle {
    pub schema_version: u32,
    pub run_metadata: RunMetadata,
    pub institutions: Vec<BundleInstitution>,
    pub clusters: Vec<BundleCluster>,
    pub topics: Vec<BundleTopic>,
}

fn palette(label: i32) -> Option<usize> {
    usize::try_from(label).ok().map(|l| l % PALETTE_SIZE)
}

impl ExplorerBundle {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Referential and numeric invariants the explorer relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AstraError::invalid(format!("bundle: {m}")));
        let ids: std::collections::BTreeSet<&str> = self.institutions.iter().map(|i| i.id.as_str()).collect();
        if ids.len() != self.institutions.len() {
            return bad("duplicate institution id".into());
        }
        let k = self.run_metadata.k_topics;
        for inst in &self.institutions {
            if inst.coords2d.iter().any(|v| !v.is_finite()) {
                return bad(format!("non-finite coordinates for {}", inst.id));
            }
            if inst.topic_weights.len() != k {
                return bad(format!(
                    "{} has {} topic weights, expected {k}",
                    inst.id,
                    inst.topic_weights.len()
                ));
            }
            if let Some(s) = inst.top_similar.iter().find(|s| !ids.contains(s.id.as_str())) {
                return bad(format!("{} links to unknown id {}", inst.id, s.id));
            }
        }
        if self.topics.len() != k {
            return bad(format!("{} topics listed, expected {k}", self.topics.len()));
        }
        Ok(())
    }
}

/// The seeded configuration snapshot a run was produced with.
pub fn load_run_config(run_dir: &Path) -> Result<PipelineConfig> {
    let snapshot = run_dir.join(CONFIG_SNAPSHOT);
    if !snapshot.exists() {
        return Err(AstraError::MissingStage("config".into()));
    }
    let text = std::fs::read_to_string(&snapshot).map_err(|e| AstraError::io(&snapshot, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Assemble the bundle from the stage artifacts in `run_dir` and write
/// it to `run_dir/astra_bundle.json`.
pub fn export_bundle(run_dir: &Path) -> Result<ExplorerBundle> {
    let cfg = load_run_config(run_dir)?;
    let corpus: Corpus = load_stage(run_dir, "corpus")?;
    let selection: Selection = load_stage(run_dir, "select")?;
    let topics: TopicsArtifact = load_stage(run_dir, "topics")?;
    let boundary: BoundaryArtifact = load_stage(run_dir, "boundary")?;
    let proj2: Projection = load_stage(run_dir, "manifold2d")?;
    let bundle = build_bundle(&cfg, &corpus, &selection, &topics, &boundary, &proj2)?;
    write_atomic(&run_dir.join(BUNDLE_FILE), bundle.to_json()?.as_bytes())?;
    Ok(bundle)
}

pub fn build_bundle(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    selection: &Selection,
    topics: &TopicsArtifact,
    boundary: &BoundaryArtifact,
    proj2: &Projection,
) -> Result<ExplorerBundle> {
    let n = corpus.len();
    let labels = &selection.solution.labels;
    for (what, len) in [
        ("cluster labels", labels.len()),
        ("topic loadings", topics.model.w.nrows()),
        ("similarity links", boundary.links.len()),
        ("boundary entries", boundary.report.entries.len()),
        ("2-D coordinates", proj2.coords.nrows()),
    ] {
        if len != n {
            return Err(AstraError::DimensionMismatch {
                expected: n,
                found: len,
                context: what.into(),
            });
        }
    }
    if proj2.coords.ncols() != 2 {
        return Err(AstraError::invalid("display projection must be 2-D"));
    }
    let weights = normalized_loadings(&topics.model);
    let dominant = topics.model.dominant_topics();
    let institutions = corpus
        .institutions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let b = &boundary.report.entries[i];
            BundleInstitution {
                id: p.id.clone(),
                name: p.name.clone(),
                primary_type: p.primary_type.clone(),
                secondary_type: p.secondary_type.clone(),
                country: p.country.clone(),
                founding_year: p.founding_year,
                axis_texts: p.axes.clone(),
                coords2d: [proj2.coords[[i, 0]], proj2.coords[[i, 1]]],
                cluster: ClusterRef {
                    label: labels[i],
                    palette: palette(labels[i]),
                },
                topic_weights: weights.row(i).to_vec(),
                dominant_topic: dominant[i],
                top_similar: boundary.links[i]
                    .iter()
                    .map(|nb| SimilarRef {
                        id: corpus.institutions[nb.index].id.clone(),
                        cosine: nb.similarity,
                    })
                    .collect(),
                boundary: BoundaryRef {
                    entropy: b.entropy,
                    flag: b.boundary,
                    distinct_clusters: b.distinct_clusters,
                },
            }
        })
        .collect();
    let mut sizes: BTreeMap<i32, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    let bundle = ExplorerBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        run_metadata: RunMetadata {
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            generator: format!("astra-core {}", env!("CARGO_PKG_VERSION")),
            feature_families: cfg.features,
            n_institutions: n,
            k_topics: topics.model.k,
            k_links: boundary.links.first().map_or(0, Vec::len),
            k_nn: boundary.report.k_nn,
            selected: SelectedSummary::new(selection),
        },
        institutions,
        clusters: sizes
            .into_iter()
            .map(|(label, size)| BundleCluster {
                label,
                size,
                palette: palette(label),
            })
            .collect(),
        topics: topics
            .labels
            .iter()
            .map(|t| BundleTopic {
                index: t.topic,
                label: t.text(),
                descriptors: t
                    .descriptors
                    .iter()
                    .map(|d| BundleDescriptor {
                        axis: d.axis.key().to_string(),
                        codeword: d.codeword,
                        weight: d.weight,
                        tokens: d.tokens.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn topic_count_parses_both_forms() {
        #[derive(Deserialize)]
        struct T {
            k: TopicCount,
        }
        assert_eq!(toml::from_str::<T>("k = 7").unwrap().k, TopicCount::Fixed(7));
        assert_eq!(toml::from_str::<T>("k = \"auto\"").unwrap().k, TopicCount::Auto);
        assert!(toml::from_str::<T>("k = \"many\"").is_err());
    }

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let text = "seed = 9\ncorpus = \"data/c.json\"\nembeddings = \"data/t.vec\"\nfeatures = \"both\"\n[manifold]\nn_neighbors = 5\n[topics]\nk = 4\n";
        let cfg = PipelineConfig::from_toml_str(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.corpus, PathBuf::from("/base/data/c.json"));
        assert_eq!(cfg.embeddings, Some(PathBuf::from("/base/data/t.vec")));
        assert_eq!(cfg.features, FeatureFamilies::Both);
        assert_eq!(cfg.manifold.n_neighbors, 5);
        assert_eq!(cfg.manifold.n_epochs, 500);
        assert_eq!(cfg.topics.k, TopicCount::Fixed(4));
        let again = PipelineConfig::from_toml_str(&cfg.to_toml().unwrap(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(
            PipelineConfig::from_toml_str("seed = \"x\"", Path::new(".")),
            Err(AstraError::Config(_))
        ));
    }

    #[test]
    fn seeds_follow_the_root_seed() {
        let cfg = PipelineConfig {
            seed: 77,
            ..Default::default()
        }
        .seeded();
        assert_eq!(cfg.codebook.rng_seed, 77);
        assert_eq!(cfg.manifold.rng_seed, 77);
        assert_eq!(cfg.sweep.kmeans_seed, 77);
        assert_eq!(cfg.display_manifold().rng_seed, 78);
    }

    #[test]
    fn missing_stage_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_stage::<Corpus>(dir.path(), "topics").unwrap_err();
        assert_eq!(err.to_string(), "missing stage: topics");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hash_changes_iff_config_changes(seed in 41u64..44, k_links in 4usize..7, epochs in 499usize..502, min_dist in 0u8..2) {
            let base = PipelineConfig::default();
            let mut other = base.clone();
            other.seed = seed;
            other.analysis.k_links = k_links;
            other.manifold.n_epochs = epochs;
            other.manifold.min_dist = f64::from(min_dist) / 10.0;
            let same = other.seeded() == base.seeded();
            prop_assert_eq!(same, other.config_hash() == base.config_hash());
            let mut again = other.clone();
            again.sweep.k_max += 1;
            prop_assert_ne!(again.config_hash(), other.config_hash());
        }
    }
}
