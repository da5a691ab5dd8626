//! Token embedding tables, mean pooling, and the optional HTTP provider.
//!
//! Vector files are UTF-8 text. The first line is a header
//! `ASTRAVEC <version> <dim>`; every following non-empty line is one token
//! followed by exactly `dim` whitespace-separated `f32` values written in
//! shortest round-trip form:
//!
//! ```text
//! ASTRAVEC 1 4
//! critical 0.25 -0.5 0.125 1
//! discourse 0.1 0.2 0.3 0.4
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{AstraError, Result};

pub const VECTOR_FORMAT_MAGIC: &str = "ASTRAVEC";
pub const VECTOR_FORMAT_VERSION: u32 = 1;
pub const EMBED_URL_ENV: &str = "ASTRA_EMBED_URL";

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

/// Which corpus tokens the table does not cover.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub missing: Vec<String>,
}

impl TokenEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        TokenEmbeddingTable {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Tokens in lexicographic order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(AstraError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
                context: format!("token `{token}`"),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(AstraError::invalid(format!(
                "non-finite component in vector for `{token}`"
            )));
        }
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(AstraError::invalid(format!("invalid token `{token}`")));
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    pub fn coverage<'a>(&self, vocab: impl IntoIterator<Item = &'a String>) -> CoverageReport {
        let mut report = CoverageReport::default();
        let unique: BTreeSet<&String> = vocab.into_iter().collect();
        for t in unique {
            if self.contains(t) {
                report.covered += 1;
            } else {
                report.missing.push(t.clone());
            }
        }
        report
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{VECTOR_FORMAT_MAGIC} {VECTOR_FORMAT_VERSION} {}\n", self.dim);
        for (token, v) in &self.vectors {
            out.push_str(token);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Write the table atomically: a temporary sibling file is written and
    /// renamed over the destination.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| AstraError::io(parent, e))?;
            }
        }
        let tmp = tmp_sibling(path);
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| AstraError::io(&tmp, e))?;
            f.write_all(self.to_text().as_bytes())
                .and_then(|_| f.sync_all())
                .map_err(|e| AstraError::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| AstraError::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| AstraError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty vector file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != VECTOR_FORMAT_MAGIC {
            return Err(parse_err(1, format!("bad header `{header}`")));
        }
        let version: u32 = fields[1]
            .parse()
            .map_err(|_| parse_err(1, format!("bad version `{}`", fields[1])))?;
        if version != VECTOR_FORMAT_VERSION {
            return Err(parse_err(1, format!("unsupported version {version}")));
        }
        let dim: usize = fields[2]
            .parse()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| parse_err(1, format!("bad dimension `{}`", fields[2])))?;
        let mut table = TokenEmbeddingTable::new(dim);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default();
            let values = parts
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| parse_err(lineno, format!("unparseable value: {e}")))?;
            if values.len() != dim {
                return Err(AstraError::DimensionMismatch {
                    expected: dim,
                    found: values.len(),
                    context: format!("{}:{lineno}", path.display()),
                });
            }
            table
                .insert(token, values)
                .map_err(|e| parse_err(lineno, e.to_string()))?;
        }
        Ok(table)
    }
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn load_token_embeddings(path: impl AsRef<Path>) -> Result<TokenEmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AstraError::io(path, e))?;
    TokenEmbeddingTable::parse(&text, path)
}

/// Mean of the in-vocabulary token vectors, L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledAxis {
    pub vector: Array1<f64>,
    pub used: usize,
    pub out_of_vocabulary: usize,
}

/// Mean-pool a token list. Duplicate tokens count once per occurrence.
/// Returns `None` when no token is in the table.
pub fn pool_tokens(tokens: &[String], table: &TokenEmbeddingTable) -> Option<PooledAxis> {
    let mut sum = Array1::<f64>::zeros(table.dim());
    let mut used = 0;
    let mut oov = 0;
    for t in tokens {
        match table.get(t) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += f64::from(*x);
                }
                used += 1;
            }
            None => oov += 1,
        }
    }
    if used == 0 {
        return None;
    }
    sum.mapv_inplace(|v| v / used as f64);
    let n = sum.dot(&sum).sqrt();
    if n > 0.0 {
        sum.mapv_inplace(|v| v / n);
    }
    Some(PooledAxis {
        vector: sum,
        used,
        out_of_vocabulary: oov,
    })
}

/// Pool one (institution, axis) cell, failing when every token is missing.
pub fn pool_axis_embedding(
    institution: &str,
    axis: crate::corpus::AxisId,
    tokens: &[String],
    table: &TokenEmbeddingTable,
) -> Result<PooledAxis> {
    pool_tokens(tokens, table).ok_or_else(|| AstraError::AllOutOfVocabulary {
        institution: institution.to_string(),
        axis: axis.key().to_string(),
    })
}

/// Settings for the HTTP embedding provider.
///
/// The provider receives `POST {"tokens": [..]}` and answers
/// `{"vectors": [[..], ..]}` with one vector per token, in request order.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub max_retries: usize,
    pub base_delay: Duration,
    pub timeout: Duration,
    pub cache_path: PathBuf,
    pub expected_dim: Option<usize>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, cache_path: impl Into<PathBuf>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            batch_size: 64,
            max_retries: 4,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
            cache_path: cache_path.into(),
            expected_dim: None,
        }
    }

    /// Endpoint from `ASTRA_EMBED_URL`, if set.
    pub fn from_env(cache_path: impl Into<PathBuf>) -> Option<Self> {
        std::env::var(EMBED_URL_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .map(|url| RemoteConfig::new(url, cache_path))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Fetch vectors for `tokens`, consulting and then extending the local
/// cache. Tokens already cached cause no network traffic.
pub fn fetch_remote_embeddings(config: &RemoteConfig, tokens: &BTreeSet<String>) -> Result<TokenEmbeddingTable> {
    let mut cache = if config.cache_path.exists() {
        Some(load_token_embeddings(&config.cache_path)?)
    } else {
        None
    };
    let missing: Vec<String> = tokens
        .iter()
        .filter(|t| cache.as_ref().is_none_or(|c| !c.contains(t)))
        .cloned()
        .collect();

    if !missing.is_empty() {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let mut fetched: Vec<(String, Vec<f32>)> = Vec::with_capacity(missing.len());
        for batch in missing.chunks(config.batch_size.max(1)) {
            let vectors = post_with_retry(&agent, config, batch)?;
            fetched.extend(batch.iter().cloned().zip(vectors));
        }
        let dim = cache
            .as_ref()
            .map(|c| c.dim())
            .or(config.expected_dim)
            .unwrap_or_else(|| fetched[0].1.len());
        let table = cache.get_or_insert_with(|| TokenEmbeddingTable::new(dim));
        for (token, v) in fetched {
            table.insert(token, v).map_err(|e| match e {
                AstraError::DimensionMismatch { expected, found, .. } => AstraError::DimensionMismatch {
                    expected,
                    found,
                    context: "provider response".into(),
                },
                other => other,
            })?;
        }
        table.save(&config.cache_path)?;
    } else {
        log::info!("embedding cache hit for all {} tokens", tokens.len());
    }

    let cache = cache.unwrap_or_else(|| TokenEmbeddingTable::new(config.expected_dim.unwrap_or(1)));
    let mut out = TokenEmbeddingTable::new(cache.dim());
    for t in tokens {
        if let Some(v) = cache.get(t) {
            out.insert(t.clone(), v.to_vec())?;
        }
    }
    Ok(out)
}

fn post_with_retry(agent: &ureq::Agent, config: &RemoteConfig, batch: &[String]) -> Result<Vec<Vec<f32>>> {
    let attempts = config.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = config.base_delay * 2u32.saturating_pow(attempt as u32 - 1);
            std::thread::sleep(delay);
        }
        let result = agent
            .post(&config.endpoint)
            .send_json(EmbedRequest { tokens: batch })
            .and_then(|mut resp| resp.body_mut().read_json::<EmbedResponse>());
        match result {
            Ok(resp) => {
                if resp.vectors.len() != batch.len() {
                    return Err(AstraError::invalid(format!(
                        "provider returned {} vectors for {} tokens",
                        resp.vectors.len(),
                        batch.len()
                    )));
                }
                if let Some(dim) = config.expected_dim {
                    if let Some(bad) = resp.vectors.iter().find(|v| v.len() != dim) {
                        return Err(AstraError::DimensionMismatch {
                            expected: dim,
                            found: bad.len(),
                            context: "provider response".into(),
                        });
                    }
                }
                return Ok(resp.vectors);
            }
            Err(e) => {
                log::warn!("embedding request attempt {} failed: {e}", attempt + 1);
                last = e.to_string();
            }
        }
    }
    Err(AstraError::Transport {
        attempts,
        message: last,
    })
}
