//! Institution records, the eight conceptual axes, and the axis-text
//! tokenizer.
//!
//! Input is a JSON array (or JSON Lines, one record per line) of objects:
//!
//! ```json
//! {
//!   "id": "ars-electronica",
//!   "name": "Ars Electronica",
//!   "primary_type": "Festival",
//!   "secondary_type": "Center",
//!   "country": "AT",
//!   "founding_year": 1979,
//!   "axes": {
//!     "curatorial_philosophy": "...",
//!     "territorial_relation": "...",
//!     "knowledge_production": "...",
//!     "institutional_genealogy": "...",
//!     "temporal_orientation": "...",
//!     "ecosystem_function": "...",
//!     "audience_relation": "...",
//!     "disciplinary_positioning": "..."
//!   }
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{AstraError, Result};

/// One of the eight conceptual axes. The ordinal order is fixed and is the
/// column-group order of every feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisId {
    CuratorialPhilosophy,
    TerritorialRelation,
    KnowledgeProduction,
    InstitutionalGenealogy,
    TemporalOrientation,
    EcosystemFunction,
    AudienceRelation,
    DisciplinaryPositioning,
}

impl AxisId {
    pub const COUNT: usize = 8;

    pub const ALL: [AxisId; 8] = [
        AxisId::CuratorialPhilosophy,
        AxisId::TerritorialRelation,
        AxisId::KnowledgeProduction,
        AxisId::InstitutionalGenealogy,
        AxisId::TemporalOrientation,
        AxisId::EcosystemFunction,
        AxisId::AudienceRelation,
        AxisId::DisciplinaryPositioning,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AxisId> {
        Self::ALL.get(i).copied()
    }

    /// Key used in input records.
    pub fn key(self) -> &'static str {
        match self {
            AxisId::CuratorialPhilosophy => "curatorial_philosophy",
            AxisId::TerritorialRelation => "territorial_relation",
            AxisId::KnowledgeProduction => "knowledge_production",
            AxisId::InstitutionalGenealogy => "institutional_genealogy",
            AxisId::TemporalOrientation => "temporal_orientation",
            AxisId::EcosystemFunction => "ecosystem_function",
            AxisId::AudienceRelation => "audience_relation",
            AxisId::DisciplinaryPositioning => "disciplinary_positioning",
        }
    }

    pub fn from_key(key: &str) -> Option<AxisId> {
        Self::ALL.iter().copied().find(|a| a.key() == key)
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AxisId::CuratorialPhilosophy => "Curatorial Philosophy",
            AxisId::TerritorialRelation => "Territorial Relation",
            AxisId::KnowledgeProduction => "Knowledge Production",
            AxisId::InstitutionalGenealogy => "Institutional Genealogy",
            AxisId::TemporalOrientation => "Temporal Orientation",
            AxisId::EcosystemFunction => "Ecosystem Function",
            AxisId::AudienceRelation => "Audience Relation",
            AxisId::DisciplinaryPositioning => "Disciplinary Positioning",
        }
    }
}

impl fmt::Display for AxisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Primary types with known meaning. Other values load with a warning.
pub const KNOWN_TYPES: [&str; 10] = [
    "Festival",
    "Conference",
    "Center",
    "University",
    "Lab",
    "Biennial",
    "Residency",
    "Education",
    "Award",
    "Other",
];

pub const MIN_FOUNDING_YEAR: i32 = 1500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionProfile {
    pub id: String,
    pub name: String,
    pub primary_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_type: Option<String>,
    pub country: String,
    pub founding_year: i32,
    #[serde(with = "axis_map")]
    pub axes: [String; 8],
}

impl InstitutionProfile {
    pub fn axis_text(&self, axis: AxisId) -> &str {
        &self.axes[axis.index()]
    }

    /// Eight token lists in axis order.
    pub fn token_lists(&self) -> Vec<Vec<String>> {
        self.axes.iter().map(|t| tokenize_axis(t)).collect()
    }
}

pub(crate) mod axis_map {
    use super::AxisId;
    use serde::de::Error;
    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(axes: &[String; 8], s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(8))?;
        for axis in AxisId::ALL {
            map.serialize_entry(axis.key(), &axes[axis.index()])?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[String; 8], D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        let mut out: [String; 8] = Default::default();
        for (key, text) in raw {
            let axis = AxisId::from_key(&key).ok_or_else(|| D::Error::custom(format!("unknown axis `{key}`")))?;
            out[axis.index()] = text;
        }
        Ok(out)
    }
}

/// A validated, immutable set of institutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub institutions: Vec<InstitutionProfile>,
}

// Records are deserialized loosely first so that a missing axis can be
// reported by name rather than as a generic serde error.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    name: Option<String>,
    primary_type: Option<String>,
    secondary_type: Option<String>,
    country: Option<String>,
    founding_year: Option<serde_json::Value>,
    #[serde(default)]
    axes: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new(institutions: Vec<InstitutionProfile>) -> Result<Self> {
        if institutions.is_empty() {
            return Err(AstraError::NoRecords("<memory>".into()));
        }
        let corpus = Corpus { institutions };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.institutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.institutions.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.institutions.iter().map(|p| p.id.as_str()).collect()
    }

    pub fn type_histogram(&self) -> BTreeMap<String, usize> {
        let mut hist = BTreeMap::new();
        for p in &self.institutions {
            *hist.entry(p.primary_type.clone()).or_insert(0) += 1;
        }
        hist
    }

    /// Token lists for every institution, `[institution][axis]`.
    pub fn token_lists(&self) -> Vec<Vec<Vec<String>>> {
        self.institutions.iter().map(|p| p.token_lists()).collect()
    }

    /// Sorted set of all tokens in the corpus.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.token_lists().into_iter().flatten().flatten().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let max_year = current_year();
        let mut seen = HashSet::new();
        for p in &self.institutions {
            if p.id.trim().is_empty() {
                return Err(validation(&p.name, "id", "empty id"));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(validation(&p.id, "id", "duplicate id"));
            }
            if !(MIN_FOUNDING_YEAR..=max_year).contains(&p.founding_year) {
                return Err(validation(
                    &p.id,
                    "founding_year",
                    &format!("{} outside [{MIN_FOUNDING_YEAR}, {max_year}]", p.founding_year),
                ));
            }
            for axis in AxisId::ALL {
                if p.axis_text(axis).trim().is_empty() {
                    return Err(validation(
                        &p.id,
                        &format!("axes.{}", axis.key()),
                        "missing or empty axis text",
                    ));
                }
            }
            if !KNOWN_TYPES.contains(&p.primary_type.as_str()) {
                log::warn!("institution {}: unrecognized primary_type `{}`", p.id, p.primary_type);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.institutions)?)
    }
}

fn validation(record: &str, field: &str, message: &str) -> AstraError {
    AstraError::Validation {
        record: record.to_string(),
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn current_year() -> i32 {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    1970 + (secs / 31_556_952) as i32
}

/// Load and validate a corpus file (JSON array or JSON Lines).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AstraError::io(path, e))?;
    let corpus = parse_corpus(&text, path)?;
    log::info!(
        "loaded {} institutions from {}: {:?}",
        corpus.len(),
        path.display(),
        corpus.type_histogram()
    );
    Ok(corpus)
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let trimmed = text.trim_start();
    let mut raws: Vec<(usize, serde_json::Value)> = Vec::new();
    if trimmed.is_empty() {
        return Err(AstraError::NoRecords(path.to_path_buf()));
    }
    if trimmed.starts_with('[') {
        let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| AstraError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        raws.extend(values.into_iter().enumerate().map(|(i, v)| (i + 1, v)));
    } else {
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v = serde_json::from_str(line).map_err(|e| AstraError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
            raws.push((lineno + 1, v));
        }
    }
    if raws.is_empty() {
        return Err(AstraError::NoRecords(path.to_path_buf()));
    }
    let institutions = raws
        .into_iter()
        .map(|(ordinal, v)| record_from_value(ordinal, v, path))
        .collect::<Result<Vec<_>>>()?;
    let corpus = Corpus { institutions };
    corpus.validate()?;
    Ok(corpus)
}

fn record_from_value(ordinal: usize, v: serde_json::Value, path: &Path) -> Result<InstitutionProfile> {
    let raw: RawRecord = serde_json::from_value(v).map_err(|e| AstraError::Parse {
        path: path.to_path_buf(),
        line: ordinal,
        message: e.to_string(),
    })?;
    let label = raw.id.clone().unwrap_or_else(|| format!("#{ordinal}"));
    let required = |value: Option<String>, field: &str| value.ok_or_else(|| validation(&label, field, "missing field"));
    let id = required(raw.id.clone(), "id")?;
    let name = required(raw.name, "name")?;
    let primary_type = required(raw.primary_type, "primary_type")?;
    let country = required(raw.country, "country")?;
    let founding_year = match raw.founding_year {
        Some(serde_json::Value::Number(n)) => n
            .as_i64()
            .and_then(|y| i32::try_from(y).ok())
            .ok_or_else(|| validation(&label, "founding_year", "malformed year"))?,
        Some(serde_json::Value::String(s)) => s
            .trim()
            .parse::<i32>()
            .map_err(|_| validation(&label, "founding_year", "malformed year"))?,
        Some(_) => return Err(validation(&label, "founding_year", "malformed year")),
        None => return Err(validation(&label, "founding_year", "missing field")),
    };
    let mut axes: [String; 8] = Default::default();
    for (key, text) in raw.axes {
        let axis = AxisId::from_key(&key).ok_or_else(|| validation(&label, &format!("axes.{key}"), "unknown axis"))?;
        axes[axis.index()] = text;
    }
    for axis in AxisId::ALL {
        if axes[axis.index()].trim().is_empty() {
            return Err(validation(
                &label,
                &format!("axes.{}", axis.key()),
                "missing or empty axis text",
            ));
        }
    }
    Ok(InstitutionProfile {
        id,
        name,
        primary_type,
        secondary_type: raw.secondary_type,
        country,
        founding_year,
        axes,
    })
}

pub const MIN_TOKEN_CHARS: usize = 3;

/// The committed stopword list.
pub fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        include_str!("stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Lowercase, split on non-alphanumeric characters, drop tokens shorter
/// than three characters and stopwords. Order and duplicates are kept.
pub fn tokenize_axis(text: &str) -> Vec<String> {
    let stop = stopwords();
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= MIN_TOKEN_CHARS && !stop.contains(t))
        .map(str::to_string)
        .collect()
}
