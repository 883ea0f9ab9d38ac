//! Template records as they arrive in a corpus file, and the validated
//! per-document attributes the engine keeps after ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Still,
    Animated,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum License {
    Free,
    Premium,
}

impl FromStr for Behavior {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "still" => Ok(Self::Still),
            "animated" => Ok(Self::Animated),
            "video" => Ok(Self::Video),
            other => Err(format!("`{other}` is not one of still, animated, video")),
        }
    }
}

impl FromStr for License {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "free" => Ok(Self::Free),
            "premium" => Ok(Self::Premium),
            other => Err(format!("`{other}` is not one of free, premium")),
        }
    }
}

impl Behavior {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Still => "still",
            Self::Animated => "animated",
            Self::Video => "video",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        [Self::Still, Self::Animated, Self::Video].get(code as usize).copied()
    }
}

impl License {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Free => "free",
            Self::Premium => "premium",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        [Self::Free, Self::Premium].get(code as usize).copied()
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for License {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Region value that matches every region filter.
pub const REGION_ALL: &str = "all";

/// One corpus line. Field names are the wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRecord {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub mood: Vec<String>,
    #[serde(default)]
    pub style: Vec<String>,
    pub region: String,
    pub language: String,
    pub date: String,
    pub behavior: String,
    pub license: String,
    #[serde(default)]
    pub intents: Vec<String>,
    /// Dense vectors keyed by embedding-space name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embeddings: BTreeMap<String, Vec<f64>>,
    /// Sparse `(dimension, weight)` pairs for the text-image space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse_embedding: Option<Vec<(u32, f64)>>,
    #[serde(default)]
    pub impressions: u64,
    #[serde(default)]
    pub clicks: u64,
    #[serde(default)]
    pub edits: u64,
    #[serde(default)]
    pub exports: u64,
}

impl TemplateRecord {
    /// A still, free, English template for every region, dated 2023-12-12,
    /// with no topics, intents, embeddings or counters.
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            topics: Vec::new(),
            mood: Vec::new(),
            style: Vec::new(),
            region: REGION_ALL.into(),
            language: "en".into(),
            date: "2023-12-12".into(),
            behavior: "still".into(),
            license: "free".into(),
            intents: Vec::new(),
            embeddings: BTreeMap::new(),
            sparse_embedding: None,
            impressions: 0,
            clicks: 0,
            edits: 0,
            exports: 0,
        }
    }

    /// Text the fallback embedder sees: title followed by topics.
    pub fn embedding_text(&self) -> String {
        let mut text = self.title.clone();
        for t in &self.topics {
            text.push(' ');
            text.push_str(t);
        }
        text
    }
}

/// Filterable and rankable attributes of an indexed template.
#[derive(Debug, Clone, PartialEq)]
pub struct DocAttributes {
    pub region: String,
    pub language: String,
    pub date: NaiveDate,
    pub behavior: Behavior,
    pub license: License,
    pub impressions: u64,
    pub clicks: u64,
    pub edits: u64,
    pub exports: u64,
}

impl DocAttributes {
    pub fn engagement(&self) -> u64 {
        self.exports.saturating_add(self.edits)
    }
}
