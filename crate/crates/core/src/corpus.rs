//! Corpus ingestion: validate line-delimited template records and build a
//! [`Snapshot`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::embedding::{toy_embed, DenseEmbedding, EmbeddingError, SparseEmbedding, Sparsifier};
use crate::intents::{GraphError, IntentGraph, IntentId, IntentPostings};
use crate::keyword::{FieldTexts, KeywordIndex};
use crate::snapshot::{DenseStore, Snapshot};
use crate::sparse_index::SparseIndex;
use crate::template::{Behavior, DocAttributes, License, TemplateRecord};
use crate::DocId;

/// A rejected record. The record is skipped; ingestion continues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: field `{}`: {}", self.line, self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub records: usize,
    pub indexed: usize,
    pub skipped: usize,
    pub errors: Vec<RecordError>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("intent graph: {0}")]
    Graph(#[from] GraphError),
    #[error("line {line}: embedding space `{space}` is not configured")]
    UnknownSpace { line: usize, space: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Loads the intent graph named by the config, or the built-in fixture.
pub fn load_graph(cfg: &EngineConfig) -> Result<IntentGraph, IngestError> {
    match &cfg.intent_graph {
        None => Ok(IntentGraph::fixture()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(IntentGraph::parse(&text)?)
        }
    }
}

/// Ingests a JSONL corpus file.
pub fn ingest(path: &Path, cfg: &EngineConfig) -> Result<(Snapshot, BuildReport), IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(std::io::BufReader::new(file), cfg, load_graph(cfg)?)
}

/// Ingests JSONL from any reader. Blank lines are ignored.
pub fn ingest_reader(
    reader: impl BufRead,
    cfg: &EngineConfig,
    graph: IntentGraph,
) -> Result<(Snapshot, BuildReport), IngestError> {
    let mut builder = Builder::new(cfg, graph)?;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: PathBuf::from("<corpus>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TemplateRecord>(&line) {
            Ok(rec) => builder.add(i + 1, &rec)?,
            Err(e) => builder.reject(i + 1, "record", e.to_string()),
        }
    }
    builder.finish()
}

/// Ingests in-memory records; record `i` is reported as line `i + 1`.
pub fn build(records: &[TemplateRecord], cfg: &EngineConfig) -> Result<(Snapshot, BuildReport), IngestError> {
    build_with_graph(records, cfg, load_graph(cfg)?)
}

pub fn build_with_graph(
    records: &[TemplateRecord],
    cfg: &EngineConfig,
    graph: IntentGraph,
) -> Result<(Snapshot, BuildReport), IngestError> {
    let mut builder = Builder::new(cfg, graph)?;
    for (i, rec) in records.iter().enumerate() {
        builder.add(i + 1, rec)?;
    }
    builder.finish()
}

/// Parses `YYYY-MM-DD`, or the date part of an RFC 3339 timestamp.
pub fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| chrono::DateTime::parse_from_rfc3339(s).map(|d| d.date_naive()))
        .map_err(|_| format!("`{s}` is not an ISO 8601 date"))
}

struct Builder {
    cfg: EngineConfig,
    graph: IntentGraph,
    ids: Vec<String>,
    seen: HashSet<String>,
    attrs: Vec<DocAttributes>,
    dense: BTreeMap<String, DenseStore>,
    sparse: SparseIndex,
    keyword: KeywordIndex,
    intents: IntentPostings,
    sparsifier: crate::embedding::RandomProjectionSparsifier,
    records: usize,
    errors: Vec<RecordError>,
}

struct Validated {
    attrs: DocAttributes,
    intents: BTreeSet<IntentId>,
    dense: Vec<(String, Vec<f64>)>,
    sparse: SparseEmbedding,
}

impl Builder {
    fn new(cfg: &EngineConfig, graph: IntentGraph) -> Result<Self, IngestError> {
        cfg.validate()?;
        let dense = cfg.spaces.iter().map(|s| (s.name.clone(), DenseStore::new(s.dense_dim))).collect();
        Ok(Self {
            sparse: SparseIndex::new(cfg.text_image()),
            sparsifier: crate::embedding::RandomProjectionSparsifier::new(cfg.text_image())?,
            cfg: cfg.clone(),
            graph,
            ids: Vec::new(),
            seen: HashSet::new(),
            attrs: Vec::new(),
            dense,
            keyword: KeywordIndex::new(),
            intents: IntentPostings::new(),
            records: 0,
            errors: Vec::new(),
        })
    }

    fn reject(&mut self, line: usize, field: &str, message: String) {
        self.records += 1;
        self.errors.push(RecordError {
            line,
            field: field.to_string(),
            message,
        });
    }

    fn add(&mut self, line: usize, rec: &TemplateRecord) -> Result<(), IngestError> {
        for space in rec.embeddings.keys() {
            if self.cfg.space(space).is_none() {
                return Err(IngestError::UnknownSpace {
                    line,
                    space: space.clone(),
                });
            }
        }
        match self.validate(rec) {
            Ok(v) => {
                self.records += 1;
                self.insert(rec, v);
            }
            Err((field, message)) => self.reject(line, field, message),
        }
        Ok(())
    }

    fn validate(&self, rec: &TemplateRecord) -> Result<Validated, (&'static str, String)> {
        if rec.id.trim().is_empty() {
            return Err(("id", "must not be empty".into()));
        }
        if self.seen.contains(&rec.id) {
            return Err(("id", format!("duplicate id `{}`", rec.id)));
        }
        if rec.title.trim().is_empty() {
            return Err(("title", "must not be empty".into()));
        }
        let date = parse_date(&rec.date).map_err(|m| ("date", m))?;
        let behavior: Behavior = rec.behavior.parse().map_err(|m| ("behavior", m))?;
        let license: License = rec.license.parse().map_err(|m| ("license", m))?;
        let mut intents = BTreeSet::new();
        for name in &rec.intents {
            let id = self.graph.resolve(name).ok_or_else(|| ("intents", format!("unknown intent `{name}`")))?;
            intents.insert(id);
        }

        let mut dense = Vec::with_capacity(self.cfg.spaces.len());
        let mut text_image = None;
        for space in &self.cfg.spaces {
            let emb = match rec.embeddings.get(&space.name) {
                Some(values) => DenseEmbedding::new(space, values.clone())
                    .and_then(|e| e.normalized())
                    .map_err(|e| ("embeddings", format!("space `{}`: {e}", space.name)))?,
                None => toy_embed(&rec.embedding_text(), space).map_err(|e| ("title", e.to_string()))?,
            };
            if space.name == self.cfg.text_image_space {
                text_image = Some(emb.clone());
            }
            dense.push((space.name.clone(), emb.into_values()));
        }
        let text_image = text_image.expect("text-image space is configured");
        let sparse = match &rec.sparse_embedding {
            Some(entries) => SparseEmbedding::new(self.cfg.text_image(), entries.clone())
                .map_err(|e| ("sparse_embedding", e.to_string()))?,
            None => self.sparsifier.sparsify(&text_image).map_err(|e| ("embeddings", e.to_string()))?,
        };

        Ok(Validated {
            attrs: DocAttributes {
                region: rec.region.clone(),
                language: rec.language.clone(),
                date,
                behavior,
                license,
                impressions: rec.impressions,
                clicks: rec.clicks,
                edits: rec.edits,
                exports: rec.exports,
            },
            intents,
            dense,
            sparse,
        })
    }

    fn insert(&mut self, rec: &TemplateRecord, v: Validated) {
        let doc = self.ids.len() as DocId;
        self.ids.push(rec.id.clone());
        self.seen.insert(rec.id.clone());
        self.attrs.push(v.attrs);
        for (space, values) in v.dense {
            self.dense.get_mut(&space).expect("configured space").push(&values);
        }
        self.sparse.insert(doc, &v.sparse).expect("fresh document in matching space");
        let texts = FieldTexts::from_parts(&rec.title, &rec.topics, &rec.mood, &rec.style);
        self.keyword.add_document(doc, &texts).expect("dense document ids");
        self.intents.add(doc, &v.intents);
    }

    fn finish(self) -> Result<(Snapshot, BuildReport), IngestError> {
        let report = BuildReport {
            records: self.records,
            indexed: self.ids.len(),
            skipped: self.errors.len(),
            errors: self.errors,
        };
        let snap = Snapshot::assemble(
            self.cfg,
            self.graph,
            self.ids,
            self.attrs,
            self.dense,
            self.sparse,
            self.keyword,
            self.intents,
        )?;
        Ok((snap, report))
    }
}
