//! Creative intent graph: a hierarchical taxonomy of intents with surface
//! forms, lexical intent extraction, and intent-overlap recovery for pages
//! with too few organic results.
//!
//! Graph files are tab-separated, one node per line:
//!
//! ```text
//! id <TAB> label <TAB> parent_id (may be empty) <TAB> synonym|synonym|...
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Parents may be
//! declared after their children.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::keyword::tokenize;
use crate::DocId;

pub type IntentId = u32;

/// The graph shipped with the crate (~100 nodes).
pub const FIXTURE_GRAPH: &str = include_str!("../data/ckg_fixture.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("intent graph line {line}: {kind}")]
pub struct GraphError {
    pub line: usize,
    pub kind: GraphErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphErrorKind {
    #[error("expected 2 to 4 tab-separated fields, found {0}")]
    MalformedLine(usize),
    #[error("empty id")]
    EmptyId,
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("label of `{0}` is empty after normalization")]
    EmptyLabel(String),
    #[error("parent `{parent}` of `{id}` does not exist")]
    UnknownParent { id: String, parent: String },
    #[error("node `{0}` is part of a parent cycle")]
    Cycle(String),
    #[error("surface `{surface}` is repeated on node `{id}`")]
    DuplicateSynonym { id: String, surface: String },
    #[error("surface `{surface}` maps to both `{first}` and `{second}`")]
    AmbiguousSurface {
        surface: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentNode {
    pub id: String,
    /// Canonical label: lowercase tokens joined by single spaces.
    pub label: String,
    pub parent: Option<IntentId>,
    /// Labels from the root down to and including this node.
    pub path: Vec<String>,
    /// Normalized surface forms other than the label.
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentGraph {
    nodes: Vec<IntentNode>,
    by_id: HashMap<String, IntentId>,
    surface_map: HashMap<String, IntentId>,
    max_span: usize,
}

fn normalize_surface(s: &str) -> String {
    tokenize(s).join(" ")
}

impl IntentGraph {
    pub fn fixture() -> Self {
        Self::parse(FIXTURE_GRAPH).expect("bundled intent graph is valid")
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        struct Raw<'a> {
            line: usize,
            id: &'a str,
            label: String,
            parent: Option<&'a str>,
            synonyms: Vec<String>,
        }
        let err = |line, kind| GraphError { line, kind };

        let mut raws: Vec<Raw> = Vec::new();
        let mut by_id: HashMap<String, IntentId> = HashMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw_line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if !(2..=4).contains(&fields.len()) {
                return Err(err(line, GraphErrorKind::MalformedLine(fields.len())));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(err(line, GraphErrorKind::EmptyId));
            }
            let label = normalize_surface(fields[1]);
            if label.is_empty() {
                return Err(err(line, GraphErrorKind::EmptyLabel(id.to_string())));
            }
            let parent = fields.get(2).map(|p| p.trim()).filter(|p| !p.is_empty());
            let mut synonyms = Vec::new();
            if let Some(syns) = fields.get(3) {
                let mut seen: HashSet<String> = HashSet::from([label.clone()]);
                for s in syns.split('|').map(normalize_surface).filter(|s| !s.is_empty()) {
                    if !seen.insert(s.clone()) {
                        return Err(err(
                            line,
                            GraphErrorKind::DuplicateSynonym {
                                id: id.to_string(),
                                surface: s,
                            },
                        ));
                    }
                    synonyms.push(s);
                }
            }
            if by_id.insert(id.to_string(), raws.len() as IntentId).is_some() {
                return Err(err(line, GraphErrorKind::DuplicateId(id.to_string())));
            }
            raws.push(Raw {
                line,
                id,
                label,
                parent,
                synonyms,
            });
        }

        let mut parents: Vec<Option<IntentId>> = Vec::with_capacity(raws.len());
        for r in &raws {
            let parent = match r.parent {
                None => None,
                Some(p) => Some(*by_id.get(p).ok_or_else(|| {
                    err(
                        r.line,
                        GraphErrorKind::UnknownParent {
                            id: r.id.to_string(),
                            parent: p.to_string(),
                        },
                    )
                })?),
            };
            parents.push(parent);
        }

        let mut nodes = Vec::with_capacity(raws.len());
        for (i, r) in raws.iter().enumerate() {
            let mut path = vec![r.label.clone()];
            let mut cursor = parents[i];
            let mut steps = 0;
            while let Some(p) = cursor {
                steps += 1;
                if p as usize == i || steps > raws.len() {
                    return Err(err(r.line, GraphErrorKind::Cycle(r.id.to_string())));
                }
                path.push(raws[p as usize].label.clone());
                cursor = parents[p as usize];
            }
            path.reverse();
            nodes.push(IntentNode {
                id: r.id.to_string(),
                label: r.label.clone(),
                parent: parents[i],
                path,
                synonyms: r.synonyms.clone(),
            });
        }

        let mut surface_map: HashMap<String, IntentId> = HashMap::new();
        let mut max_span = 0;
        for (i, (node, r)) in nodes.iter().zip(&raws).enumerate() {
            for surface in std::iter::once(&node.label).chain(&node.synonyms) {
                if let Some(&other) = surface_map.get(surface) {
                    return Err(err(
                        r.line,
                        GraphErrorKind::AmbiguousSurface {
                            surface: surface.clone(),
                            first: nodes[other as usize].id.clone(),
                            second: node.id.clone(),
                        },
                    ));
                }
                surface_map.insert(surface.clone(), i as IntentId);
                max_span = max_span.max(surface.split(' ').count());
            }
        }
        Ok(Self {
            nodes,
            by_id,
            surface_map,
            max_span,
        })
    }

    /// Serializes back to the tab-separated format. `parse(to_tsv())` yields
    /// an equal graph.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            let parent = node.parent.map(|p| self.nodes[p as usize].id.as_str()).unwrap_or("");
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                node.id,
                node.label,
                parent,
                node.synonyms.join("|")
            ));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[IntentNode] {
        &self.nodes
    }

    pub fn node(&self, id: IntentId) -> Option<&IntentNode> {
        self.nodes.get(id as usize)
    }

    pub fn id_of(&self, node_id: &str) -> Option<IntentId> {
        self.by_id.get(node_id).copied()
    }

    pub fn lookup_surface(&self, surface: &str) -> Option<IntentId> {
        self.surface_map.get(&normalize_surface(surface)).copied()
    }

    /// Resolves a node id, falling back to a surface form.
    pub fn resolve(&self, name: &str) -> Option<IntentId> {
        self.id_of(name.trim()).or_else(|| self.lookup_surface(name))
    }

    /// Iterates `(surface, node)` pairs in unspecified order.
    pub fn surfaces(&self) -> impl Iterator<Item = (&str, IntentId)> {
        self.surface_map.iter().map(|(s, &id)| (s.as_str(), id))
    }

    /// Greedy left-to-right longest match of the text's tokens against every
    /// label and synonym.
    pub fn extract_intents(&self, text: &str) -> BTreeSet<IntentId> {
        self.extract_from_tokens(&tokenize(text))
    }

    pub fn extract_from_tokens(&self, tokens: &[String]) -> BTreeSet<IntentId> {
        let mut found = BTreeSet::new();
        let mut i = 0;
        'scan: while i < tokens.len() {
            let longest = self.max_span.min(tokens.len() - i);
            for len in (1..=longest).rev() {
                let key = tokens[i..i + len].join(" ");
                if let Some(&id) = self.surface_map.get(&key) {
                    found.insert(id);
                    i += len;
                    continue 'scan;
                }
            }
            i += 1;
        }
        found
    }
}

/// Document lists per intent, for recovery.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntentPostings {
    pub(crate) lists: BTreeMap<IntentId, Vec<DocId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recovered {
    pub doc: DocId,
    pub shared_intents: usize,
}

impl IntentPostings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, doc: DocId, intents: &BTreeSet<IntentId>) {
        for &intent in intents {
            let list = self.lists.entry(intent).or_default();
            match list.binary_search(&doc) {
                Ok(_) => {}
                Err(at) => list.insert(at, doc),
            }
        }
    }

    pub fn docs_with(&self, intent: IntentId) -> &[DocId] {
        self.lists.get(&intent).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Documents outside `exclude`, accepted by `keep`, sharing at least one
    /// intent with the query; ordered by shared-intent count descending,
    /// then ascending id.
    pub fn recover(
        &self,
        query_intents: &BTreeSet<IntentId>,
        exclude: &HashSet<DocId>,
        keep: &dyn Fn(DocId) -> bool,
        limit: usize,
    ) -> Vec<Recovered> {
        let mut counts: BTreeMap<DocId, usize> = BTreeMap::new();
        for intent in query_intents {
            for &doc in self.docs_with(*intent) {
                if !exclude.contains(&doc) {
                    *counts.entry(doc).or_default() += 1;
                }
            }
        }
        let mut out: Vec<Recovered> = counts
            .into_iter()
            .filter(|(doc, _)| keep(*doc))
            .map(|(doc, shared_intents)| Recovered { doc, shared_intents })
            .collect();
        out.sort_by(|a, b| b.shared_intents.cmp(&a.shared_intents).then(a.doc.cmp(&b.doc)));
        out.truncate(limit);
        out
    }
}
