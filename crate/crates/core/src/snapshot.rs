//! The immutable, fully built index and its single-file encoding.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic[8] | version u32 | section* | sha256[32] over everything before it
//! section = tag[4] | len u64 | payload[len] | sha256(payload)[32]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read};
use std::path::Path;
use std::sync::OnceLock;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use chrono::{Datelike, NaiveDate};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::embedding::{EmbeddingError, RandomProjectionSparsifier};
use crate::intents::{IntentGraph, IntentId, IntentPostings};
use crate::keyword::{FieldIndex, KeywordIndex};
use crate::ranking::DenseLookup;
use crate::sparse_index::{Posting, PostingList, SparseIndex};
use crate::template::{Behavior, DocAttributes, License};
use crate::DocId;

pub const MAGIC: &[u8; 8] = b"HYSRCH\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

fn corrupt(msg: impl Into<String>) -> SnapshotError {
    SnapshotError::CorruptSnapshot(msg.into())
}

/// Row-major unit-length vectors of one space, indexed by document.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStore {
    pub(crate) dim: usize,
    pub(crate) data: Vec<f64>,
}

impl DenseStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, doc: DocId) -> Option<&[f64]> {
        let start = doc as usize * self.dim;
        self.data.get(start..start + self.dim)
    }

    pub(crate) fn push(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dim);
        self.data.extend_from_slice(v);
    }
}

/// Everything a query needs, frozen after ingestion.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub(crate) config: EngineConfig,
    pub(crate) graph: IntentGraph,
    pub(crate) ids: Vec<String>,
    pub(crate) attrs: Vec<DocAttributes>,
    pub(crate) dense: BTreeMap<String, DenseStore>,
    pub(crate) sparse: SparseIndex,
    pub(crate) keyword: KeywordIndex,
    pub(crate) intents: IntentPostings,
    pub(crate) sparsifier: RandomProjectionSparsifier,
    pub(crate) digest: OnceLock<String>,
}

impl DenseLookup for Snapshot {
    fn dense(&self, space: &str, doc: DocId) -> Option<&[f64]> {
        self.dense.get(space)?.get(doc)
    }
}

impl Snapshot {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        config: EngineConfig,
        graph: IntentGraph,
        ids: Vec<String>,
        attrs: Vec<DocAttributes>,
        dense: BTreeMap<String, DenseStore>,
        sparse: SparseIndex,
        keyword: KeywordIndex,
        intents: IntentPostings,
    ) -> Result<Self, EmbeddingError> {
        let sparsifier = RandomProjectionSparsifier::new(config.text_image())?;
        Ok(Self {
            config,
            graph,
            ids,
            attrs,
            dense,
            sparse,
            keyword,
            intents,
            sparsifier,
            digest: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn graph(&self) -> &IntentGraph {
        &self.graph
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn external_id(&self, doc: DocId) -> Option<&str> {
        self.ids.get(doc as usize).map(String::as_str)
    }

    pub fn doc_id(&self, external: &str) -> Option<DocId> {
        self.ids.iter().position(|i| i == external).map(|p| p as DocId)
    }

    pub fn attributes(&self, doc: DocId) -> Option<&DocAttributes> {
        self.attrs.get(doc as usize)
    }

    pub fn dense_store(&self, space: &str) -> Option<&DenseStore> {
        self.dense.get(space)
    }

    pub fn sparse_index(&self) -> &SparseIndex {
        &self.sparse
    }

    pub fn keyword_index(&self) -> &KeywordIndex {
        &self.keyword
    }

    pub fn intent_postings(&self) -> &IntentPostings {
        &self.intents
    }

    pub fn sparsifier(&self) -> &RandomProjectionSparsifier {
        &self.sparsifier
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LE>(FORMAT_VERSION).unwrap();
        section(&mut out, b"CONF", |w| {
            put_bytes(w, &serde_json::to_vec(&self.config).expect("config serializes"))
        });
        section(&mut out, b"GRPH", |w| put_str(w, &self.graph.to_tsv()));
        section(&mut out, b"DOCS", |w| self.encode_docs(w));
        section(&mut out, b"DENS", |w| self.encode_dense(w));
        section(&mut out, b"SPRS", |w| self.encode_sparse(w));
        section(&mut out, b"KWIX", |w| self.encode_keyword(w));
        section(&mut out, b"INTP", |w| self.encode_intents(w));
        let total = Sha256::digest(&out);
        out.extend_from_slice(&total);
        out
    }

    /// Hex SHA-256 of the encoded snapshot, computed once.
    pub fn digest(&self) -> &str {
        self.digest.get_or_init(|| hex::encode(Sha256::digest(self.encode())))
    }

    /// Replaces query-time settings. Settings baked into the indexes (the
    /// embedding spaces and which of them plays which role) must not change.
    pub fn reconfigure(&mut self, cfg: EngineConfig) -> Result<(), String> {
        cfg.validate().map_err(|e| e.to_string())?;
        if cfg.spaces != self.config.spaces
            || cfg.text_image_space != self.config.text_image_space
            || cfg.intent_space != self.config.intent_space
        {
            return Err("embedding spaces are fixed at ingestion".into());
        }
        self.config = cfg;
        self.digest = OnceLock::new();
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SnapshotError> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing magic header"));
        }
        let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if found != FORMAT_VERSION {
            return Err(SnapshotError::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 12 + 32 {
            return Err(corrupt("truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(corrupt("file checksum mismatch"));
        }
        let mut sections = BTreeMap::new();
        let mut r = Cursor::new(&body[12..]);
        while (r.position() as usize) < r.get_ref().len() {
            let mut tag = [0u8; 4];
            r.read_exact(&mut tag).map_err(eof)?;
            let len = r.read_u64::<LE>().map_err(eof)? as usize;
            let start = r.position() as usize;
            let payload = r.get_ref().get(start..start.saturating_add(len)).ok_or_else(|| corrupt("section overruns file"))?;
            let mut sum = [0u8; 32];
            r.set_position((start + len) as u64);
            r.read_exact(&mut sum).map_err(eof)?;
            if Sha256::digest(payload).as_slice() != sum {
                return Err(corrupt(format!("checksum mismatch in section {}", String::from_utf8_lossy(&tag))));
            }
            sections.insert(tag, payload);
        }
        let get = |tag: &[u8; 4]| {
            sections
                .get(tag)
                .map(|p| Cursor::new(*p))
                .ok_or_else(|| corrupt(format!("missing section {}", String::from_utf8_lossy(tag))))
        };

        let config: EngineConfig = serde_json::from_slice(&get_bytes(&mut get(b"CONF")?)?)
            .map_err(|e| corrupt(format!("config: {e}")))?;
        config.validate().map_err(|e| corrupt(e.to_string()))?;
        let graph = IntentGraph::parse(&get_str(&mut get(b"GRPH")?)?).map_err(|e| corrupt(format!("graph: {e}")))?;
        let (ids, attrs) = decode_docs(&mut get(b"DOCS")?)?;
        let n = ids.len();
        let dense = decode_dense(&mut get(b"DENS")?, &config, n)?;
        let sparse = decode_sparse(&mut get(b"SPRS")?, &config, n)?;
        let keyword = decode_keyword(&mut get(b"KWIX")?, n)?;
        let intents = decode_intents(&mut get(b"INTP")?, n, graph.len())?;
        Self::assemble(config, graph, ids, attrs, dense, sparse, keyword, intents).map_err(|e| corrupt(e.to_string()))
    }

    fn encode_docs(&self, w: &mut Vec<u8>) {
        w.write_u32::<LE>(self.ids.len() as u32).unwrap();
        for (id, a) in self.ids.iter().zip(&self.attrs) {
            put_str(w, id);
            put_str(w, &a.region);
            put_str(w, &a.language);
            w.write_i32::<LE>(a.date.num_days_from_ce()).unwrap();
            w.write_u8(a.behavior.code()).unwrap();
            w.write_u8(a.license.code()).unwrap();
            for c in [a.impressions, a.clicks, a.edits, a.exports] {
                w.write_u64::<LE>(c).unwrap();
            }
        }
    }

    fn encode_dense(&self, w: &mut Vec<u8>) {
        w.write_u32::<LE>(self.dense.len() as u32).unwrap();
        for (name, store) in &self.dense {
            put_str(w, name);
            w.write_u32::<LE>(store.dim as u32).unwrap();
            w.write_u64::<LE>(store.data.len() as u64).unwrap();
            for &x in &store.data {
                w.write_f64::<LE>(x).unwrap();
            }
        }
    }

    fn encode_sparse(&self, w: &mut Vec<u8>) {
        put_str(w, &self.sparse.space);
        w.write_u32::<LE>(self.sparse.lists.len() as u32).unwrap();
        w.write_u32::<LE>(self.sparse.docs.len() as u32).unwrap();
        for &d in &self.sparse.docs {
            w.write_u32::<LE>(d).unwrap();
        }
        for list in &self.sparse.lists {
            w.write_u32::<LE>(list.postings.len() as u32).unwrap();
            for p in &list.postings {
                w.write_u32::<LE>(p.doc).unwrap();
                w.write_f64::<LE>(p.weight).unwrap();
            }
        }
    }

    fn encode_keyword(&self, w: &mut Vec<u8>) {
        w.write_u32::<LE>(self.keyword.doc_count).unwrap();
        for field in &self.keyword.fields {
            w.write_u64::<LE>(field.total_len).unwrap();
            for &l in &field.doc_len {
                w.write_u32::<LE>(l).unwrap();
            }
            w.write_u32::<LE>(field.postings.len() as u32).unwrap();
            for (term, postings) in &field.postings {
                put_str(w, term);
                w.write_u32::<LE>(postings.len() as u32).unwrap();
                for &(d, tf) in postings {
                    w.write_u32::<LE>(d).unwrap();
                    w.write_u32::<LE>(tf).unwrap();
                }
            }
        }
    }

    fn encode_intents(&self, w: &mut Vec<u8>) {
        w.write_u32::<LE>(self.intents.lists.len() as u32).unwrap();
        for (intent, docs) in &self.intents.lists {
            w.write_u32::<LE>(*intent).unwrap();
            w.write_u32::<LE>(docs.len() as u32).unwrap();
            for &d in docs {
                w.write_u32::<LE>(d).unwrap();
            }
        }
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], body: impl FnOnce(&mut Vec<u8>)) {
    let mut payload = Vec::new();
    body(&mut payload);
    out.extend_from_slice(tag);
    out.write_u64::<LE>(payload.len() as u64).unwrap();
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
}

fn put_bytes(w: &mut Vec<u8>, b: &[u8]) {
    w.write_u32::<LE>(b.len() as u32).unwrap();
    w.extend_from_slice(b);
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_bytes(w, s.as_bytes());
}

type Reader<'a> = Cursor<&'a [u8]>;

fn eof(_: std::io::Error) -> SnapshotError {
    corrupt("unexpected end of data")
}

fn get_u32(r: &mut Reader<'_>) -> Result<u32, SnapshotError> {
    r.read_u32::<LE>().map_err(eof)
}

fn get_u64(r: &mut Reader<'_>) -> Result<u64, SnapshotError> {
    r.read_u64::<LE>().map_err(eof)
}

fn get_f64(r: &mut Reader<'_>) -> Result<f64, SnapshotError> {
    r.read_f64::<LE>().map_err(eof)
}

/// A length prefix, rejected when it promises more items than bytes remain.
fn get_len(r: &mut Reader<'_>, item_bytes: usize) -> Result<usize, SnapshotError> {
    let n = get_u32(r)? as usize;
    check_len(r, n, item_bytes)?;
    Ok(n)
}

fn check_len(r: &Reader<'_>, n: usize, item_bytes: usize) -> Result<(), SnapshotError> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n.saturating_mul(item_bytes) > remaining {
        return Err(corrupt("length prefix exceeds data"));
    }
    Ok(())
}

fn get_bytes(r: &mut Reader<'_>) -> Result<Vec<u8>, SnapshotError> {
    let n = get_len(r, 1)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(eof)?;
    Ok(buf)
}

fn get_str(r: &mut Reader<'_>) -> Result<String, SnapshotError> {
    String::from_utf8(get_bytes(r)?).map_err(|_| corrupt("invalid utf-8"))
}

fn get_doc(r: &mut Reader<'_>, n: usize) -> Result<DocId, SnapshotError> {
    let d = get_u32(r)?;
    if d as usize >= n {
        return Err(corrupt(format!("document {d} out of range")));
    }
    Ok(d)
}

fn decode_docs(r: &mut Reader<'_>) -> Result<(Vec<String>, Vec<DocAttributes>), SnapshotError> {
    let n = get_len(r, 4)?;
    let mut ids = Vec::with_capacity(n);
    let mut attrs = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(get_str(r)?);
        let region = get_str(r)?;
        let language = get_str(r)?;
        let days = r.read_i32::<LE>().map_err(eof)?;
        let date = NaiveDate::from_num_days_from_ce_opt(days).ok_or_else(|| corrupt("bad date"))?;
        let behavior = Behavior::from_code(r.read_u8().map_err(eof)?).ok_or_else(|| corrupt("bad behavior"))?;
        let license = License::from_code(r.read_u8().map_err(eof)?).ok_or_else(|| corrupt("bad license"))?;
        attrs.push(DocAttributes {
            region,
            language,
            date,
            behavior,
            license,
            impressions: get_u64(r)?,
            clicks: get_u64(r)?,
            edits: get_u64(r)?,
            exports: get_u64(r)?,
        });
    }
    Ok((ids, attrs))
}

fn decode_dense(r: &mut Reader<'_>, cfg: &EngineConfig, n: usize) -> Result<BTreeMap<String, DenseStore>, SnapshotError> {
    let count = get_len(r, 1)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name = get_str(r)?;
        let dim = get_u32(r)? as usize;
        let len = get_u64(r)? as usize;
        let space = cfg.space(&name).ok_or_else(|| corrupt(format!("unknown space `{name}`")))?;
        if dim != space.dense_dim || len != dim * n {
            return Err(corrupt(format!("dense store `{name}` has the wrong shape")));
        }
        check_len(r, len, 8)?;
        let mut data = vec![0.0; len];
        r.read_f64_into::<LE>(&mut data).map_err(eof)?;
        out.insert(name, DenseStore { dim, data });
    }
    for s in &cfg.spaces {
        if !out.contains_key(&s.name) {
            return Err(corrupt(format!("no dense store for space `{}`", s.name)));
        }
    }
    Ok(out)
}

fn decode_sparse(r: &mut Reader<'_>, cfg: &EngineConfig, n: usize) -> Result<SparseIndex, SnapshotError> {
    let space = get_str(r)?;
    if space != cfg.text_image_space {
        return Err(corrupt("sparse index space differs from config"));
    }
    let dims = get_u32(r)? as usize;
    if dims != cfg.text_image().sparse_dim {
        return Err(corrupt("sparse dimension differs from config"));
    }
    let ndocs = get_len(r, 4)?;
    let mut docs = BTreeSet::new();
    for _ in 0..ndocs {
        docs.insert(get_doc(r, n)?);
    }
    let mut lists = Vec::with_capacity(dims);
    for _ in 0..dims {
        let len = get_len(r, 12)?;
        let mut postings = Vec::with_capacity(len);
        for _ in 0..len {
            let doc = get_doc(r, n)?;
            let weight = get_f64(r)?;
            if !(weight.is_finite() && weight > 0.0) || postings.last().is_some_and(|p: &Posting| p.doc >= doc) {
                return Err(corrupt("invalid posting list"));
            }
            postings.push(Posting { doc, weight });
        }
        lists.push(PostingList { postings });
    }
    Ok(SparseIndex { space, lists, docs })
}

fn decode_keyword(r: &mut Reader<'_>, n: usize) -> Result<KeywordIndex, SnapshotError> {
    let doc_count = get_u32(r)?;
    if doc_count as usize != n {
        return Err(corrupt("keyword index document count differs"));
    }
    let mut fields: [FieldIndex; 4] = Default::default();
    for field in &mut fields {
        field.total_len = get_u64(r)?;
        check_len(r, n, 4)?;
        field.doc_len = (0..n).map(|_| get_u32(r)).collect::<Result<_, _>>()?;
        let terms = get_len(r, 4)?;
        for _ in 0..terms {
            let term = get_str(r)?;
            let len = get_len(r, 8)?;
            let mut postings = Vec::with_capacity(len);
            for _ in 0..len {
                postings.push((get_doc(r, n)?, get_u32(r)?));
            }
            field.postings.insert(term, postings);
        }
    }
    Ok(KeywordIndex { fields, doc_count })
}

fn decode_intents(r: &mut Reader<'_>, n: usize, graph_len: usize) -> Result<IntentPostings, SnapshotError> {
    let count = get_len(r, 8)?;
    let mut lists = BTreeMap::new();
    for _ in 0..count {
        let intent: IntentId = get_u32(r)?;
        if intent as usize >= graph_len {
            return Err(corrupt(format!("intent {intent} out of range")));
        }
        let len = get_len(r, 4)?;
        let docs = (0..len).map(|_| get_doc(r, n)).collect::<Result<Vec<_>, _>>()?;
        lists.insert(intent, docs);
    }
    Ok(IntentPostings { lists })
}
