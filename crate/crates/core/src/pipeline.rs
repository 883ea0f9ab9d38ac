//! Query planning and execution over a [`Snapshot`].
//!
//! Short queries take the hybrid route: keyword recall and sparse-embedding
//! recall are unioned, filtered, scored by the first-round ranker and the
//! top of the list is rescored with dense cosine. Long queries score every
//! filtered document with the blended dense similarity. Thin hybrid pages
//! are topped up from the intent postings.

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::embedding::{dot, toy_embed, EmbeddingError, Sparsifier};
use crate::intents::IntentGraph;
use crate::keyword::{tokenize, FilterSpec};
use crate::ranking::{
    first_round_components, long_query_blend, rescore_topk, CandidateFeatures, CandidateNorms, FirstRoundComponents,
    QueryVectors, RankingError, Similarity,
};
use crate::snapshot::Snapshot;
use crate::sparse_index::{SparseIndexError, SparseMatch};
use crate::template::{DocAttributes, REGION_ALL};
use crate::DocId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("query has no tokens after normalization")]
    EmptyQuery,
    #[error("no snapshot is loaded")]
    SnapshotNotLoaded,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    SparseIndex(#[from] SparseIndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Route {
    Hybrid,
    Long,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFlags {
    pub recovery_applied: bool,
    /// No results on the page, counting recovered ones.
    pub null: bool,
    /// Fewer than `low_result_threshold` results, counting recovered ones.
    pub low: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub route: Route,
    pub word_count: usize,
    pub filters: FilterSpec,
    /// Node ids of the intents found in the query.
    pub intents: Vec<String>,
    pub flags: PlanFlags,
}

/// Plans a query. Flags are filled in by execution.
pub fn plan(query: &str, filters: &FilterSpec, cfg: &EngineConfig, graph: &IntentGraph) -> Result<QueryPlan, SearchError> {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let route = if tokens.len() >= cfg.long_query_min_words {
        Route::Long
    } else {
        Route::Hybrid
    };
    let intents = graph
        .extract_from_tokens(&tokens)
        .into_iter()
        .map(|i| graph.node(i).expect("extracted id").id.clone())
        .collect();
    Ok(QueryPlan {
        route,
        word_count: tokens.len(),
        filters: filters.clone(),
        intents,
        flags: PlanFlags::default(),
    })
}

/// Query-side locale for the first-round locale feature.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Locale {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

impl Locale {
    /// Fraction of the given locale parts the document matches; 0 when none
    /// are given.
    pub fn match_score(&self, doc: &DocAttributes) -> f64 {
        let mut parts = 0u32;
        let mut hits = 0u32;
        if let Some(lang) = &self.language {
            parts += 1;
            hits += u32::from(&doc.language == lang);
        }
        if let Some(region) = &self.region {
            parts += 1;
            hits += u32::from(doc.region == REGION_ALL || &doc.region == region);
        }
        if parts == 0 {
            0.0
        } else {
            f64::from(hits) / f64::from(parts)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default)]
    pub filters: FilterSpec,
    #[serde(default)]
    pub locale: Locale,
    /// Zero-based offset into the final ranking.
    #[serde(default)]
    pub offset: usize,
    /// Defaults to the configured page size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_size: Option<usize>,
    #[serde(default)]
    pub explain: bool,
    /// Wall-clock stage timings; these make responses non-reproducible.
    #[serde(default)]
    pub timings: bool,
}

impl SearchRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            ..Default::default()
        }
    }

    pub fn with_filters(mut self, filters: FilterSpec) -> Self {
        self.filters = filters;
        self
    }

    pub fn with_page_size(mut self, n: usize) -> Self {
        self.page_size = Some(n);
        self
    }

    pub fn explained(mut self) -> Self {
        self.explain = true;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub keyword: bool,
    pub sparse: bool,
    pub recovery: bool,
    pub long_path: bool,
}

/// Per-result score components, returned in explain mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultExplain {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bm25: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparse_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparse_matched_dims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_round: Option<FirstRoundComponents>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_round_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<Similarity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shared_intents: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub doc: DocId,
    pub id: String,
    /// One-based position in the full ranking.
    pub rank: usize,
    pub score: f64,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explain: Option<ResultExplain>,
}

/// Candidate counts per stage, returned in explain mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub keyword: usize,
    pub sparse: usize,
    pub union: usize,
    pub rescored: usize,
    pub scanned: usize,
    pub organic: usize,
    pub recovered: usize,
}

/// Stage wall-clock times in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub embed: u64,
    pub recall: u64,
    pub rank: u64,
    pub recovery: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub plan: QueryPlan,
    /// Organic plus recovered results.
    pub total: usize,
    pub organic_count: usize,
    pub recovered_count: usize,
    pub offset: usize,
    pub results: Vec<RankedResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<StageCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// A document with its blended dense similarity to a long query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanHit {
    pub doc: DocId,
    pub similarity: Similarity,
}

/// Unit-length toy embeddings of the query in the text-image space and,
/// when `with_intent`, the intent space.
pub fn query_vectors(snap: &Snapshot, text: &str, with_intent: bool) -> Result<(Vec<f64>, Vec<f64>), SearchError> {
    let cfg = snap.config();
    let ti = toy_embed(text, cfg.text_image())?.into_values();
    let intent = if with_intent {
        toy_embed(text, cfg.intent())?.into_values()
    } else {
        Vec::new()
    };
    Ok((ti, intent))
}

/// Exhaustive long-query scoring of every filtered document, best first,
/// ties by ascending id; at most `limit` hits.
pub fn long_query_scan(
    snap: &Snapshot,
    q: &QueryVectors<'_>,
    filters: &FilterSpec,
    intent_weight: f64,
    limit: usize,
) -> Result<(Vec<ScanHit>, usize), SearchError> {
    let ti_store = snap.dense_store(q.text_image_space).ok_or_else(|| missing(0, q.text_image_space))?;
    let in_store = snap.dense_store(q.intent_space).ok_or_else(|| missing(0, q.intent_space))?;
    let mut hits = Vec::new();
    for doc in 0..snap.doc_count() as DocId {
        if !filters.matches(&snap.attrs[doc as usize]) {
            continue;
        }
        let ti = dot(q.text_image, ti_store.get(doc).ok_or_else(|| missing(doc, q.text_image_space))?);
        let intent = dot(q.intent, in_store.get(doc).ok_or_else(|| missing(doc, q.intent_space))?);
        hits.push(ScanHit {
            doc,
            similarity: Similarity {
                text_image: ti,
                intent: Some(intent),
                blended: long_query_blend(intent, ti, intent_weight),
            },
        });
    }
    let scanned = hits.len();
    let order = |a: &ScanHit, b: &ScanHit| {
        b.similarity.blended.total_cmp(&a.similarity.blended).then(a.doc.cmp(&b.doc))
    };
    if limit < hits.len() {
        if limit == 0 {
            hits.clear();
        } else {
            hits.select_nth_unstable_by(limit - 1, order);
            hits.truncate(limit);
        }
    }
    hits.sort_unstable_by(order);
    Ok((hits, scanned))
}

fn missing(doc: DocId, space: &str) -> SearchError {
    SearchError::Ranking(RankingError::MissingEmbedding {
        doc,
        space: space.to_string(),
    })
}

/// Sparse recall of the query's text-image embedding, filtered.
pub fn sparse_recall(snap: &Snapshot, text_image: &[f64], filters: &FilterSpec) -> Result<Vec<SparseMatch>, SearchError> {
    let cfg = snap.config();
    let dense = crate::embedding::DenseEmbedding::new(cfg.text_image(), text_image.to_vec())?;
    let q = snap.sparsifier().sparsify(&dense)?;
    if q.is_empty() {
        return Ok(Vec::new());
    }
    let mut hits = snap.sparse_index().match_query(&q, cfg.min_dims, usize::MAX)?;
    hits.retain(|m| filters.matches(&snap.attrs[m.doc as usize]));
    Ok(hits)
}

#[derive(Default)]
struct Recall {
    bm25: Option<f64>,
    sparse: Option<SparseMatch>,
}

struct Organic {
    doc: DocId,
    score: f64,
    provenance: Provenance,
    explain: ResultExplain,
}

fn micros(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

/// Runs one query against a snapshot.
pub fn search(snap: &Snapshot, req: &SearchRequest) -> Result<SearchResponse, SearchError> {
    let started = Instant::now();
    let cfg = snap.config();
    let page_size = req.page_size.unwrap_or(cfg.page_size);
    if page_size == 0 {
        return Err(SearchError::InvalidRequest("page_size must be >= 1".into()));
    }
    let mut plan = plan(&req.query, &req.filters, cfg, snap.graph())?;
    let long = plan.route == Route::Long;
    let mut timings = Timings::default();
    let mut stages = StageCounts::default();

    let t = Instant::now();
    let (q_ti, q_in) = query_vectors(snap, &req.query, long)?;
    let qv = QueryVectors {
        text_image_space: &cfg.text_image_space,
        text_image: &q_ti,
        intent_space: &cfg.intent_space,
        intent: &q_in,
    };
    timings.embed = micros(t);

    let window = req.offset.saturating_add(page_size);
    let (organic, organic_count) = if long && !cfg.long_route_union {
        let t = Instant::now();
        let (hits, scanned) = long_query_scan(snap, &qv, &req.filters, cfg.rescore.long_query_intent_weight, window)?;
        timings.rank = micros(t);
        stages.scanned = scanned;
        let organic = hits
            .into_iter()
            .map(|h| Organic {
                doc: h.doc,
                score: h.similarity.blended,
                provenance: Provenance {
                    long_path: true,
                    ..Default::default()
                },
                explain: ResultExplain {
                    similarity: Some(h.similarity),
                    final_score: Some(h.similarity.blended),
                    ..Default::default()
                },
            })
            .collect();
        (organic, scanned)
    } else {
        let organic = union_route(snap, req, &qv, long, &mut stages, &mut timings)?;
        let n = organic.len();
        (organic, n)
    };
    stages.organic = organic_count;

    let t = Instant::now();
    let mut recovered = Vec::new();
    if !long && cfg.recovery_enabled && organic_count < cfg.low_result_threshold && !plan.intents.is_empty() {
        let query_intents = plan.intents.iter().filter_map(|id| snap.graph().id_of(id)).collect();
        let exclude: HashSet<DocId> = organic.iter().map(|o| o.doc).collect();
        let keep = |d: DocId| req.filters.matches(&snap.attrs[d as usize]);
        let limit = page_size.saturating_sub(organic_count);
        recovered = snap.intent_postings().recover(&query_intents, &exclude, &keep, limit);
    }
    timings.recovery = micros(t);
    stages.recovered = recovered.len();

    let total = organic_count + recovered.len();
    plan.flags = PlanFlags {
        recovery_applied: !recovered.is_empty(),
        null: total == 0,
        low: total < cfg.low_result_threshold,
    };

    let recovered_rows = recovered.iter().map(|r| Organic {
        doc: r.doc,
        score: r.shared_intents as f64,
        provenance: Provenance {
            recovery: true,
            ..Default::default()
        },
        explain: ResultExplain {
            shared_intents: Some(r.shared_intents),
            ..Default::default()
        },
    });
    // Long-route organic rows are already cut to the window.
    let results = organic
        .into_iter()
        .enumerate()
        .chain(recovered_rows.enumerate().map(|(i, o)| (organic_count + i, o)))
        .skip(req.offset)
        .take(page_size)
        .map(|(i, o)| RankedResult {
            doc: o.doc,
            id: snap.external_id(o.doc).expect("indexed doc").to_string(),
            rank: i + 1,
            score: o.score,
            provenance: o.provenance,
            explain: req.explain.then_some(o.explain),
        })
        .collect();
    timings.total = micros(started);

    Ok(SearchResponse {
        plan,
        total,
        organic_count,
        recovered_count: recovered.len(),
        offset: req.offset,
        results,
        stages: req.explain.then_some(stages),
        timings: req.timings.then_some(timings),
    })
}

fn union_route(
    snap: &Snapshot,
    req: &SearchRequest,
    qv: &QueryVectors<'_>,
    long: bool,
    stages: &mut StageCounts,
    timings: &mut Timings,
) -> Result<Vec<Organic>, SearchError> {
    let cfg = snap.config();
    let t = Instant::now();
    let keep = |d: DocId| req.filters.matches(&snap.attrs[d as usize]);
    let tokens = tokenize(&req.query);
    let kw = snap.keyword_index().kw_match(&tokens, &cfg.keyword, &keep, usize::MAX);
    let sp = sparse_recall(snap, qv.text_image, &req.filters)?;
    stages.keyword = kw.len();
    stages.sparse = sp.len();
    let mut union: BTreeMap<DocId, Recall> = BTreeMap::new();
    for (doc, score) in kw {
        union.entry(doc).or_default().bm25 = Some(score);
    }
    for m in sp {
        union.entry(m.doc).or_default().sparse = Some(m);
    }
    stages.union = union.len();
    timings.recall = micros(t);

    let t = Instant::now();
    let feats: Vec<CandidateFeatures> = union
        .iter()
        .map(|(&doc, r)| {
            let a = &snap.attrs[doc as usize];
            CandidateFeatures {
                doc,
                bm25: r.bm25.unwrap_or(0.0),
                age_days: (cfg.reference_date - a.date).num_days() as f64,
                locale_match: req.locale.match_score(a),
                engagement: a.engagement(),
                sparse_only: r.bm25.is_none(),
            }
        })
        .collect();
    let norms = CandidateNorms::from_candidates(&feats);
    let components: BTreeMap<DocId, FirstRoundComponents> = feats
        .iter()
        .map(|f| (f.doc, first_round_components(f, &norms, &cfg.first_round)))
        .collect();
    let scored: Vec<(DocId, f64)> = components.iter().map(|(&d, c)| (d, c.score)).collect();
    let rescored = rescore_topk(&scored, snap, qv, &cfg.rescore, long)?;
    stages.rescored = rescored.iter().filter(|c| c.final_score.is_some()).count();
    timings.rank = micros(t);

    Ok(rescored
        .into_iter()
        .map(|c| {
            let r = &union[&c.doc];
            Organic {
                doc: c.doc,
                score: c.final_score.unwrap_or(c.first_round),
                provenance: Provenance {
                    keyword: r.bm25.is_some(),
                    sparse: r.sparse.is_some(),
                    recovery: false,
                    long_path: long,
                },
                explain: ResultExplain {
                    bm25: r.bm25,
                    sparse_score: r.sparse.map(|m| m.score),
                    sparse_matched_dims: r.sparse.map(|m| m.matched_dims),
                    first_round: components.get(&c.doc).copied(),
                    first_round_norm: Some(c.first_round_norm),
                    similarity: c.similarity,
                    final_score: c.final_score,
                    shared_intents: None,
                },
            }
        })
        .collect())
}

/// Holds the current snapshot; a swap is atomic for in-flight queries,
/// each of which keeps the snapshot it started with.
#[derive(Debug, Default)]
pub struct Engine {
    current: RwLock<Option<Arc<Snapshot>>>,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_snapshot(snap: Snapshot) -> Self {
        let engine = Self::new();
        engine.swap(snap);
        engine
    }

    /// Installs a new snapshot and returns the previous one.
    pub fn swap(&self, snap: Snapshot) -> Option<Arc<Snapshot>> {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        guard.replace(Arc::new(snap))
    }

    pub fn snapshot(&self) -> Result<Arc<Snapshot>, SearchError> {
        let guard = self.current.read().unwrap_or_else(|e| e.into_inner());
        guard.clone().ok_or(SearchError::SnapshotNotLoaded)
    }

    pub fn search(&self, req: &SearchRequest) -> Result<SearchResponse, SearchError> {
        let snap = self.snapshot()?;
        search(&snap, req)
    }
}
