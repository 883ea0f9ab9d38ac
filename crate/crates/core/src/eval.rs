//! Offline evaluation: title-as-query and clicked-as-relevant protocols,
//! null/low rates, sparse-versus-dense overlap and latency percentiles.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::dot;
use crate::keyword::FilterSpec;
use crate::pipeline::{query_vectors, search, sparse_recall, Route, SearchError, SearchRequest};
use crate::snapshot::Snapshot;
use crate::synth::EvalQuerySet;
use crate::DocId;

/// Ranks beyond this depth count as misses.
pub const EVAL_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query: String,
    pub route: Route,
    /// One-based rank of the first relevant document within the top 100.
    pub rank: Option<usize>,
    pub organic: usize,
    pub total: usize,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50_us: f64,
    pub p95_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub mrr: f64,
    pub recall_at_1: f64,
    pub recall_at_10: f64,
    pub recall_at_100: f64,
    pub null_rate: f64,
    pub low_rate: f64,
    pub latency: BTreeMap<String, Percentiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub rows: Vec<QueryRow>,
    pub aggregates: Aggregates,
    pub low_result_threshold: usize,
    pub config: serde_json::Value,
}

impl EvalReport {
    fn new(protocol: &str, snap: &Snapshot, rows: Vec<QueryRow>) -> Self {
        let low = snap.config().low_result_threshold;
        Self {
            protocol: protocol.to_string(),
            aggregates: aggregate(&rows, low),
            rows,
            low_result_threshold: low,
            config: serde_json::to_value(snap.config()).expect("config serializes"),
        }
    }

    /// Aggregates recomputed from the rows.
    pub fn recompute(&self) -> Aggregates {
        aggregate(&self.rows, self.low_result_threshold)
    }

    /// Rows as JSON lines followed by the aggregates line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.aggregates).expect("aggregates serialize"));
        out.push('\n');
        out
    }

    pub fn summary_table(&self) -> String {
        let a = &self.aggregates;
        let mut s = format!(
            "protocol    {}\nqueries     {}\nMRR@100     {:.4}\nrecall@1    {:.4}\nrecall@10   {:.4}\nrecall@100  {:.4}\nnull rate   {:.4}\nlow rate    {:.4}\n",
            self.protocol, a.queries, a.mrr, a.recall_at_1, a.recall_at_10, a.recall_at_100, a.null_rate, a.low_rate
        );
        for (route, p) in &a.latency {
            s.push_str(&format!("{route:<11} p50 {:.0} us  p95 {:.0} us\n", p.p50_us, p.p95_us));
        }
        s
    }
}

/// Nearest-rank percentile of unsorted samples; 0 for no samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

fn aggregate(rows: &[QueryRow], low: usize) -> Aggregates {
    let n = rows.len().max(1) as f64;
    let frac = |f: &dyn Fn(&QueryRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let mut by_route: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = match r.route {
            Route::Hybrid => "HYBRID",
            Route::Long => "LONG",
        };
        by_route.entry(key.to_string()).or_default().push(r.latency_us as f64);
    }
    Aggregates {
        queries: rows.len(),
        mrr: rows.iter().map(|r| r.rank.map_or(0.0, |k| 1.0 / k as f64)).sum::<f64>() / n,
        recall_at_1: frac(&|r| r.rank.is_some_and(|k| k <= 1)),
        recall_at_10: frac(&|r| r.rank.is_some_and(|k| k <= 10)),
        recall_at_100: frac(&|r| r.rank.is_some_and(|k| k <= 100)),
        null_rate: frac(&|r| r.total == 0),
        low_rate: frac(&|r| r.total < low),
        latency: by_route
            .into_iter()
            .map(|(k, v)| {
                (
                    k,
                    Percentiles {
                        p50_us: percentile(&v, 50.0),
                        p95_us: percentile(&v, 95.0),
                    },
                )
            })
            .collect(),
    }
}

fn run(snap: &Snapshot, set: &EvalQuerySet, recovery: bool) -> Result<Vec<QueryRow>, SearchError> {
    let toggled;
    let snap = if snap.config().recovery_enabled == recovery {
        snap
    } else {
        let mut s = snap.clone();
        let mut cfg = s.config().clone();
        cfg.recovery_enabled = recovery;
        s.reconfigure(cfg).map_err(SearchError::InvalidRequest)?;
        toggled = s;
        &toggled
    };
    set.validate(snap.doc_count()).map_err(SearchError::InvalidRequest)?;
    let mut rows = Vec::with_capacity(set.queries.len());
    for q in &set.queries {
        let req = SearchRequest::new(&q.text).with_page_size(EVAL_DEPTH);
        let t = Instant::now();
        let resp = search(snap, &req)?;
        let latency_us = t.elapsed().as_micros() as u64;
        let relevant: HashSet<DocId> = q.relevant.iter().copied().collect();
        rows.push(QueryRow {
            query: q.text.clone(),
            route: resp.plan.route,
            rank: resp.results.iter().find(|r| relevant.contains(&r.doc)).map(|r| r.rank),
            organic: resp.organic_count,
            total: resp.total,
            latency_us,
        });
    }
    Ok(rows)
}

/// Queries each title and records where its source document lands.
pub fn title_as_query_eval(snap: &Snapshot, set: &EvalQuerySet) -> Result<EvalReport, SearchError> {
    let rows = run(snap, set, snap.config().recovery_enabled)?;
    Ok(EvalReport::new("title-as-query", snap, rows))
}

/// Clicked-as-relevant protocol: rank of the first clicked document.
pub fn clicked_eval(snap: &Snapshot, set: &EvalQuerySet) -> Result<EvalReport, SearchError> {
    let rows = run(snap, set, snap.config().recovery_enabled)?;
    Ok(EvalReport::new("clicked-as-relevant", snap, rows))
}

/// `(null_rate, low_rate)` over the set, after recovery when `recovery_on`.
pub fn null_rate_eval(snap: &Snapshot, set: &EvalQuerySet, recovery_on: bool) -> Result<(f64, f64), SearchError> {
    let rows = run(snap, set, recovery_on)?;
    let a = aggregate(&rows, snap.config().low_result_threshold);
    Ok((a.null_rate, a.low_rate))
}

/// Top `k` documents by text-image cosine over the whole corpus.
pub fn dense_scan_topk(snap: &Snapshot, q: &[f64], k: usize) -> Vec<(DocId, f64)> {
    let store = snap.dense_store(&snap.config().text_image_space).expect("text-image store");
    let scored: Vec<(DocId, f64)> = (0..snap.doc_count() as DocId)
        .map(|d| (d, dot(q, store.get(d).expect("stored doc"))))
        .collect();
    top_k(scored, k)
}

/// Sparse recall followed by text-image cosine over the recalled documents.
pub fn sparse_path_topk(snap: &Snapshot, q: &[f64], k: usize) -> Result<Vec<(DocId, f64)>, SearchError> {
    let store = snap.dense_store(&snap.config().text_image_space).expect("text-image store");
    let hits = sparse_recall(snap, q, &FilterSpec::default())?;
    let scored = hits.iter().map(|m| (m.doc, dot(q, store.get(m.doc).expect("stored doc")))).collect();
    Ok(top_k(scored, k))
}

fn top_k(mut v: Vec<(DocId, f64)>, k: usize) -> Vec<(DocId, f64)> {
    let order = |a: &(DocId, f64), b: &(DocId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k == 0 {
        return Vec::new();
    }
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, order);
        v.truncate(k);
    }
    v.sort_unstable_by(order);
    v
}

/// Mean overlap@k between the sparse path and the exhaustive dense ranking
/// for unit-length text-image query vectors.
pub fn sparse_vs_dense_overlap(snap: &Snapshot, queries: &[Vec<f64>], k: usize) -> Result<f64, SearchError> {
    if queries.is_empty() || k == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for q in queries {
        let exact: HashSet<DocId> = dense_scan_topk(snap, q, k).into_iter().map(|(d, _)| d).collect();
        let approx = sparse_path_topk(snap, q, k)?;
        let shared = approx.iter().filter(|(d, _)| exact.contains(d)).count();
        sum += shared as f64 / k.min(snap.doc_count()).max(1) as f64;
    }
    Ok(sum / queries.len() as f64)
}

/// Text-image toy embeddings of query strings.
pub fn embed_queries(snap: &Snapshot, texts: &[String]) -> Result<Vec<Vec<f64>>, SearchError> {
    texts.iter().map(|t| query_vectors(snap, t, false).map(|(ti, _)| ti)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub docs: usize,
    pub queries: usize,
    pub k: usize,
    pub sparse: Percentiles,
    pub dense: Percentiles,
    /// Dense p50 over sparse p50.
    pub p50_ratio: f64,
    /// Per-query sparse-path results, for run-to-run comparison.
    #[serde(skip)]
    pub sparse_results: Vec<Vec<DocId>>,
    #[serde(skip)]
    pub dense_results: Vec<Vec<DocId>>,
}

/// Times the sparse path against the exhaustive dense scan.
pub fn latency_bench(snap: &Snapshot, queries: &[Vec<f64>], k: usize) -> Result<LatencyReport, SearchError> {
    let mut sparse_t = Vec::with_capacity(queries.len());
    let mut dense_t = Vec::with_capacity(queries.len());
    let mut sparse_results = Vec::with_capacity(queries.len());
    let mut dense_results = Vec::with_capacity(queries.len());
    for q in queries {
        let t = Instant::now();
        let s = sparse_path_topk(snap, q, k)?;
        sparse_t.push(t.elapsed().as_secs_f64() * 1e6);
        let t = Instant::now();
        let d = dense_scan_topk(snap, q, k);
        dense_t.push(t.elapsed().as_secs_f64() * 1e6);
        sparse_results.push(s.into_iter().map(|(d, _)| d).collect());
        dense_results.push(d.into_iter().map(|(d, _)| d).collect());
    }
    let sparse = Percentiles {
        p50_us: percentile(&sparse_t, 50.0),
        p95_us: percentile(&sparse_t, 95.0),
    };
    let dense = Percentiles {
        p50_us: percentile(&dense_t, 50.0),
        p95_us: percentile(&dense_t, 95.0),
    };
    Ok(LatencyReport {
        docs: snap.doc_count(),
        queries: queries.len(),
        k,
        p50_ratio: dense.p50_us / sparse.p50_us.max(1e-3),
        sparse,
        dense,
        sparse_results,
        dense_results,
    })
}
