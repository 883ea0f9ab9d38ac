//! HTTP front end and command implementations for the `hsearch` binary.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hybrid_search::config::EngineConfig;
use hybrid_search::corpus::{ingest, BuildReport};
use hybrid_search::eval::{self, EvalReport};
use hybrid_search::service::{ApiError, Service};
use hybrid_search::snapshot::Snapshot;
use hybrid_search::supcola::{gradient_check, random_batch, LossConfig};
use hybrid_search::synth::{self, SynthConfig};
use hybrid_search::template::TemplateRecord;

struct ApiResponse(Result<serde_json::Value, ApiError>);

impl IntoResponse for ApiResponse {
    fn into_response(self) -> Response {
        match self.0 {
            Ok(v) => (StatusCode::OK, Json(v)).into_response(),
            Err(e) => {
                let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
                (status, Json(e)).into_response()
            }
        }
    }
}

fn to_value<T: serde::Serialize>(r: Result<T, ApiError>) -> ApiResponse {
    ApiResponse(r.map(|v| serde_json::to_value(v).expect("response serializes")))
}

async fn health(State(svc): State<Arc<Service>>) -> ApiResponse {
    to_value(svc.health())
}

async fn search(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResponse {
    // Long queries scan the whole corpus; keep them off the async workers.
    let res = tokio::task::spawn_blocking(move || svc.search_json(&body)).await;
    match res {
        Ok(r) => to_value(r),
        Err(e) => ApiResponse(Err(ApiError {
            status: 500,
            code: "Internal".into(),
            message: e.to_string(),
        })),
    }
}

/// `GET /health` and `POST /search`.
pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/search", post(search))
        .with_state(svc)
}

pub fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(EngineConfig::default()),
    }
}

/// Ingests a corpus file and writes its snapshot.
pub fn index(corpus: &Path, cfg: &EngineConfig, out: &Path) -> Result<(BuildReport, String)> {
    let (snap, report) = ingest(corpus, cfg).with_context(|| format!("ingesting {}", corpus.display()))?;
    snap.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok((report, snap.digest().to_string()))
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    Snapshot::load(path).with_context(|| format!("loading snapshot {}", path.display()))
}

pub fn read_records(path: &Path) -> Result<Vec<TemplateRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Protocol {
    /// Each sampled title is a query for its own template.
    Title,
    /// Topic queries; templates tagged with the topic count as clicked.
    Clicked,
    /// Null-heavy set, reported with recovery off and on.
    Null,
}

/// Runs one evaluation protocol over a corpus and its snapshot.
pub fn run_eval(
    snap: &Snapshot,
    records: &[TemplateRecord],
    protocol: Protocol,
    queries: usize,
    seed: u64,
) -> Result<Option<EvalReport>> {
    if records.len() != snap.doc_count() {
        bail!("corpus has {} records but the snapshot has {} documents", records.len(), snap.doc_count());
    }
    Ok(match protocol {
        Protocol::Title => Some(eval::title_as_query_eval(snap, &synth::title_queries(records, queries, seed))?),
        Protocol::Clicked => Some(eval::clicked_eval(snap, &synth::clicked_queries(records, seed))?),
        Protocol::Null => {
            let set = synth::null_heavy_queries(records, seed);
            let (null_off, low_off) = eval::null_rate_eval(snap, &set, false)?;
            let (null_on, low_on) = eval::null_rate_eval(snap, &set, true)?;
            println!("queries     {}", set.queries.len());
            println!("recovery    off      on");
            println!("null rate   {null_off:.4}   {null_on:.4}");
            println!("low rate    {low_off:.4}   {low_on:.4}");
            None
        }
    })
}

/// Gradient check over seeded random batches; returns the worst relative
/// error.
pub fn loss_check(batches: u64, seed: u64, temperature: f64) -> Result<f64> {
    let cfg = LossConfig::new(temperature)?;
    let mut worst: f64 = 0.0;
    for i in 0..batches {
        let views = 4 + (i as usize % 9);
        let b = random_batch(seed.wrapping_add(i), views, 5, 3, 4);
        worst = worst.max(gradient_check(&b, &cfg, 1e-5, 1e-3)?);
    }
    Ok(worst)
}

/// Builds a synthetic corpus and times the sparse path against the dense
/// scan.
pub fn bench(docs: usize, queries: usize, k: usize, seed: u64, cfg: &EngineConfig) -> Result<eval::LatencyReport> {
    let records = synth::generate(&SynthConfig::new(docs, seed));
    let (snap, _) = hybrid_search::corpus::build(&records, cfg)?;
    drop(records);
    let texts = synth::short_queries(queries, SynthConfig::default().shared_vocab, seed);
    let vectors = eval::embed_queries(&snap, &texts)?;
    Ok(eval::latency_bench(&snap, &vectors, k)?)
}
