//! Transport-independent query service: JSON requests in, JSON documents
//! or structured errors out.

use serde::{Deserialize, Serialize};

use crate::pipeline::{Engine, SearchError, SearchRequest, SearchResponse};
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(400, "MalformedRequest", message)
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        let msg = e.to_string();
        match e {
            SearchError::EmptyQuery => Self::new(400, "EmptyQuery", msg),
            SearchError::InvalidRequest(_) => Self::new(400, "InvalidRequest", msg),
            SearchError::SnapshotNotLoaded => Self::new(503, "SnapshotNotLoaded", msg),
            SearchError::Ranking(_) | SearchError::Embedding(_) | SearchError::SparseIndex(_) => {
                Self::new(500, "Internal", msg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub digest: String,
    pub doc_count: usize,
}

/// Longest accepted query, in bytes.
pub const MAX_QUERY_BYTES: usize = 4096;
/// Largest accepted page.
pub const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Default)]
pub struct Service {
    engine: Engine,
}

impl Service {
    pub fn new(engine: Engine) -> Self {
        Self { engine }
    }

    pub fn with_snapshot(snap: Snapshot) -> Self {
        Self::new(Engine::with_snapshot(snap))
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn health(&self) -> Result<Health, ApiError> {
        let snap = self.engine.snapshot()?;
        Ok(Health {
            status: "ok".into(),
            digest: snap.digest().to_string(),
            doc_count: snap.doc_count(),
        })
    }

    pub fn search(&self, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
        if req.query.len() > MAX_QUERY_BYTES {
            return Err(ApiError::new(413, "QueryTooLong", format!("query exceeds {MAX_QUERY_BYTES} bytes")));
        }
        if let Some(n) = req.page_size {
            if n == 0 || n > MAX_PAGE_SIZE {
                return Err(ApiError::new(400, "InvalidRequest", format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
            }
        }
        Ok(self.engine.search(req)?)
    }

    /// Parses a JSON [`SearchRequest`] and runs it.
    pub fn search_json(&self, body: &[u8]) -> Result<SearchResponse, ApiError> {
        let req: SearchRequest = serde_json::from_slice(body).map_err(|e| ApiError::malformed(e.to_string()))?;
        self.search(&req)
    }
}
