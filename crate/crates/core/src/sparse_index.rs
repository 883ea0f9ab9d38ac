//! Inverted index over sparse-embedding dimensions.
//!
//! A query retrieves every document that shares at least `min_dims`
//! dimensions with it; the score is the sum over shared dimensions of
//! query weight times document weight.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::embedding::{EmbeddingSpace, SparseEmbedding};
use crate::DocId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SparseIndexError {
    #[error("embedding space mismatch: index is `{index}`, embedding is `{embedding}`")]
    SpaceMismatch { index: String, embedding: String },
    #[error("document {0} is already indexed")]
    DuplicateDocument(DocId),
    #[error("{0} must be positive")]
    InvalidArgument(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub doc: DocId,
    pub weight: f64,
}

/// Postings for one dimension, sorted by document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostingList {
    pub(crate) postings: Vec<Posting>,
}

impl PostingList {
    pub fn postings(&self) -> &[Posting] {
        &self.postings
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    fn insert(&mut self, doc: DocId, weight: f64) {
        match self.postings.last() {
            Some(last) if last.doc > doc => {
                let at = self.postings.partition_point(|p| p.doc < doc);
                self.postings.insert(at, Posting { doc, weight });
            }
            _ => self.postings.push(Posting { doc, weight }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseMatch {
    pub doc: DocId,
    pub matched_dims: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    pub(crate) space: String,
    pub(crate) lists: Vec<PostingList>,
    pub(crate) docs: BTreeSet<DocId>,
}

impl SparseIndex {
    pub fn new(space: &EmbeddingSpace) -> Self {
        Self {
            space: space.name.clone(),
            lists: vec![PostingList::default(); space.sparse_dim],
            docs: BTreeSet::new(),
        }
    }

    pub fn space(&self) -> &str {
        &self.space
    }

    pub fn sparse_dim(&self) -> usize {
        self.lists.len()
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn contains(&self, doc: DocId) -> bool {
        self.docs.contains(&doc)
    }

    pub fn posting_list(&self, dimension: u32) -> Option<&PostingList> {
        self.lists.get(dimension as usize)
    }

    pub fn insert(&mut self, doc: DocId, emb: &SparseEmbedding) -> Result<(), SparseIndexError> {
        self.check_space(emb)?;
        if !self.docs.insert(doc) {
            return Err(SparseIndexError::DuplicateDocument(doc));
        }
        for &(dim, weight) in emb.entries() {
            self.lists[dim as usize].insert(doc, weight);
        }
        Ok(())
    }

    /// Documents sharing at least `min_dims` dimensions with `q`, by
    /// descending score, ties by ascending document id, at most `limit`.
    pub fn match_query(
        &self,
        q: &SparseEmbedding,
        min_dims: usize,
        limit: usize,
    ) -> Result<Vec<SparseMatch>, SparseIndexError> {
        self.check_space(q)?;
        if min_dims == 0 {
            return Err(SparseIndexError::InvalidArgument("min_dims"));
        }
        if limit == 0 {
            return Err(SparseIndexError::InvalidArgument("limit"));
        }
        // Query entries are visited in increasing dimension order, so each
        // document's score is summed in the same order as `sparse_dot`.
        let mut acc: HashMap<DocId, (usize, f64)> = HashMap::new();
        for &(dim, qw) in q.entries() {
            let Some(list) = self.lists.get(dim as usize) else {
                continue;
            };
            for p in &list.postings {
                let slot = acc.entry(p.doc).or_insert((0, 0.0));
                slot.0 += 1;
                slot.1 += qw * p.weight;
            }
        }
        let mut out: Vec<SparseMatch> = acc
            .into_iter()
            .filter(|(_, (count, _))| *count >= min_dims)
            .map(|(doc, (matched_dims, score))| SparseMatch {
                doc,
                matched_dims,
                score,
            })
            .collect();
        out.sort_unstable_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
        out.truncate(limit);
        Ok(out)
    }

    fn check_space(&self, emb: &SparseEmbedding) -> Result<(), SparseIndexError> {
        if emb.space() != self.space {
            return Err(SparseIndexError::SpaceMismatch {
                index: self.space.clone(),
                embedding: emb.space().to_string(),
            });
        }
        Ok(())
    }
}
