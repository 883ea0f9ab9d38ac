//! First-round scoring of recalled candidates and dense top-K rescoring.
//!
//! The first round is a cheap hand-tuned blend of BM25, recency, locale and
//! engagement. The top `depth` candidates by first-round score are then
//! rescored as `embed_weight * sim + (1 - embed_weight) * first_round_norm`,
//! where `sim` is the text-image cosine for short queries and a blend of the
//! intent-space and text-image cosines for long ones. Candidates below the
//! cutoff keep their first-round order beneath every rescored item.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::dot;
use crate::DocId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankingError {
    #[error("document {doc} has no embedding in space `{space}`")]
    MissingEmbedding { doc: DocId, space: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FirstRoundWeights {
    pub w_bm25: f64,
    pub w_recency: f64,
    pub w_locale: f64,
    pub w_behavior: f64,
    pub recency_half_life_days: f64,
    /// Multiplier for candidates recalled only by the sparse index.
    pub sparse_only_demotion: f64,
}

impl Default for FirstRoundWeights {
    fn default() -> Self {
        Self {
            w_bm25: 0.5,
            w_recency: 0.2,
            w_locale: 0.1,
            w_behavior: 0.2,
            recency_half_life_days: 90.0,
            sparse_only_demotion: 0.8,
        }
    }
}

impl FirstRoundWeights {
    pub fn validate(&self) -> Result<(), String> {
        let ws = [self.w_bm25, self.w_recency, self.w_locale, self.w_behavior];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err("first-round weights must be non-negative".into());
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("first-round weights must sum to 1, got {sum}"));
        }
        if !(self.recency_half_life_days.is_finite() && self.recency_half_life_days > 0.0) {
            return Err("recency_half_life_days must be > 0".into());
        }
        if !(self.sparse_only_demotion > 0.0 && self.sparse_only_demotion <= 1.0) {
            return Err(format!(
                "sparse_only_demotion must be in (0, 1], got {}",
                self.sparse_only_demotion
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RescoreConfig {
    pub depth: usize,
    pub embed_weight: f64,
    pub long_query_intent_weight: f64,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self {
            depth: 10_000,
            embed_weight: 2.0 / 3.0,
            long_query_intent_weight: 1.0 / 3.0,
        }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.depth == 0 {
            return Err("rescore depth must be >= 1".into());
        }
        for (name, w) in [
            ("embed_weight", self.embed_weight),
            ("long_query_intent_weight", self.long_query_intent_weight),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(format!("{name} must be in [0, 1], got {w}"));
            }
        }
        Ok(())
    }
}

/// Raw first-round features of one recalled candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFeatures {
    pub doc: DocId,
    /// Raw BM25; 0 for candidates without a keyword match.
    pub bm25: f64,
    pub age_days: f64,
    /// In `[0, 1]`.
    pub locale_match: f64,
    /// Exports plus edits.
    pub engagement: u64,
    pub sparse_only: bool,
}

/// Candidate-set statistics used to normalize BM25 and engagement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateNorms {
    pub bm25_min: f64,
    pub bm25_max: f64,
    pub engagement_max: u64,
}

impl CandidateNorms {
    pub fn from_candidates(cands: &[CandidateFeatures]) -> Self {
        let mut norms = Self {
            bm25_min: f64::INFINITY,
            bm25_max: f64::NEG_INFINITY,
            engagement_max: 0,
        };
        for c in cands {
            norms.bm25_min = norms.bm25_min.min(c.bm25);
            norms.bm25_max = norms.bm25_max.max(c.bm25);
            norms.engagement_max = norms.engagement_max.max(c.engagement);
        }
        norms
    }

    /// Min-max normalization; a constant positive set normalizes to 1.
    pub fn bm25_norm(&self, bm25: f64) -> f64 {
        min_max(bm25, self.bm25_min, self.bm25_max)
    }

    pub fn behavior_prior(&self, engagement: u64) -> f64 {
        if self.engagement_max == 0 {
            return 0.0;
        }
        (engagement as f64).ln_1p() / (self.engagement_max as f64).ln_1p()
    }
}

fn min_max(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (x - min) / (max - min)
    } else if max > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Per-component breakdown of a first-round score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstRoundComponents {
    pub bm25_norm: f64,
    pub recency: f64,
    pub locale: f64,
    pub behavior: f64,
    pub demoted: bool,
    pub score: f64,
}

pub fn first_round_components(
    c: &CandidateFeatures,
    norms: &CandidateNorms,
    w: &FirstRoundWeights,
) -> FirstRoundComponents {
    let bm25_norm = norms.bm25_norm(c.bm25);
    let recency = (-c.age_days.max(0.0) / w.recency_half_life_days).exp2();
    let behavior = norms.behavior_prior(c.engagement);
    let mut score = w.w_bm25 * bm25_norm + w.w_recency * recency + w.w_locale * c.locale_match + w.w_behavior * behavior;
    if c.sparse_only {
        score *= w.sparse_only_demotion;
    }
    FirstRoundComponents {
        bm25_norm,
        recency,
        locale: c.locale_match,
        behavior,
        demoted: c.sparse_only,
        score,
    }
}

pub fn first_round_score(c: &CandidateFeatures, norms: &CandidateNorms, w: &FirstRoundWeights) -> f64 {
    first_round_components(c, norms, w).score
}

/// Scores every candidate against the statistics of the whole set.
pub fn first_round_scores(cands: &[CandidateFeatures], w: &FirstRoundWeights) -> Vec<f64> {
    let norms = CandidateNorms::from_candidates(cands);
    cands.iter().map(|c| first_round_score(c, &norms, w)).collect()
}

/// Orders `(doc, score)` pairs by descending score, then ascending doc.
pub fn by_score_desc(a: &(DocId, f64), b: &(DocId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Dense vectors looked up by space name and document.
pub trait DenseLookup {
    fn dense(&self, space: &str, doc: DocId) -> Option<&[f64]>;
}

/// Unit-length query vectors with the spaces they live in.
#[derive(Debug, Clone, Copy)]
pub struct QueryVectors<'a> {
    pub text_image_space: &'a str,
    pub text_image: &'a [f64],
    pub intent_space: &'a str,
    pub intent: &'a [f64],
}

/// Cosines of one document against the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub text_image: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent: Option<f64>,
    pub blended: f64,
}

/// `w * intent + (1 - w) * text_image`.
pub fn long_query_blend(intent: f64, text_image: f64, intent_weight: f64) -> f64 {
    intent_weight * intent + (1.0 - intent_weight) * text_image
}

/// `w * sim + (1 - w) * first_round_norm`.
pub fn rescore_blend(sim: f64, first_round_norm: f64, embed_weight: f64) -> f64 {
    embed_weight * sim + (1.0 - embed_weight) * first_round_norm
}

/// Similarity of a stored (unit-length) document to the query.
pub fn similarity(
    store: &dyn DenseLookup,
    q: &QueryVectors<'_>,
    doc: DocId,
    long_query: bool,
    intent_weight: f64,
) -> Result<Similarity, RankingError> {
    let missing = |space: &str| RankingError::MissingEmbedding {
        doc,
        space: space.to_string(),
    };
    let ti_vec = store.dense(q.text_image_space, doc).ok_or_else(|| missing(q.text_image_space))?;
    let text_image = dot(q.text_image, ti_vec);
    if !long_query {
        return Ok(Similarity {
            text_image,
            intent: None,
            blended: text_image,
        });
    }
    let in_vec = store.dense(q.intent_space, doc).ok_or_else(|| missing(q.intent_space))?;
    let intent = dot(q.intent, in_vec);
    Ok(Similarity {
        text_image,
        intent: Some(intent),
        blended: long_query_blend(intent, text_image, intent_weight),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoredCandidate {
    pub doc: DocId,
    pub first_round: f64,
    pub first_round_norm: f64,
    /// Present for the top `depth` candidates only.
    pub similarity: Option<Similarity>,
    pub final_score: Option<f64>,
}

/// Rescores the top `cfg.depth` candidates by first-round score.
///
/// `first_round_norm` is min-max normalized over the full candidate set.
/// The output lists rescored candidates by descending final score (ties by
/// ascending doc), followed by the rest in first-round order.
pub fn rescore_topk(
    candidates: &[(DocId, f64)],
    store: &dyn DenseLookup,
    query: &QueryVectors<'_>,
    cfg: &RescoreConfig,
    long_query: bool,
) -> Result<Vec<RescoredCandidate>, RankingError> {
    let mut ordered = candidates.to_vec();
    ordered.sort_by(by_score_desc);
    let (min, max) = ordered.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        (lo.min(c.1), hi.max(c.1))
    });
    let cut = cfg.depth.min(ordered.len());
    let mut head = Vec::with_capacity(cut);
    for &(doc, first_round) in &ordered[..cut] {
        let first_round_norm = min_max(first_round, min, max);
        let sim = similarity(store, query, doc, long_query, cfg.long_query_intent_weight)?;
        head.push(RescoredCandidate {
            doc,
            first_round,
            first_round_norm,
            similarity: Some(sim),
            final_score: Some(rescore_blend(sim.blended, first_round_norm, cfg.embed_weight)),
        });
    }
    head.sort_by(|a, b| {
        let (fa, fb) = (a.final_score.unwrap_or(0.0), b.final_score.unwrap_or(0.0));
        fb.total_cmp(&fa).then(a.doc.cmp(&b.doc))
    });
    head.extend(ordered[cut..].iter().map(|&(doc, first_round)| RescoredCandidate {
        doc,
        first_round,
        first_round_norm: min_max(first_round, min, max),
        similarity: None,
        final_score: None,
    }));
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct MapStore(HashMap<(String, DocId), Vec<f64>>);

    impl DenseLookup for MapStore {
        fn dense(&self, space: &str, doc: DocId) -> Option<&[f64]> {
            self.0.get(&(space.to_string(), doc)).map(Vec::as_slice)
        }
    }

    fn unit_at(cos: f64) -> Vec<f64> {
        vec![cos, (1.0 - cos * cos).max(0.0).sqrt()]
    }

    fn store(sims: &[(DocId, f64, f64)]) -> MapStore {
        let mut m = HashMap::new();
        for &(doc, ti, intent) in sims {
            m.insert(("ti".to_string(), doc), unit_at(ti));
            m.insert(("in".to_string(), doc), unit_at(intent));
        }
        MapStore(m)
    }

    const Q: [f64; 2] = [1.0, 0.0];

    fn qv() -> QueryVectors<'static> {
        QueryVectors {
            text_image_space: "ti",
            text_image: &Q,
            intent_space: "in",
            intent: &Q,
        }
    }

    fn feat(doc: DocId, bm25: f64, age_days: f64, locale: f64, engagement: u64, sparse_only: bool) -> CandidateFeatures {
        CandidateFeatures {
            doc,
            bm25,
            age_days,
            locale_match: locale,
            engagement,
            sparse_only,
        }
    }

    #[test]
    fn degenerate_weights() {
        let bm25_only = FirstRoundWeights {
            w_bm25: 1.0,
            w_recency: 0.0,
            w_locale: 0.0,
            w_behavior: 0.0,
            ..Default::default()
        };
        let cands = [feat(0, 3.0, 10.0, 0.0, 0, false), feat(1, 7.5, 10.0, 0.0, 0, false)];
        assert_eq!(first_round_scores(&cands, &bm25_only)[1], 1.0);

        let recency_only = FirstRoundWeights {
            w_bm25: 0.0,
            w_recency: 1.0,
            w_locale: 0.0,
            w_behavior: 0.0,
            recency_half_life_days: 30.0,
            ..Default::default()
        };
        let cands = [feat(0, 1.0, 30.0, 0.0, 0, false)];
        assert!((first_round_scores(&cands, &recency_only)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_candidate_hand_oracle() {
        // Defaults: 0.5 / 0.2 / 0.1 / 0.2, half-life 90 d, demotion 0.8.
        //   bm25 {4, 2, 0}       -> norm {1, 0.5, 0}
        //   age  {0, 90, 180}   -> recency {1, 0.5, 0.25}
        //   locale {1, 0, 1}
        //   engagement {9, 0, 3} -> prior {1, 0, ln 4 / ln 10}
        //   doc 2 is sparse-only.
        let cands = [
            feat(0, 4.0, 0.0, 1.0, 9, false),
            feat(1, 2.0, 90.0, 0.0, 0, false),
            feat(2, 0.0, 180.0, 1.0, 3, true),
        ];
        let got = first_round_scores(&cands, &FirstRoundWeights::default());
        let prior2 = 4f64.ln() / 10f64.ln();
        let expected = [
            0.5 + 0.2 + 0.1 + 0.2,
            0.25 + 0.1,
            0.8 * (0.2 * 0.25 + 0.1 + 0.2 * prior2),
        ];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn demotion_never_raises_a_score() {
        let w = FirstRoundWeights::default();
        let a = feat(0, 2.0, 40.0, 0.5, 3, false);
        let b = CandidateFeatures { sparse_only: true, ..a.clone() };
        let norms = CandidateNorms::from_candidates(&[a.clone(), feat(1, 5.0, 0.0, 0.0, 10, false)]);
        assert!(first_round_score(&b, &norms, &w) <= first_round_score(&a, &norms, &w));
        let no_demotion = FirstRoundWeights {
            sparse_only_demotion: 1.0,
            ..w
        };
        assert_eq!(first_round_score(&b, &norms, &no_demotion), first_round_score(&a, &norms, &no_demotion));
    }

    #[test]
    fn blend_arithmetic() {
        assert!((rescore_blend(0.9, 0.5, 2.0 / 3.0) - 0.766_666_666_666_666_7).abs() < 1e-12);
        assert!((long_query_blend(0.6, 0.9, 1.0 / 3.0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn depth_cutoff_keeps_tail_below() {
        // Doc 2 has the best embedding but sits third in the first round.
        let s = store(&[(0, 0.1, 0.0), (1, 0.2, 0.0), (2, 1.0, 0.0)]);
        let cands = [(0, 0.9), (1, 0.8), (2, 0.7)];
        let cfg = RescoreConfig {
            depth: 2,
            ..Default::default()
        };
        let out = rescore_topk(&cands, &s, &qv(), &cfg, false).unwrap();
        assert_eq!(out.iter().map(|c| c.doc).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(out[2].final_score.is_none());
    }

    #[test]
    fn embed_weight_zero_is_first_round_order() {
        let s = store(&[(0, 0.1, 0.0), (1, 0.9, 0.0), (2, 0.5, 0.0), (3, 0.2, 0.0)]);
        let cands = [(0, 0.2), (1, 0.9), (2, 0.9), (3, 0.1)];
        let cfg = RescoreConfig {
            embed_weight: 0.0,
            ..Default::default()
        };
        let out = rescore_topk(&cands, &s, &qv(), &cfg, false).unwrap();
        assert_eq!(out.iter().map(|c| c.doc).collect::<Vec<_>>(), vec![1, 2, 0, 3]);
    }

    #[test]
    fn missing_embedding() {
        let s = store(&[(0, 0.1, 0.0)]);
        let err = rescore_topk(&[(0, 1.0), (5, 0.5)], &s, &qv(), &RescoreConfig::default(), false).unwrap_err();
        assert_eq!(
            err,
            RankingError::MissingEmbedding {
                doc: 5,
                space: "ti".into()
            }
        );
    }

    #[test]
    fn config_validation() {
        assert!(FirstRoundWeights::default().validate().is_ok());
        let bad = FirstRoundWeights {
            w_bm25: 0.6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FirstRoundWeights {
            sparse_only_demotion: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(RescoreConfig { depth: 0, ..Default::default() }.validate().is_err());
    }
}
