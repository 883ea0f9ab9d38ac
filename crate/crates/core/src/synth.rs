//! Seeded synthetic corpora and query sets.
//!
//! Titles are built from pronounceable pseudo-words so they never collide
//! with the intent taxonomy. Every document gets one word no other document
//! has, so titles are pairwise distinct as token sets. Topics are real
//! taxonomy surfaces and resolve to intents. Some documents also carry a
//! latent intent whose surface never appears in any document's text, which
//! makes queries for it reachable only through intent recovery.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::intents::IntentGraph;
use crate::keyword::tokenize;
use crate::template::TemplateRecord;
use crate::DocId;

/// Topic surfaces that appear in document text.
pub const TOPICS: &[&str] = &[
    "birthday", "wedding", "graduation", "halloween", "christmas", "coffee", "cake", "flower", "beach", "dog",
    "cat", "summer", "sale", "travel", "pizza", "gift", "poster", "flyer", "invitation", "logo", "pink", "gold",
    "blue", "happy", "elegant",
];

/// Intent surfaces that never appear in document text.
pub const LATENT: &[&str] = &["yoga", "meditation", "hiking", "swimming", "cycling", "gardening", "unicorn", "mountain"];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kl", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const REGIONS: &[&str] = &["all", "us", "fr", "de", "jp", "kr"];
const LANGUAGES: &[&str] = &["en", "fr", "de", "ja", "ko"];
const BEHAVIORS: &[&str] = &["still", "animated", "video"];
const LICENSES: &[&str] = &["free", "premium"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub docs: usize,
    pub seed: u64,
    /// Size of the shared title vocabulary.
    pub shared_vocab: usize,
    pub min_title_words: usize,
    pub max_title_words: usize,
    pub max_topics: usize,
    /// Probability that a document carries a latent intent.
    pub latent_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 1000,
            seed: 7,
            shared_vocab: 2000,
            min_title_words: 5,
            max_title_words: 15,
            max_topics: 2,
            latent_rate: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn new(docs: usize, seed: u64) -> Self {
        Self {
            docs,
            seed,
            ..Default::default()
        }
    }

    /// No topics and no latent intents: document text is the title alone.
    pub fn titles_only(mut self) -> Self {
        self.max_topics = 0;
        self.latent_rate = 0.0;
        self
    }
}

/// Deterministic pseudo-word generator that skips taxonomy tokens.
pub struct Words {
    banned: HashSet<String>,
}

impl Default for Words {
    fn default() -> Self {
        Self::new(&IntentGraph::fixture())
    }
}

impl Words {
    pub fn new(graph: &IntentGraph) -> Self {
        let mut banned: HashSet<String> = graph.surfaces().flat_map(|(s, _)| tokenize(s)).collect();
        banned.extend(TOPICS.iter().chain(LATENT).map(|s| s.to_string()));
        Self { banned }
    }

    /// The `i`-th word; injective in `i`.
    pub fn word(&self, i: usize) -> String {
        let base = ONSETS.len() * VOWELS.len();
        let mut n = i;
        let mut w = String::new();
        // At least three syllables, then as many as `i` needs.
        for k in 0.. {
            let syl = n % base;
            w.push_str(ONSETS[syl / VOWELS.len()]);
            w.push_str(VOWELS[syl % VOWELS.len()]);
            n /= base;
            if n == 0 && k >= 2 {
                break;
            }
        }
        // A trailing marker keeps the encoding prefix-free and lets a banned
        // collision be escaped without clashing with another index.
        if self.banned.contains(&w) {
            w.push('x');
        }
        w
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<TemplateRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = Words::default();
    let shared: Vec<String> = (0..cfg.shared_vocab).map(|i| words.word(i)).collect();
    let mut out = Vec::with_capacity(cfg.docs);
    for d in 0..cfg.docs {
        let n = rng.random_range(cfg.min_title_words..=cfg.max_title_words.max(cfg.min_title_words));
        let mut title: Vec<String> = Vec::with_capacity(n);
        title.push(words.word(cfg.shared_vocab + d));
        while title.len() < n {
            let u: f64 = rng.random();
            title.push(shared[((u * u) * cfg.shared_vocab as f64) as usize].clone());
        }
        title.shuffle(&mut rng);
        let mut rec = TemplateRecord::new(format!("t{d:06}"), title.join(" "));

        let topics = rng.random_range(0..=cfg.max_topics);
        let mut chosen: Vec<&str> = TOPICS.choose_multiple(&mut rng, topics).copied().collect();
        chosen.sort_unstable();
        rec.topics = chosen.iter().map(|s| s.to_string()).collect();
        rec.intents = rec.topics.clone();
        if rng.random_bool(cfg.latent_rate) {
            rec.intents.push(LATENT.choose(&mut rng).unwrap().to_string());
        }
        rec.region = REGIONS.choose(&mut rng).unwrap().to_string();
        rec.language = LANGUAGES.choose(&mut rng).unwrap().to_string();
        rec.date = format!("{}-{:02}-{:02}", rng.random_range(2020..=2023), rng.random_range(1..=12), rng.random_range(1..=28));
        rec.behavior = BEHAVIORS.choose(&mut rng).unwrap().to_string();
        rec.license = LICENSES.choose(&mut rng).unwrap().to_string();
        rec.impressions = rng.random_range(0..10_000);
        rec.clicks = rng.random_range(0..=rec.impressions / 10);
        rec.edits = rng.random_range(0..=rec.clicks);
        rec.exports = rng.random_range(0..=rec.edits);
        out.push(rec);
    }
    out
}

pub fn write_jsonl(path: &Path, records: &[TemplateRecord]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// One evaluation query with the documents it should find.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub text: String,
    /// For title-as-query sets, the document the title came from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<DocId>,
    pub relevant: Vec<DocId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuerySet {
    pub seed: u64,
    pub queries: Vec<EvalQuery>,
}

impl EvalQuerySet {
    pub fn validate(&self, doc_count: usize) -> Result<(), String> {
        for q in &self.queries {
            for &d in q.relevant.iter().chain(&q.source) {
                if d as usize >= doc_count {
                    return Err(format!("query `{}` references unknown document {d}", q.text));
                }
            }
        }
        Ok(())
    }
}

/// Titles of `n` sampled documents (all of them when `n >= len`), each
/// with its source document.
pub fn title_queries(records: &[TemplateRecord], n: usize, seed: u64) -> EvalQuerySet {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    if n < records.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
    }
    EvalQuerySet {
        seed,
        queries: idx
            .into_iter()
            .map(|i| EvalQuery {
                text: records[i].title.clone(),
                source: Some(i as DocId),
                relevant: vec![i as DocId],
            })
            .collect(),
    }
}

/// Topic queries; the documents tagged with the topic count as clicked.
pub fn clicked_queries(records: &[TemplateRecord], seed: u64) -> EvalQuerySet {
    let mut by_topic: BTreeMap<&str, Vec<DocId>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for t in &r.topics {
            by_topic.entry(t.as_str()).or_default().push(i as DocId);
        }
    }
    EvalQuerySet {
        seed,
        queries: by_topic
            .into_iter()
            .map(|(t, relevant)| EvalQuery {
                text: t.to_string(),
                source: None,
                relevant,
            })
            .collect(),
    }
}

/// Half latent-intent queries, reachable only through recovery, and half
/// single shared-vocabulary words that match by keyword.
pub fn null_heavy_queries(records: &[TemplateRecord], seed: u64) -> EvalQuerySet {
    let mut queries = Vec::new();
    for &latent in LATENT {
        let relevant: Vec<DocId> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.intents.iter().any(|i| i == latent))
            .map(|(i, _)| i as DocId)
            .collect();
        if !relevant.is_empty() {
            queries.push(EvalQuery {
                text: latent.to_string(),
                source: None,
                relevant,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = queries.len();
    for _ in 0..n {
        let i = rng.random_range(0..records.len());
        let tokens = tokenize(&records[i].title);
        let word = tokens.choose(&mut rng).unwrap().clone();
        queries.push(EvalQuery {
            text: word,
            source: None,
            relevant: vec![i as DocId],
        });
    }
    EvalQuerySet { seed, queries }
}

/// `n` queries of one or two shared-vocabulary words.
pub fn short_queries(n: usize, shared_vocab: usize, seed: u64) -> Vec<String> {
    let words = Words::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..=2);
            (0..k)
                .map(|_| words.word(rng.random_range(0..shared_vocab)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_are_distinct_and_untaxonomic() {
        let w = Words::default();
        let mut seen = HashSet::new();
        for i in 0..20_000 {
            let word = w.word(i);
            assert!(!w.banned.contains(&word), "{word}");
            assert!(seen.insert(word), "collision at {i}");
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::new(50, 3);
        assert_eq!(generate(&cfg), generate(&cfg));
        assert_ne!(generate(&cfg), generate(&SynthConfig::new(50, 4)));
        for r in generate(&cfg) {
            let n = tokenize(&r.title).len();
            assert!((5..=15).contains(&n), "{}", r.title);
            for l in LATENT {
                assert!(!tokenize(&r.title).iter().any(|t| t == l));
                assert!(!r.topics.iter().any(|t| t == l));
            }
        }
    }
}
