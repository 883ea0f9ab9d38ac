//! Keyword recall: tokenization, per-field BM25 with field boosts, and hard
//! facet filters.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::{Behavior, DocAttributes, License, REGION_ALL};
use crate::DocId;

/// Lowercases, strips punctuation and splits on whitespace.
///
/// ```
/// use hybrid_search::keyword::tokenize;
/// assert_eq!(tokenize("Coffee, Instagram!"), ["coffee", "instagram"]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Topics,
    Mood,
    Style,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Title, Field::Topics, Field::Mood, Field::Style];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldBoosts {
    pub title: f64,
    pub topics: f64,
    pub mood: f64,
    pub style: f64,
}

impl Default for FieldBoosts {
    fn default() -> Self {
        Self {
            title: 2.0,
            topics: 1.5,
            mood: 1.0,
            style: 1.0,
        }
    }
}

impl FieldBoosts {
    pub fn get(&self, field: Field) -> f64 {
        match field {
            Field::Title => self.title,
            Field::Topics => self.topics,
            Field::Mood => self.mood,
            Field::Style => self.style,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeywordConfig {
    pub k1: f64,
    pub b: f64,
    pub boosts: FieldBoosts,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            boosts: FieldBoosts::default(),
        }
    }
}

impl KeywordConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(format!("keyword.k1 must be >= 0, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(format!("keyword.b must be in [0, 1], got {}", self.b));
        }
        for field in Field::ALL {
            let boost = self.boosts.get(field);
            if !(boost.is_finite() && boost > 0.0) {
                return Err(format!("keyword boost for {field:?} must be > 0, got {boost}"));
            }
        }
        Ok(())
    }
}

/// Hard constraints on facet attributes. `None` means unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<Behavior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub license: Option<License>,
}

impl FilterSpec {
    pub fn is_empty(&self) -> bool {
        self == &FilterSpec::default()
    }

    /// A template with region `all` satisfies every region constraint.
    pub fn matches(&self, doc: &DocAttributes) -> bool {
        if let Some(lang) = &self.language {
            if &doc.language != lang {
                return false;
            }
        }
        if let Some(region) = &self.region {
            if region != REGION_ALL && doc.region != REGION_ALL && &doc.region != region {
                return false;
            }
        }
        if let Some(b) = self.behavior {
            if doc.behavior != b {
                return false;
            }
        }
        if let Some(l) = self.license {
            if doc.license != l {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeywordError {
    #[error("documents must be added in id order: expected {expected}, got {got}")]
    OutOfOrder { expected: DocId, got: DocId },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct FieldIndex {
    pub(crate) postings: BTreeMap<String, Vec<(DocId, u32)>>,
    pub(crate) doc_len: Vec<u32>,
    pub(crate) total_len: u64,
}

impl FieldIndex {
    fn add(&mut self, doc: DocId, tokens: &[String]) {
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        for (term, count) in tf {
            self.postings.entry(term.to_string()).or_default().push((doc, count));
        }
        self.doc_len.push(tokens.len() as u32);
        self.total_len += tokens.len() as u64;
    }
}

/// The per-field token streams of one template.
#[derive(Debug, Clone, Default)]
pub struct FieldTexts {
    pub title: Vec<String>,
    pub topics: Vec<String>,
    pub mood: Vec<String>,
    pub style: Vec<String>,
}

impl FieldTexts {
    pub fn from_parts(title: &str, topics: &[String], mood: &[String], style: &[String]) -> Self {
        let join = |parts: &[String]| parts.iter().flat_map(|p| tokenize(p)).collect();
        Self {
            title: tokenize(title),
            topics: join(topics),
            mood: join(mood),
            style: join(style),
        }
    }

    fn get(&self, field: Field) -> &[String] {
        match field {
            Field::Title => &self.title,
            Field::Topics => &self.topics,
            Field::Mood => &self.mood,
            Field::Style => &self.style,
        }
    }
}

/// BM25 inverted index over title, topics, mood and style.
///
/// Each field keeps its own document frequencies and average length; a
/// document's score is the boost-weighted sum of its per-field BM25 scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeywordIndex {
    pub(crate) fields: [FieldIndex; 4],
    pub(crate) doc_count: u32,
}

impl KeywordIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.doc_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.doc_count == 0
    }

    /// Documents must be added densely: 0, 1, 2, ...
    pub fn add_document(&mut self, doc: DocId, texts: &FieldTexts) -> Result<(), KeywordError> {
        if doc != self.doc_count {
            return Err(KeywordError::OutOfOrder {
                expected: self.doc_count,
                got: doc,
            });
        }
        for (i, field) in Field::ALL.iter().enumerate() {
            self.fields[i].add(doc, texts.get(*field));
        }
        self.doc_count += 1;
        Ok(())
    }

    /// Documents containing at least one query token in an indexed field and
    /// accepted by `keep`, by descending BM25 score (ties by ascending id).
    /// Repeated query tokens count once.
    pub fn kw_match(
        &self,
        query_tokens: &[String],
        cfg: &KeywordConfig,
        keep: &dyn Fn(DocId) -> bool,
        limit: usize,
    ) -> Vec<(DocId, f64)> {
        if query_tokens.is_empty() || self.doc_count == 0 || limit == 0 {
            return Vec::new();
        }
        let n = self.doc_count as f64;
        let mut seen = Vec::with_capacity(query_tokens.len());
        let mut scores: HashMap<DocId, f64> = HashMap::new();
        for token in query_tokens {
            if seen.contains(&token) {
                continue;
            }
            seen.push(token);
            for (fi, field) in Field::ALL.iter().enumerate() {
                let index = &self.fields[fi];
                let Some(postings) = index.postings.get(token.as_str()) else {
                    continue;
                };
                let boost = cfg.boosts.get(*field);
                let df = postings.len() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let avgdl = index.total_len as f64 / n;
                for &(doc, tf) in postings {
                    if !keep(doc) {
                        continue;
                    }
                    let dl = index.doc_len[doc as usize] as f64;
                    let tf = tf as f64;
                    let norm = tf * (cfg.k1 + 1.0) / (tf + cfg.k1 * (1.0 - cfg.b + cfg.b * dl / avgdl));
                    *scores.entry(doc).or_insert(0.0) += boost * idf * norm;
                }
            }
        }
        let mut ranked: Vec<(DocId, f64)> = scores.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(limit);
        ranked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn attrs(region: &str, language: &str, behavior: Behavior, license: License) -> DocAttributes {
        DocAttributes {
            region: region.into(),
            language: language.into(),
            date: NaiveDate::from_ymd_opt(2023, 12, 12).unwrap(),
            behavior,
            license,
            impressions: 0,
            clicks: 0,
            edits: 0,
            exports: 0,
        }
    }

    fn index_of(titles: &[&str]) -> KeywordIndex {
        let mut idx = KeywordIndex::new();
        for (i, t) in titles.iter().enumerate() {
            idx.add_document(i as DocId, &FieldTexts::from_parts(t, &[], &[], &[])).unwrap();
        }
        idx
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_cases() {
        assert_eq!(tokenize("Coffee, Instagram!"), vec!["coffee", "instagram"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("colorful coffee promotion instagram").len(), 4);
        assert_eq!(tokenize("Father's  Day\t4th-of-July"), vec!["fathers", "day", "4thofjuly"]);
    }

    #[test]
    fn unicorn_query_hits_only_the_unicorn_template() {
        let mut idx = KeywordIndex::new();
        let topics: Vec<String> = "confetti, fantasy, glitter, gold, kids, sparkle, star, unicorn"
            .split(", ")
            .map(String::from)
            .collect();
        idx.add_document(
            0,
            &FieldTexts::from_parts("Pink Unicorn Birthday Party Instagram Portrait Post", &topics, &["happy".into(), "joyful".into()], &["bright".into()]),
        )
        .unwrap();
        idx.add_document(1, &FieldTexts::from_parts("Coffee Shop Opening Flyer", &[], &[], &[])).unwrap();
        idx.add_document(2, &FieldTexts::from_parts("Wedding Invitation Card", &[], &[], &[])).unwrap();
        let hits = idx.kw_match(&toks("unicorn"), &KeywordConfig::default(), &|_| true, 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, 0);
        assert!(idx.kw_match(&toks("zebra"), &KeywordConfig::default(), &|_| true, 10).is_empty());
    }

    #[test]
    fn bm25_hand_oracle() {
        // N = 2, df = 2, both titles have 3 tokens, title boost 2.0.
        // idf = ln(1 + 0.5 / 2.5) = ln 1.2
        // tf = 2: 2 * 2.2 / (2 + 1.2) = 1.375 ; tf = 1: 2.2 / 2.2 = 1
        let idx = index_of(&["unicorn unicorn party", "unicorn pink party"]);
        let hits = idx.kw_match(&toks("unicorn"), &KeywordConfig::default(), &|_| true, 10);
        let ln12 = 0.182_321_556_793_954_6_f64;
        assert_eq!(hits[0].0, 0);
        assert_eq!(hits[1].0, 1);
        assert!((hits[0].1 - 2.0 * ln12 * 1.375).abs() < 1e-12);
        assert!((hits[1].1 - 2.0 * ln12).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_id_and_limit_truncates() {
        let idx = index_of(&["red card", "red card", "red card"]);
        let hits = idx.kw_match(&toks("red"), &KeywordConfig::default(), &|_| true, 2);
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn out_of_order_add_is_rejected() {
        let mut idx = KeywordIndex::new();
        assert!(idx.add_document(1, &FieldTexts::default()).is_err());
    }

    #[test]
    fn filters() {
        let doc = attrs("all", "en-US", Behavior::Still, License::Premium);
        assert!(FilterSpec::default().matches(&doc));
        let f = FilterSpec {
            region: Some("FR".into()),
            ..Default::default()
        };
        assert!(f.matches(&doc));
        let fr_only = attrs("FR", "fr-FR", Behavior::Video, License::Free);
        let us = FilterSpec {
            region: Some("US".into()),
            ..Default::default()
        };
        assert!(!us.matches(&fr_only));
        let lic = FilterSpec {
            license: Some(License::Free),
            behavior: Some(Behavior::Video),
            ..Default::default()
        };
        assert!(!lic.matches(&doc));
        assert!(lic.matches(&fr_only));
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn filter_soundness(seed in 0u64..500) {
            let behaviors = [Behavior::Still, Behavior::Animated, Behavior::Video];
            let docs: Vec<DocAttributes> = (0..20u64)
                .map(|i| {
                    let h = crate::embedding::splitmix64(seed * 100 + i);
                    attrs(
                        ["all", "US", "FR"][(h % 3) as usize],
                        ["en-US", "fr-FR"][(h >> 8) as usize % 2],
                        behaviors[(h >> 16) as usize % 3],
                        if h >> 24 & 1 == 0 { License::Free } else { License::Premium },
                    )
                })
                .collect();
            let titles: Vec<&str> = (0..20).map(|_| "summer sale poster").collect();
            let idx = index_of(&titles);
            let filter = FilterSpec {
                region: Some("US".into()),
                behavior: Some(behaviors[(seed % 3) as usize]),
                ..Default::default()
            };
            let keep = |d: DocId| filter.matches(&docs[d as usize]);
            let hits = idx.kw_match(&toks("sale"), &KeywordConfig::default(), &keep, usize::MAX);
            for (d, _) in &hits {
                prop_assert!(filter.matches(&docs[*d as usize]));
            }
            let expected = docs.iter().filter(|d| filter.matches(d)).count();
            prop_assert_eq!(hits.len(), expected);
        }
    }
}
