use std::collections::HashSet;

use hybrid_search::keyword::{tokenize, FieldTexts, KeywordConfig, KeywordIndex};
use hybrid_search::DocId;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &["red", "card", "party", "unicorn", "sale", "summer", "flyer", "gold", "cake", "menu"];

struct Doc {
    fields: [Vec<String>; 4],
}

fn random_docs(seed: u64, n: usize) -> Vec<Doc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = |rng: &mut ChaCha8Rng, max: usize| -> Vec<String> {
        let k = rng.random_range(0..=max);
        (0..k).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
    };
    (0..n)
        .map(|_| Doc {
            fields: [words(&mut rng, 8), words(&mut rng, 3), words(&mut rng, 2), words(&mut rng, 2)],
        })
        .collect()
}

fn index(docs: &[Doc]) -> KeywordIndex {
    let mut idx = KeywordIndex::new();
    for (i, d) in docs.iter().enumerate() {
        let texts = FieldTexts::from_parts(&d.fields[0].join(" "), &d.fields[1], &d.fields[2], &d.fields[3]);
        idx.add_document(i as DocId, &texts).unwrap();
    }
    idx
}

/// Textbook BM25 over each field, recomputed from raw token lists.
fn oracle(docs: &[Doc], query: &[String], cfg: &KeywordConfig) -> Vec<(DocId, f64)> {
    let boosts = [cfg.boosts.title, cfg.boosts.topics, cfg.boosts.mood, cfg.boosts.style];
    let n = docs.len() as f64;
    let unique: Vec<&String> = {
        let mut seen = HashSet::new();
        query.iter().filter(|t| seen.insert(t.as_str())).collect()
    };
    let mut out = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        let mut score = 0.0;
        let mut hit = false;
        for t in &unique {
            for f in 0..4 {
                let tf = doc.fields[f].iter().filter(|w| w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let df = docs.iter().filter(|o| o.fields[f].contains(t)).count() as f64;
                let avgdl = docs.iter().map(|o| o.fields[f].len()).sum::<usize>() as f64 / n;
                let dl = doc.fields[f].len() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += boosts[f] * idf * tf * (cfg.k1 + 1.0) / (tf + cfg.k1 * (1.0 - cfg.b + cfg.b * dl / avgdl));
            }
        }
        if hit {
            out.push((d as DocId, score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

#[test]
fn unicorn_example() {
    let titles = ["unicorn birthday invitation", "pink party flyer", "gold sale banner"];
    let mut idx = KeywordIndex::new();
    for (i, t) in titles.iter().enumerate() {
        idx.add_document(i as DocId, &FieldTexts::from_parts(t, &[], &[], &[])).unwrap();
    }
    let hits = idx.kw_match(&tokenize("Unicorn"), &KeywordConfig::default(), &|_| true, 10);
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].0, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bm25_matches_oracle(seed in 0u64..10_000, n in 1usize..100, q in prop::collection::vec(0usize..10, 1..4)) {
        let docs = random_docs(seed, n);
        let idx = index(&docs);
        let query: Vec<String> = q.iter().map(|&i| VOCAB[i].to_string()).collect();
        let cfg = KeywordConfig::default();
        let got = idx.kw_match(&query, &cfg, &|_| true, usize::MAX);
        let want = oracle(&docs, &query, &cfg);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.1 - w.1).abs() <= 1e-9, "{:?} vs {:?}", g, w);
        }
        // Order agrees up to float ties.
        for w in got.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
        let got_set: HashSet<DocId> = got.iter().map(|h| h.0).collect();
        let want_set: HashSet<DocId> = want.iter().map(|h| h.0).collect();
        prop_assert_eq!(got_set, want_set);
    }

    #[test]
    fn keep_predicate_is_a_hard_filter(seed in 0u64..10_000, modulus in 2u32..5) {
        let docs = random_docs(seed, 60);
        let idx = index(&docs);
        let query = vec!["card".to_string(), "party".to_string()];
        let cfg = KeywordConfig::default();
        let all = idx.kw_match(&query, &cfg, &|_| true, usize::MAX);
        let kept = idx.kw_match(&query, &cfg, &|d| d % modulus == 0, usize::MAX);
        let expected: Vec<(DocId, f64)> = all.into_iter().filter(|(d, _)| d % modulus == 0).collect();
        prop_assert_eq!(kept, expected);
    }
}
