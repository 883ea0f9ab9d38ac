mod common;

use std::collections::{BTreeSet, HashSet};

use common::*;
use hybrid_search::config::EngineConfig;
use hybrid_search::embedding::{dot, sparse_dot, toy_embed, Sparsifier};
use hybrid_search::keyword::{tokenize, FilterSpec};
use hybrid_search::pipeline::{
    long_query_scan, plan, query_vectors, search, Engine, Route, SearchError, SearchRequest,
};
use hybrid_search::ranking::{long_query_blend, QueryVectors};
use hybrid_search::intents::IntentGraph;
use hybrid_search::template::License;
use hybrid_search::DocId;

#[test]
fn routing_examples() {
    let cfg = EngineConfig::default();
    let g = IntentGraph::fixture();
    let none = FilterSpec::default();
    assert_eq!(plan("coffee instagram", &none, &cfg, &g).unwrap().route, Route::Hybrid);
    assert_eq!(plan("colorful coffee promotion instagram", &none, &cfg, &g).unwrap().route, Route::Long);
    assert_eq!(plan("happy new year", &none, &cfg, &g).unwrap().route, Route::Hybrid);
    let p = plan("Happy New-Year!", &none, &cfg, &g).unwrap();
    assert_eq!(p.word_count, 2);
    assert_eq!(p.intents, vec!["mood.happy"]);
    assert_eq!(plan("  ?! ", &none, &cfg, &g), Err(SearchError::EmptyQuery));
}

#[test]
fn own_title_ranks_first() {
    let snap = snapshot(&fixture(), &EngineConfig::default());
    for (i, r) in fixture().iter().enumerate() {
        let resp = search(&snap, &SearchRequest::new(&r.title)).unwrap();
        assert_eq!(resp.results[0].doc, i as DocId, "query `{}`", r.title);
        let long = tokenize(&r.title).len() >= 4;
        assert_eq!(resp.plan.route == Route::Long, long);
        assert_eq!(resp.results[0].provenance.long_path, long);
        if !long {
            assert!(resp.results[0].provenance.keyword);
        }
    }
}

#[test]
fn vacuous_recall_is_null() {
    let mut cfg = EngineConfig::default();
    cfg.min_dims = cfg.text_image().sparsifier_top_k;
    let snap = snapshot(&fixture(), &cfg);
    let resp = search(&snap, &SearchRequest::new("zqx vlorp").explained()).unwrap();
    assert!(resp.results.is_empty());
    assert!(resp.plan.flags.null && resp.plan.flags.low);
    assert!(!resp.plan.flags.recovery_applied);
    assert_eq!(resp.total, 0);
}

fn hot_yoga_cfg() -> EngineConfig {
    // Four words would route long; the recovery example needs the hybrid route.
    EngineConfig {
        long_query_min_words: 5,
        ..EngineConfig::default()
    }
}

#[test]
fn hot_yoga_studio_opening_recovers_yoga_templates() {
    let snap = snapshot(&fixture(), &hot_yoga_cfg());
    let resp = search(&snap, &SearchRequest::new("hot yoga studio opening").explained()).unwrap();
    assert_eq!(resp.plan.route, Route::Hybrid);
    assert_eq!(resp.plan.intents, vec!["act.yoga"]);
    assert_eq!(resp.organic_count, 0);
    let stages = resp.stages.unwrap();
    assert_eq!((stages.keyword, stages.sparse), (0, 0));
    let ids: Vec<&str> = resp.results.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, vec!["stretch-a", "stretch-b"]);
    assert!(resp.results.iter().all(|r| r.provenance.recovery && !r.provenance.keyword));
    assert!(resp.plan.flags.recovery_applied);
    assert!(!resp.plan.flags.null);
    assert!(resp.plan.flags.low);
}

#[test]
fn disabling_recovery_only_drops_the_recovery_block() {
    let on = snapshot(&fixture(), &hot_yoga_cfg());
    let off = snapshot(
        &fixture(),
        &EngineConfig {
            recovery_enabled: false,
            ..hot_yoga_cfg()
        },
    );
    for q in ["hot yoga studio opening", "birthday card", "spooky yoga", "calm latte"] {
        let a = search(&on, &SearchRequest::new(q)).unwrap();
        let b = search(&off, &SearchRequest::new(q)).unwrap();
        let organic: Vec<_> = a.results.iter().filter(|r| !r.provenance.recovery).cloned().collect();
        assert_eq!(organic, b.results, "query `{q}`");
        assert_eq!(a.organic_count, b.organic_count);
        assert_eq!(b.recovered_count, 0);
        let first_recovered = a.results.iter().position(|r| r.provenance.recovery).unwrap_or(a.results.len());
        assert!(a.results[first_recovered..].iter().all(|r| r.provenance.recovery));
    }
}

#[test]
fn filters_constrain_every_path() {
    let mut records = fixture();
    records[4].license = "premium".into();
    let snap = snapshot(&records, &hot_yoga_cfg());
    let premium_only = FilterSpec {
        license: Some(License::Premium),
        ..Default::default()
    };
    let req = SearchRequest::new("hot yoga studio opening").with_filters(premium_only.clone());
    let ids: Vec<String> = search(&snap, &req).unwrap().results.into_iter().map(|r| r.id).collect();
    assert_eq!(ids, vec!["stretch-a"]);
    let req = SearchRequest::new("birthday card").with_filters(premium_only.clone());
    assert!(search(&snap, &req).unwrap().results.is_empty());
    let req = SearchRequest::new("morning stretch class flyer").with_filters(premium_only);
    let resp = search(&snap, &req).unwrap();
    assert_eq!(resp.results.len(), 1);
    assert_eq!(resp.organic_count, 1);
}

#[test]
fn long_scan_equals_brute_force() {
    let (_, snap) = synth_snapshot(100, 11, &small_cfg());
    let cfg = snap.config().clone();
    for text in ["kabade tunopi lisera gomu", "birthday coffee pink elegant poster"] {
        let (ti, intent) = query_vectors(&snap, text, true).unwrap();
        let qv = QueryVectors {
            text_image_space: &cfg.text_image_space,
            text_image: &ti,
            intent_space: &cfg.intent_space,
            intent: &intent,
        };
        let (hits, scanned) = long_query_scan(&snap, &qv, &FilterSpec::default(), 1.0 / 3.0, usize::MAX).unwrap();
        assert_eq!(scanned, 100);
        let q_ti = toy_embed(text, cfg.text_image()).unwrap();
        let q_in = toy_embed(text, cfg.intent()).unwrap();
        let mut oracle: Vec<(DocId, f64)> = (0..100)
            .map(|d| {
                let t = dot(q_ti.values(), snap.dense_store("text_image").unwrap().get(d).unwrap());
                let i = dot(q_in.values(), snap.dense_store("intent").unwrap().get(d).unwrap());
                (d, long_query_blend(i, t, 1.0 / 3.0))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got: Vec<(DocId, f64)> = hits.iter().map(|h| (h.doc, h.similarity.blended)).collect();
        assert_eq!(got, oracle);
        let (top, _) = long_query_scan(&snap, &qv, &FilterSpec::default(), 1.0 / 3.0, 7).unwrap();
        assert_eq!(top.iter().map(|h| h.doc).collect::<Vec<_>>(), oracle[..7].iter().map(|o| o.0).collect::<Vec<_>>());
    }
}

#[test]
fn long_scan_edge_cases() {
    let snap = snapshot(&[rec("only", "a lone template")], &EngineConfig::default());
    let cfg = snap.config();
    let text = "lone template for testing";
    let (ti, intent) = query_vectors(&snap, text, true).unwrap();
    let qv = QueryVectors {
        text_image_space: &cfg.text_image_space,
        text_image: &ti,
        intent_space: &cfg.intent_space,
        intent: &intent,
    };
    let (hits, _) = long_query_scan(&snap, &qv, &FilterSpec::default(), 1.0 / 3.0, usize::MAX).unwrap();
    assert_eq!(hits.len(), 1);
    let t = dot(&ti, snap.dense_store("text_image").unwrap().get(0).unwrap());
    let i = dot(&intent, snap.dense_store("intent").unwrap().get(0).unwrap());
    assert_eq!(hits[0].similarity.blended, long_query_blend(i, t, 1.0 / 3.0));
    let nothing = FilterSpec {
        language: Some("xx".into()),
        ..Default::default()
    };
    assert!(long_query_scan(&snap, &qv, &nothing, 1.0 / 3.0, usize::MAX).unwrap().0.is_empty());
}

#[test]
fn responses_are_reproducible() {
    let (records, snap) = synth_snapshot(300, 5, &small_cfg());
    let again = snapshot(&records, &small_cfg());
    for q in ["birthday", "coffee pink", "yoga", &records[3].title] {
        let req = SearchRequest::new(q).explained();
        let a = serde_json::to_string(&search(&snap, &req).unwrap()).unwrap();
        let b = serde_json::to_string(&search(&again, &req).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn hybrid_provenance_is_sound() {
    let (records, snap) = synth_snapshot(500, 9, &small_cfg());
    let cfg = snap.config().clone();
    let g = snap.graph();
    let queries = ["birthday", "coffee gift", "yoga", "unicorn pink", "halloween sale", "meditation"];
    for q in queries {
        let resp = search(&snap, &SearchRequest::new(q).with_page_size(1000)).unwrap();
        assert_eq!(resp.plan.route, Route::Hybrid);
        let mut seen = HashSet::new();
        let q_tokens: HashSet<String> = tokenize(q).into_iter().collect();
        let q_sparse = snap.sparsifier().sparsify(&toy_embed(q, cfg.text_image()).unwrap()).unwrap();
        let q_intents: BTreeSet<String> = resp.plan.intents.iter().cloned().collect();
        let mut recovery_started = false;
        for r in &resp.results {
            assert!(seen.insert(r.doc), "duplicate {}", r.doc);
            let rec = &records[r.doc as usize];
            let p = r.provenance;
            assert!(p.keyword || p.sparse || p.recovery);
            if p.keyword {
                let text = format!("{} {} {} {}", rec.title, rec.topics.join(" "), rec.mood.join(" "), rec.style.join(" "));
                assert!(tokenize(&text).iter().any(|t| q_tokens.contains(t)));
            }
            if p.sparse {
                let doc_sparse = snap.sparsifier().sparsify(&toy_embed(&rec.embedding_text(), cfg.text_image()).unwrap()).unwrap();
                assert!(sparse_dot(&q_sparse, &doc_sparse).unwrap().matched_dims >= cfg.min_dims);
            }
            if p.recovery {
                recovery_started = true;
                let doc_intents: BTreeSet<String> =
                    rec.intents.iter().map(|i| g.node(g.resolve(i).unwrap()).unwrap().id.clone()).collect();
                assert!(doc_intents.intersection(&q_intents).next().is_some());
            } else {
                assert!(!recovery_started, "organic result after recovery block");
            }
        }
    }
}

#[test]
fn pagination_is_offset_based() {
    let (_, snap) = synth_snapshot(300, 2, &small_cfg());
    let full = search(&snap, &SearchRequest::new("birthday").with_page_size(40)).unwrap();
    let mut req = SearchRequest::new("birthday").with_page_size(5);
    req.offset = 5;
    let page = search(&snap, &req).unwrap();
    assert_eq!(page.results, full.results[5..10].to_vec());
    assert_eq!(page.results[0].rank, 6);
}

#[test]
fn engine_swap_is_atomic_per_query() {
    let engine = Engine::new();
    assert_eq!(engine.search(&SearchRequest::new("x")), Err(SearchError::SnapshotNotLoaded));
    engine.swap(snapshot(&fixture(), &EngineConfig::default()));
    let held = engine.snapshot().unwrap();
    let old = engine.swap(snapshot(&[rec("z", "zebra")], &EngineConfig::default())).unwrap();
    assert!(std::sync::Arc::ptr_eq(&held, &old));
    assert_eq!(held.doc_count(), fixture().len());
    assert_eq!(engine.snapshot().unwrap().doc_count(), 1);
}

#[test]
fn concurrent_queries_match_serial_replay() {
    let (_, snap) = synth_snapshot(200, 4, &small_cfg());
    let engine = std::sync::Arc::new(Engine::with_snapshot(snap));
    let queries: Vec<String> = ["birthday", "gift pink", "yoga", "coffee", "sale summer"].iter().map(|s| s.to_string()).collect();
    let serial: Vec<_> = queries.iter().map(|q| engine.search(&SearchRequest::new(q)).unwrap()).collect();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let engine = engine.clone();
            let queries = queries.clone();
            std::thread::spawn(move || queries.iter().map(|q| engine.search(&SearchRequest::new(q)).unwrap()).collect::<Vec<_>>())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), serial);
    }
}
