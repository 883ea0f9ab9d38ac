mod common;

use common::{long_route_mrr_oracle, rec, small_cfg, snapshot};
use hybrid_search::config::EngineConfig;
use hybrid_search::eval::{
    clicked_eval, dense_scan_topk, latency_bench, null_rate_eval, sparse_vs_dense_overlap, title_as_query_eval,
};
use hybrid_search::synth::{
    clicked_queries, generate, null_heavy_queries, title_queries, EvalQuery, EvalQuerySet, SynthConfig,
};

#[test]
fn distinct_titles_retrieve_themselves() {
    let records = generate(&SynthConfig::new(1000, 11).titles_only());
    let snap = snapshot(&records, &small_cfg());
    let report = title_as_query_eval(&snap, &title_queries(&records, usize::MAX, 0)).unwrap();
    assert_eq!(report.aggregates.queries, 1000);
    assert_eq!(report.aggregates.mrr, 1.0);
    assert_eq!(report.aggregates.recall_at_1, 1.0);
    assert_eq!(report.recompute(), report.aggregates);
}

#[test]
fn title_protocol_matches_index_bypassing_oracle() {
    let cfg = small_cfg();
    let records = generate(&SynthConfig::new(1000, 12));
    let snap = snapshot(&records, &cfg);
    let set = title_queries(&records, 200, 5);
    let report = title_as_query_eval(&snap, &set).unwrap();
    let oracle = long_route_mrr_oracle(&records, &cfg, &set);
    assert!((report.aggregates.mrr - oracle).abs() < 1e-9, "{} vs {oracle}", report.aggregates.mrr);
    assert!(report.aggregates.mrr > 0.5);
}

#[test]
fn duplicate_titles_rank_within_the_pair() {
    let title = "violet harbor lantern festival poster";
    let records = vec![rec("a", title), rec("b", title), rec("c", "violet lantern"), rec("d", "quiet harbor morning")];
    let snap = snapshot(&records, &small_cfg());
    let report = title_as_query_eval(&snap, &title_queries(&records, usize::MAX, 0)).unwrap();
    assert!(report.rows[0].rank.unwrap() <= 2);
    assert!(report.rows[1].rank.unwrap() <= 2);
}

#[test]
fn recovery_lowers_null_rate_on_null_heavy_queries() {
    // Full dense width: at 64 dims sparse recall is broad enough to give
    // most latent queries a stray organic hit.
    let records = generate(&SynthConfig::new(2000, 13));
    let snap = snapshot(&records, &EngineConfig::default());
    let set = null_heavy_queries(&records, 1);
    let (null_off, low_off) = null_rate_eval(&snap, &set, false).unwrap();
    let (null_on, low_on) = null_rate_eval(&snap, &set, true).unwrap();
    assert!(null_on < null_off, "{null_on} vs {null_off}");
    assert!(low_on <= low_off);
}

#[test]
fn recovery_is_vacuous_without_intents() {
    let records = generate(&SynthConfig::new(500, 14).titles_only());
    let snap = snapshot(&records, &small_cfg());
    let set = EvalQuerySet {
        seed: 0,
        queries: ["zzqx", "blorptang", "kraumvelt"]
            .iter()
            .chain(hybrid_search::synth::short_queries(20, 2000, 3).iter().map(String::as_str).collect::<Vec<_>>().iter())
            .map(|t| EvalQuery {
                text: t.to_string(),
                source: None,
                relevant: vec![],
            })
            .collect(),
    };
    assert_eq!(null_rate_eval(&snap, &set, false).unwrap(), null_rate_eval(&snap, &set, true).unwrap());
}

#[test]
fn keyword_covered_queries_are_never_null() {
    let records = generate(&SynthConfig::new(500, 15));
    let snap = snapshot(&records, &small_cfg());
    let set = clicked_queries(&records, 0);
    assert!(!set.queries.is_empty());
    let (null, _) = null_rate_eval(&snap, &set, false).unwrap();
    assert_eq!(null, 0.0);
    let report = clicked_eval(&snap, &set).unwrap();
    assert_eq!(report.recompute(), report.aggregates);
    assert_eq!(report.to_jsonl().lines().count(), set.queries.len() + 1);
    assert!(report.summary_table().contains("MRR@100"));
}

#[test]
fn unknown_documents_are_rejected() {
    let records = generate(&SynthConfig::new(10, 1));
    let snap = snapshot(&records, &small_cfg());
    let set = EvalQuerySet {
        seed: 0,
        queries: vec![EvalQuery {
            text: "x".into(),
            source: None,
            relevant: vec![10],
        }],
    };
    assert!(null_rate_eval(&snap, &set, true).is_err());
}

fn stored_vectors(snap: &hybrid_search::snapshot::Snapshot, n: usize) -> Vec<Vec<f64>> {
    let store = snap.dense_store(&snap.config().text_image_space).unwrap();
    (0..n as u32).map(|d| store.get(d).unwrap().to_vec()).collect()
}

#[test]
fn self_queries_overlap_fully_at_one() {
    let records = generate(&SynthConfig::new(300, 16));
    let snap = snapshot(&records, &small_cfg());
    let queries = stored_vectors(&snap, 300);
    assert_eq!(sparse_vs_dense_overlap(&snap, &queries, 1).unwrap(), 1.0);
    assert_eq!(dense_scan_topk(&snap, &queries[7], 1)[0].0, 7);
}

#[test]
fn full_sparsity_recovers_dense_ranking() {
    let mut cfg = small_cfg().with_dims(64, 64);
    for s in &mut cfg.spaces {
        s.sparsifier_top_k = 64;
    }
    cfg.min_dims = 1;
    let records = generate(&SynthConfig::new(300, 17));
    let snap = snapshot(&records, &cfg);
    let texts: Vec<String> = hybrid_search::synth::short_queries(30, 2000, 4);
    let queries = hybrid_search::eval::embed_queries(&snap, &texts).unwrap();
    let overlap = sparse_vs_dense_overlap(&snap, &queries, 10).unwrap();
    assert!(overlap > 0.95, "{overlap}");
}

#[test]
fn latency_bench_is_deterministic_in_results() {
    let records = generate(&SynthConfig::new(100, 18));
    let snap = snapshot(&records, &small_cfg());
    let queries = stored_vectors(&snap, 20);
    let a = latency_bench(&snap, &queries, 10).unwrap();
    let b = latency_bench(&snap, &queries, 10).unwrap();
    assert_eq!(a.sparse_results, b.sparse_results);
    assert_eq!(a.dense_results, b.dense_results);
    assert_eq!((a.docs, a.queries), (100, 20));
}
