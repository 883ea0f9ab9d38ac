#![allow(dead_code)]

use hybrid_search::config::EngineConfig;
use hybrid_search::corpus::build;
use hybrid_search::snapshot::Snapshot;
use hybrid_search::synth::{generate, SynthConfig};
use hybrid_search::template::TemplateRecord;

pub fn rec(id: &str, title: &str) -> TemplateRecord {
    TemplateRecord::new(id, title)
}

pub fn with_intents(mut r: TemplateRecord, intents: &[&str]) -> TemplateRecord {
    r.intents = intents.iter().map(|s| s.to_string()).collect();
    r
}

pub fn snapshot(records: &[TemplateRecord], cfg: &EngineConfig) -> Snapshot {
    let (snap, report) = build(records, cfg).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    snap
}

/// Small dense dimension for fast synthetic corpora.
pub fn small_cfg() -> EngineConfig {
    EngineConfig::default().with_dims(64, 8192)
}

pub fn synth_snapshot(docs: usize, seed: u64, cfg: &EngineConfig) -> (Vec<TemplateRecord>, Snapshot) {
    let records = generate(&SynthConfig::new(docs, seed));
    let snap = snapshot(&records, cfg);
    (records, snap)
}

/// A handful of hand-written templates.
pub fn fixture() -> Vec<TemplateRecord> {
    let mut v = vec![
        rec("coffee-ig", "coffee instagram post"),
        rec("bday-card", "birthday card"),
        rec("bday-party", "birthday party card"),
        rec("halloween", "spooky halloween flyer"),
        with_intents(rec("stretch-a", "morning stretch class flyer"), &["act.yoga"]),
        with_intents(rec("stretch-b", "sunrise flow session banner"), &["yoga", "mood.calm"]),
        rec("latte-art", "latte art menu"),
    ];
    v[0].topics = vec!["coffee".into()];
    v[3].mood = vec!["spooky".into()];
    v
}

/// MRR@100 of a title-as-query set computed without the engine: documents
/// are re-embedded from their records and ranked by the long-query blend.
pub fn long_route_mrr_oracle(
    records: &[TemplateRecord],
    cfg: &EngineConfig,
    set: &hybrid_search::synth::EvalQuerySet,
) -> f64 {
    use hybrid_search::embedding::toy_embed;
    let w = cfg.rescore.long_query_intent_weight;
    let embed = |text: &str, space| toy_embed(text, space).unwrap().into_values();
    let docs: Vec<(Vec<f64>, Vec<f64>)> = records
        .iter()
        .map(|r| (embed(&r.embedding_text(), cfg.text_image()), embed(&r.embedding_text(), cfg.intent())))
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y);
    let mut total = 0.0;
    for q in &set.queries {
        let (qt, qi) = (embed(&q.text, cfg.text_image()), embed(&q.text, cfg.intent()));
        let mut scored: Vec<(usize, f64)> = docs
            .iter()
            .enumerate()
            .map(|(d, (t, i))| (d, w * dot(&qi, i) + (1.0 - w) * dot(&qt, t)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(pos) = scored
            .iter()
            .take(hybrid_search::eval::EVAL_DEPTH)
            .position(|(d, _)| q.relevant.contains(&(*d as u32)))
        {
            total += 1.0 / (pos + 1) as f64;
        }
    }
    total / set.queries.len().max(1) as f64
}
