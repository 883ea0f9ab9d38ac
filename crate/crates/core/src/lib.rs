pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod intents;
pub mod keyword;
pub mod pipeline;
pub mod ranking;
pub mod service;
pub mod snapshot;
pub mod sparse_index;
pub mod supcola;
pub mod synth;
pub mod template;

/// Dense document ordinal assigned at ingestion, in corpus order.
pub type DocId = u32;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quick-start.md")]
    mod quick_start {}
    #[doc = include_str!("../../../book/src/sparse-matching.md")]
    mod sparse_matching {}
    #[doc = include_str!("../../../book/src/keyword.md")]
    mod keyword {}
    #[doc = include_str!("../../../book/src/intents.md")]
    mod intents {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/supcola.md")]
    mod supcola {}
    #[doc = include_str!("../../../book/src/snapshots.md")]
    mod snapshots {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
