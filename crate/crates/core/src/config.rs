//! Engine configuration, loaded from a single TOML file.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingSpace;
use crate::keyword::KeywordConfig;
use crate::ranking::{FirstRoundWeights, RescoreConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub spaces: Vec<EmbeddingSpace>,
    /// Space used for sparse recall and short-query rescoring.
    pub text_image_space: String,
    /// Space blended in for long queries.
    pub intent_space: String,
    pub keyword: KeywordConfig,
    /// Minimum shared sparse dimensions for sparse recall.
    pub min_dims: usize,
    pub first_round: FirstRoundWeights,
    pub rescore: RescoreConfig,
    pub long_query_min_words: usize,
    /// Pages with fewer organic results than this are low.
    pub low_result_threshold: usize,
    pub recovery_enabled: bool,
    /// Also run keyword and sparse recall on the long route.
    pub long_route_union: bool,
    pub page_size: usize,
    /// Ages for the recency feature are measured from this date.
    pub reference_date: NaiveDate,
    /// Intent taxonomy TSV; the built-in fixture when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent_graph: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            spaces: vec![
                EmbeddingSpace::with_defaults("text_image"),
                EmbeddingSpace {
                    sparsifier_seed: 0x5eed_0002,
                    ..EmbeddingSpace::with_defaults("intent")
                },
            ],
            text_image_space: "text_image".into(),
            intent_space: "intent".into(),
            keyword: KeywordConfig::default(),
            min_dims: 2,
            first_round: FirstRoundWeights::default(),
            rescore: RescoreConfig::default(),
            long_query_min_words: 4,
            low_result_threshold: 5,
            recovery_enabled: true,
            long_route_union: false,
            page_size: 50,
            reference_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            intent_graph: None,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Same dense and sparse dimensions for every space.
    pub fn with_dims(mut self, dense_dim: usize, sparse_dim: usize) -> Self {
        for s in &mut self.spaces {
            s.dense_dim = dense_dim;
            s.sparse_dim = sparse_dim;
        }
        self
    }

    pub fn space(&self, name: &str) -> Option<&EmbeddingSpace> {
        self.spaces.iter().find(|s| s.name == name)
    }

    pub fn text_image(&self) -> &EmbeddingSpace {
        self.space(&self.text_image_space).expect("validated config")
    }

    pub fn intent(&self) -> &EmbeddingSpace {
        self.space(&self.intent_space).expect("validated config")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (i, s) in self.spaces.iter().enumerate() {
            s.validate().map_err(|e| ConfigError::Invalid(format!("space `{}`: {e}", s.name)))?;
            if self.spaces[..i].iter().any(|o| o.name == s.name) {
                return invalid(format!("space `{}` defined twice", s.name));
            }
        }
        for name in [&self.text_image_space, &self.intent_space] {
            if self.space(name).is_none() {
                return invalid(format!("space `{name}` is referenced but not defined"));
            }
        }
        self.keyword.validate().map_err(ConfigError::Invalid)?;
        self.first_round.validate().map_err(ConfigError::Invalid)?;
        self.rescore.validate().map_err(ConfigError::Invalid)?;
        if self.min_dims == 0 {
            return invalid("min_dims must be >= 1".into());
        }
        if self.min_dims > self.text_image().sparsifier_top_k {
            return invalid(format!(
                "min_dims {} exceeds sparsifier_top_k {}",
                self.min_dims,
                self.text_image().sparsifier_top_k
            ));
        }
        if self.long_query_min_words == 0 {
            return invalid("long_query_min_words must be >= 1".into());
        }
        if self.page_size == 0 {
            return invalid("page_size must be >= 1".into());
        }
        Ok(())
    }
}
