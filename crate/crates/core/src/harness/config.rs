use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::EpisodeShape;
use crate::Error;

/// Architecture and strategy selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden width.
    pub d: usize,
    /// Longest sentence the positional table covers.
    pub max_len: usize,
    /// Registered encoder name.
    pub encoder: String,
    /// Registered prototype normalization name.
    pub prototype_norm: String,
    /// Replace fused features with the unfused ones.
    pub disable_pfm: bool,
    /// Decode entities under every relation instead of the predicted one.
    pub disable_rge: bool,
    /// Fuse the query with raw support sentences on the relation side.
    pub disable_egr: bool,
    /// Separate fusion weight for the query side.
    pub unshare_fusion: bool,
    /// Mask BIO-invalid CRF transitions.
    pub constrain_transitions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            max_len: 64,
            encoder: "attention".into(),
            prototype_norm: "token-mean".into(),
            disable_pfm: false,
            disable_rge: false,
            disable_egr: false,
            unshare_fusion: false,
            constrain_transitions: false,
        }
    }
}

impl ModelConfig {
    pub fn fusion_name(&self) -> &'static str {
        if self.disable_pfm {
            "identity"
        } else {
            "proto-level"
        }
    }

    pub fn entity_decoding_name(&self) -> &'static str {
        if self.disable_rge {
            "all-relations"
        } else {
            "relation-guided"
        }
    }
}

/// Everything `train` and `eval` need. Loaded from a TOML file of
/// `key = value` pairs; command-line flags override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_relation: usize,
    /// Training episodes (one optimizer step each).
    pub episodes: usize,
    pub eval_episodes: usize,
    pub learning_rate: f64,
    /// Weight of the CRF loss relative to the relation loss.
    pub lambda_ent: f64,
    pub seed: u64,
    /// Seed for evaluation episodes.
    pub eval_seed: u64,
    /// Arithmetic precision; only `f64` is supported.
    pub precision: String,
    pub train_corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    /// Require disjoint train/eval relation inventories.
    pub cross_domain: bool,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Per-episode training loss CSV.
    pub loss_log: Option<PathBuf>,
    /// Per-episode evaluation CSV.
    pub eval_log: Option<PathBuf>,
    #[serde(flatten)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            queries_per_relation: 5,
            episodes: 1000,
            eval_episodes: 1000,
            learning_rate: 1e-3,
            lambda_ent: 1.0,
            seed: 0,
            eval_seed: 1,
            precision: "f64".into(),
            train_corpus: None,
            eval_corpus: None,
            cross_domain: false,
            vocab: None,
            checkpoint: None,
            loss_log: None,
            eval_log: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape::new(self.n_way, self.k_shot, self.queries_per_relation)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_way == 0 || self.k_shot == 0 || self.queries_per_relation == 0 {
            return bad("n_way, k_shot and queries_per_relation must be positive");
        }
        if self.model.d == 0 || self.model.max_len == 0 {
            return bad("d and max_len must be positive");
        }
        if !(self.lambda_ent >= 0.0 && self.lambda_ent.is_finite()) {
            return bad("lambda_ent must be a finite non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.precision != "f64" {
            return Err(Error::Config(format!(
                "unsupported precision `{}` (only f64)",
                self.precision
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let known = serde_json::to_value(Self::default()).expect("config serializes");
        if let Some(key) = table.keys().find(|k| known.get(k.as_str()).is_none()) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Vocabulary location: explicit, else next to the checkpoint.
    pub fn vocab_path(&self) -> Option<PathBuf> {
        self.vocab.clone().or_else(|| {
            self.checkpoint
                .as_ref()
                .map(|c| c.with_extension("vocab.txt"))
        })
    }
}
