use serde::{Deserialize, Serialize};

use crate::data::corpus::{FeatureSettings, PopularityTime, PrepareSettings};
use crate::data::ctr::CtrSettings;
use crate::data::preprocess::PreprocessSettings;
use crate::error::{Error, Result};

/// Component switches for ablation studies. All off = the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Rank by the matching score alone.
    pub no_popularity_score: bool,
    /// Rank by the popularity score alone.
    pub no_matching_score: bool,
    /// Drop the CTR term from the popularity score.
    pub no_ctr: bool,
    /// Drop content-based popularity (gate fixed at 0).
    pub no_content: bool,
    /// Drop recency-based popularity (gate fixed at 1).
    pub no_recency: bool,
    /// Replace clicked-news popularity embeddings by one shared vector.
    pub no_user_popularity: bool,
    /// Drop every entity component from the news encoder.
    pub no_knowledge: bool,
}

impl Ablations {
    pub fn uses_content_popularity(&self) -> bool {
        !self.no_content
    }

    pub fn uses_recency_popularity(&self) -> bool {
        !self.no_recency
    }

    /// Whether the learned popularity `p̂` exists at all.
    pub fn uses_learned_popularity(&self) -> bool {
        !(self.no_content && self.no_recency)
    }

    /// Active switches in flag spelling, e.g. `["no-ctr"]`.
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (on, name) in [
            (self.no_popularity_score, "no-popularity-score"),
            (self.no_matching_score, "no-matching-score"),
            (self.no_ctr, "no-ctr"),
            (self.no_content, "no-content"),
            (self.no_recency, "no-recency"),
            (self.no_user_popularity, "no-user-popularity"),
            (self.no_knowledge, "no-knowledge"),
        ] {
            if on {
                out.push(name);
            }
        }
        out
    }
}

/// Every hyperparameter of the model and its training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub entity_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub query_dim: usize,
    pub recency_dim: usize,
    pub popularity_dim: usize,
    /// Hidden width of the content and recency popularity networks.
    pub popularity_hidden: usize,
    /// Hidden width of the gate networks.
    pub gate_hidden: usize,
    /// Use `σ(W·x + b)` gates instead of two-layer ones.
    pub single_layer_gate: bool,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_word_freq: u64,
    pub max_title_words: usize,
    pub max_entities: usize,
    pub max_history: usize,
    pub max_recency_hours: usize,
    pub popularity_bins: usize,
    pub ctr: CtrSettings,
    pub popularity_time: PopularityTime,
    pub ablations: Ablations,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            entity_dim: 100,
            heads: 20,
            head_dim: 20,
            query_dim: 200,
            recency_dim: 100,
            popularity_dim: 100,
            popularity_hidden: 128,
            gate_hidden: 100,
            single_layer_gate: false,
            dropout: 0.2,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 2,
            min_word_freq: 3,
            max_title_words: 30,
            max_entities: 5,
            max_history: 50,
            max_recency_hours: 720,
            popularity_bins: 200,
            ctr: CtrSettings::default(),
            popularity_time: PopularityTime::ClickTime,
            ablations: Ablations::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of every attention output and of the news/user embeddings.
    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn recency_bins(&self) -> usize {
        self.max_recency_hours + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("entity_dim", self.entity_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("query_dim", self.query_dim),
            ("recency_dim", self.recency_dim),
            ("popularity_dim", self.popularity_dim),
            ("popularity_hidden", self.popularity_hidden),
            ("gate_hidden", self.gate_hidden),
            ("batch_size", self.batch_size),
            ("max_title_words", self.max_title_words),
            ("popularity_bins", self.popularity_bins),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.ctr.window_hours == 0 || self.ctr.prior_impressions <= 0.0 {
            return Err(Error::Config(
                "CTR window and prior impressions must be positive".into(),
            ));
        }
        let a = &self.ablations;
        if a.no_popularity_score && a.no_matching_score {
            return Err(Error::Config(
                "cannot drop both the matching and popularity scores".into(),
            ));
        }
        if !a.no_popularity_score && a.no_ctr && !a.uses_learned_popularity() {
            return Err(Error::Config(
                "popularity score has no inputs: --no-ctr with both --no-content and --no-recency"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn prepare_settings(&self) -> PrepareSettings {
        PrepareSettings {
            min_word_freq: self.min_word_freq,
            preprocess: PreprocessSettings {
                max_title_words: self.max_title_words,
                max_entities: self.max_entities,
                seed: self.seed,
            },
            features: FeatureSettings {
                ctr: self.ctr,
                recency_max_hours: self.max_recency_hours,
                popularity_bins: self.popularity_bins,
                max_history: self.max_history,
                popularity_time: self.popularity_time,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_hyperparameter_table() {
        let c = ModelConfig::default();
        assert_eq!(
            (c.word_dim, c.entity_dim, c.heads, c.head_dim, c.query_dim),
            (300, 100, 20, 20, 200)
        );
        assert_eq!(
            (
                c.recency_dim,
                c.popularity_dim,
                c.popularity_hidden,
                c.gate_hidden
            ),
            (100, 100, 128, 100)
        );
        assert_eq!(
            (c.dropout, c.learning_rate, c.batch_size, c.epochs),
            (0.2, 1e-4, 32, 2)
        );
        assert_eq!(c.model_dim(), 400);
        assert_eq!(c.recency_bins(), 721);
        assert_eq!(c.ctr.window_hours, 1);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ModelConfig =
            serde_json::from_str(r#"{"heads": 4, "ablations": {"no_ctr": true}}"#).unwrap();
        assert_eq!(c.heads, 4);
        assert_eq!(c.word_dim, 300);
        assert!(c.ablations.no_ctr);
        assert_eq!(c.ablations.labels(), vec!["no-ctr"]);
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            ModelConfig {
                dropout: 1.0,
                ..Default::default()
            },
            ModelConfig {
                heads: 0,
                ..Default::default()
            },
            ModelConfig {
                ablations: Ablations {
                    no_popularity_score: true,
                    no_matching_score: true,
                    ..Default::default()
                },
                ..Default::default()
            },
            ModelConfig {
                ablations: Ablations {
                    no_ctr: true,
                    no_content: true,
                    no_recency: true,
                    ..Default::default()
                },
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
