//! Model components and the assembled ranker.

pub mod config;
pub mod layers;
pub mod news_encoder;
pub mod popularity;
pub mod ranker;
pub mod user_encoder;

pub use config::{Ablations, ModelConfig};
pub use layers::{AttentionPool, Dense, Forward, Gate, Mlp, MultiHeadAttention};
pub use news_encoder::{NewsEncoder, NewsTrace};
pub use popularity::{history_popularity_bin, PopularityOutputs, PopularityPredictor};
pub use ranker::{
    combine_scores, matching_score, PopularityBreakdown, PpRec, RankingBreakdown, ScoreNodes,
};
pub use user_encoder::{UserEncoder, UserTrace};
