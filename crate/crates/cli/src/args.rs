use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pprec", version, about = "Popularity-aware news ranking")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    GenData(GenDataArgs),
    /// Build vocabularies and preprocessed news for a corpus.
    Preprocess(PreprocessArgs),
    /// Train one or more seeded models and report test metrics.
    Train(TrainArgs),
    /// Evaluate checkpoints or popularity baselines.
    Evaluate(EvaluateArgs),
    /// Per-news popularity breakdown at a reference time.
    PredictPopularity(PredictArgs),
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Corpus directory (news.jsonl, impressions.*.jsonl, clicks.tsv).
    #[arg(long, env = "PPREC_DATA_DIR")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory; defaults to PPREC_DATA_DIR.
    #[arg(long, env = "PPREC_DATA_DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub news: Option<usize>,
    #[arg(long)]
    pub impressions: Option<usize>,
    /// Weight of popularity versus personal interest in simulated clicks.
    #[arg(long)]
    pub pop_weight: Option<f64>,
    #[arg(long)]
    pub candidates: Option<usize>,
    /// Generator config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write clustered word and entity vectors (word_vectors.txt,
    /// entity_vectors.txt) for use as pretrained embeddings.
    #[arg(long)]
    pub vectors: bool,
    #[arg(long, default_value_t = 300)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub entity_dim: usize,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Model and training hyperparameters. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    /// Model config JSON (any subset of fields).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub entity_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub query_dim: Option<usize>,
    #[arg(long)]
    pub recency_dim: Option<usize>,
    #[arg(long)]
    pub popularity_dim: Option<usize>,
    #[arg(long)]
    pub popularity_hidden: Option<usize>,
    #[arg(long)]
    pub gate_hidden: Option<usize>,
    #[arg(long)]
    pub single_layer_gate: bool,
    #[arg(long)]
    pub max_history: Option<usize>,
    /// Near-real-time CTR window in hours.
    #[arg(long)]
    pub ctr_window_hours: Option<u32>,
    #[arg(long)]
    pub no_popularity_score: bool,
    #[arg(long)]
    pub no_matching_score: bool,
    #[arg(long)]
    pub no_ctr: bool,
    #[arg(long)]
    pub no_content: bool,
    #[arg(long)]
    pub no_recency: bool,
    #[arg(long)]
    pub no_user_popularity: bool,
    #[arg(long)]
    pub no_knowledge: bool,
}

impl ModelArgs {
    pub fn touches_architecture(&self) -> bool {
        self.config.is_some()
            || [
                self.word_dim,
                self.entity_dim,
                self.heads,
                self.head_dim,
                self.query_dim,
                self.recency_dim,
                self.popularity_dim,
                self.popularity_hidden,
                self.gate_hidden,
            ]
            .iter()
            .any(Option::is_some)
            || self.single_layer_gate
            || self.no_popularity_score
            || self.no_matching_score
            || self.no_ctr
            || self.no_content
            || self.no_recency
            || self.no_user_popularity
            || self.no_knowledge
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Output directory for checkpoints, logs and the report.
    #[arg(long)]
    pub out: PathBuf,
    /// Independent runs; run r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Pretrained word vectors (word2vec/GloVe text format).
    #[arg(long)]
    pub word_embeddings: Option<PathBuf>,
    /// Pretrained entity vectors (same format).
    #[arg(long)]
    pub entity_embeddings: Option<PathBuf>,
    /// Keep the last epoch instead of the best validation AUC.
    #[arg(long)]
    pub no_validation_selection: bool,
    /// Threads for evaluation.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Report label; defaults to the ablation description.
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Checkpoints evaluated as repeated runs of one method.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Popularity baselines: viewnum, recentpop, ctr.
    #[arg(long)]
    pub baseline: Vec<String>,
    /// Times each baseline is evaluated (to line up with model runs).
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long)]
    pub cold_start: bool,
    #[arg(long)]
    pub diversity: bool,
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long)]
    pub label: Option<String>,
    /// Directory for report files; the main table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected architecture; a checkpoint that differs is rejected.
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference time (unix seconds); defaults to the last logged impression.
    #[arg(long)]
    pub time: Option<i64>,
    /// Use this CTR for every article instead of the logged one.
    #[arg(long)]
    pub ctr: Option<f64>,
    /// Output TSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
