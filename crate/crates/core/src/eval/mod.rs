//! Offline evaluation: ranking metrics, baselines, cold-start and diversity.

pub mod diversity;
pub mod evaluate;
pub mod metrics;
pub mod report;

pub use diversity::{ilad, new_topic_ratio, Ilad};
pub use evaluate::{
    evaluate, Baseline, BucketResult, EvalOptions, ModelScorer, RunEvaluation, Scorer,
    COLD_START_BUCKETS, DIVERSITY_DEPTH,
};
pub use metrics::{auc, mrr, ndcg_at_k, rank_order, ImpressionMetrics};
pub use report::{EvalReport, MeanStd, MethodReport, MetricSummary};
