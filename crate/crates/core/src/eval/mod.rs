//! IR metrics, graded-label binarization, margin-distribution statistics,
//! and pairwise training accuracy.

pub mod margins;
pub mod metrics;

pub use margins::{margin_stats, pairwise_accuracy, MarginHistogram};
pub use metrics::{
    map_at_k, mrr_at_k, ndcg_at_k, read_kv, EvalError, MetricConfig, MetricReport, QueryMetrics,
};
