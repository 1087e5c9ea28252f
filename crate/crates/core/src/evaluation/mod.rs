//! Metrics, bootstrap intervals, protocol runners, permutation sweeps and
//! embedding analytics.

mod embeddings;
mod metrics;
mod protocol;

pub use embeddings::{analyze_embeddings, read_embeddings_csv, write_embeddings_csv, EmbeddingAnalytics, Probe};
pub use metrics::{
    auc_and_accuracy, bootstrap_metric, compute_accuracy, compute_auc, pair_counts, percentile, BootstrapResult,
    MeanSd, BOOTSTRAP_LEVEL, BOOTSTRAP_RESAMPLES, DECISION_THRESHOLD,
};
pub use protocol::{
    evaluate_tables, permutation_sweep, run_cross_domain, run_cross_table, score_tables, write_sweep_csv,
    CrossDomainCell, CrossDomainOptions, CrossDomainReport, CrossTableReport, EvaluationReport, FoldReport, Scope,
    SweepPoint, TableMetrics,
};
