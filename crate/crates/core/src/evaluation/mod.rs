//! Precision@k, the three experiments, and report emission.

mod experiments;
mod metrics;
mod report;

pub use experiments::{
    evaluate_rankings, extraction_digest, run_few_shot_sweep, run_prompting_ablation, run_ranking_comparison,
    DEFAULT_K_LIST, DEFAULT_SWEEP_COUNTS,
};
pub use metrics::{mean_precision_at_k, precision_at_k, MeanPrecision, QueryPrecision};
pub use report::{
    paper_reported, parse_report_csv, parse_report_json, ExperimentKind, ExperimentReport,
    ReportFormat, ReportRow,
};
