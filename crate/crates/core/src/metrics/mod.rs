//! Classification and distillation metrics, inference timing, reports.

mod bench;
mod classification;
mod report;

pub use bench::{benchmark_inference, model_size_mb, TimingStats};
pub use classification::{
    classification_metrics, confusion, f1_score, knowledge_retention, macro_metrics, ClassificationMetrics,
    ConfusionMatrix,
};
pub use report::{emit_report, read_reports, write_reports_csv, EvalReport, ReportFormat};
