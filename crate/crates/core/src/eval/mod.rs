//! Evaluation protocol: datasets, splits, metrics and the benchmark.

mod benchmark;
mod dataset;
pub mod metrics;
mod report;
mod split;
mod synth;

pub use benchmark::{run_benchmark, shap_feature_ranking, BenchmarkConfig, MetricsReport, ModelSpec, ReportRow, RocCurve, TargetMode};
pub use dataset::{binarize_target, read_feature_csv, take_rows, TabularDataset, Target, BLOCK_COLUMN, DISEASE_PREFIX, LABEL_COLUMN};
pub use metrics::{mean_std, metrics, roc_auc, Metrics, Roc, RocPoint};
pub use report::{auc_csv, report_json, roc_csv, roc_svg, round6};
pub use split::{balance_training, stratified_split, Split, SplitSpec};
pub use synth::{generate_vineyard_like, DISEASES, MISSING_RATE};
