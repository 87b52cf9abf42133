//! Detection metrics, attention-based feature importance and report files.

pub mod attention;
pub mod export;
pub mod metrics;

pub use attention::{
    attention_importance, attention_importance_of, AttentionReport, FeatureScore, GroupAggregation, ImportanceMode,
    ImportanceOptions, RankedFeature,
};
pub use export::{export_attention, export_metrics, ReportFormat};
pub use metrics::{confusion, confusion_with, mean_metric, per_class_report, ClassReport, ConfusionCounts, Metric, MetricsReport, Rates};

use crate::data::{EncodedDataset, Task};
use crate::error::Result;
use crate::net::Network;

/// Inference-mode predictions on `ds` scored against its labels.
pub fn evaluate(net: &Network, ds: &EncodedDataset, task: Task) -> Result<MetricsReport> {
    let pred = crate::train::predict(net, &ds.features)?;
    MetricsReport::new(&pred.classes, &ds.labels, &ds.classes, task)
}
