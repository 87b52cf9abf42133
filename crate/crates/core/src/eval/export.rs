//! JSON and CSV report files.
//!
//! Rates are written as fractions rounded to 4 decimal places. Attention
//! scores are near `1/F`, so they keep 6 decimal places to stay rankable.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::attention::{AttentionReport, FeatureScore, RankedFeature};
use super::metrics::{Metric, MetricsReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format {other:?}; use json or csv"))),
        }
    }
}

impl ReportFormat {
    /// `.csv` selects CSV; anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

fn cell(m: Metric) -> String {
    match m.rounded() {
        Metric::Value(v) => format!("{v:.4}"),
        Metric::Undefined => "undefined".into(),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

pub fn metrics_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&report.rounded())?)
}

/// One `all` row with the attack-vs-normal counts, then one row per class.
pub fn metrics_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let header = ["class", "support", "acc", "dr", "far", "tp", "fn", "tn", "fp"];
    let c = report.counts;
    let mut rows = vec![vec![
        "all".to_string(),
        report.samples.to_string(),
        cell(report.acc),
        cell(report.dr),
        cell(report.far),
        c.tp.to_string(),
        c.fn_.to_string(),
        c.tn.to_string(),
        c.fp.to_string(),
    ]];
    rows.extend(report.per_class.iter().map(|r| {
        vec![
            r.class.clone(),
            r.support.to_string(),
            cell(r.rates.acc),
            cell(r.rates.dr),
            cell(r.rates.far),
            r.counts.tp.to_string(),
            r.counts.fn_.to_string(),
            r.counts.tn.to_string(),
            r.counts.fp.to_string(),
        ]
    }));
    csv_bytes(&header, rows)
}

pub fn export_metrics(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => write(path, metrics_json(report)?.as_bytes()),
        ReportFormat::Csv => write(path, &metrics_csv(report)?),
    }
}

#[derive(Serialize)]
struct AttentionExport {
    mode: super::attention::ImportanceMode,
    aggregation: super::attention::GroupAggregation,
    samples: usize,
    top_features: Vec<RankedFeature>,
    top_encoded: Vec<RankedFeature>,
    encoded: Vec<FeatureScore>,
    features: Vec<FeatureScore>,
}

fn round_scores(scores: &[FeatureScore]) -> Vec<FeatureScore> {
    scores
        .iter()
        .map(|f| FeatureScore {
            feature: f.feature.clone(),
            score: round_to(f.score, 6),
        })
        .collect()
}

fn round_ranked(mut r: Vec<RankedFeature>) -> Vec<RankedFeature> {
    for f in &mut r {
        f.score = round_to(f.score, 6);
    }
    r
}

pub fn attention_json(report: &AttentionReport, k: usize) -> Result<String> {
    let out = AttentionExport {
        mode: report.mode,
        aggregation: report.aggregation,
        samples: report.samples,
        top_features: round_ranked(report.top_features(k)),
        top_encoded: round_ranked(report.top_encoded(k)),
        encoded: round_scores(&report.encoded),
        features: round_scores(&report.features),
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

/// `rank,feature,score` rows, best first.
pub fn ranked_csv(ranked: &[RankedFeature]) -> Result<Vec<u8>> {
    csv_bytes(
        &["rank", "feature", "score"],
        ranked
            .iter()
            .map(|f| vec![f.rank.to_string(), f.feature.clone(), format!("{:.6}", f.score)]),
    )
}

/// JSON writes the whole report; CSV writes the top-`k` original features.
pub fn export_attention(report: &AttentionReport, k: usize, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => write(path, attention_json(report, k)?.as_bytes()),
        ReportFormat::Csv => write(path, &ranked_csv(&report.top_features(k))?),
    }
}
