//! Feature importance read off the self-attention weights.

use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, FeatureGroup};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

/// Rows per inference call; bounds the `[chunk, L, L]` attention buffer.
const CHUNK: usize = 256;

/// How one attention matrix becomes a per-position score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMode {
    /// Mean over rows `i` of `A[i, j]`: the attention mass position `j` receives.
    #[default]
    ColumnMean,
    /// Max over rows `i` of `A[i, j]`, renormalised to sum to 1.
    ColumnMax,
}

/// How encoded columns of one original feature combine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupAggregation {
    #[default]
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportanceOptions {
    pub mode: ImportanceMode,
    pub aggregation: GroupAggregation,
    /// Use at most this many leading rows; `None` uses every row.
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    /// 1-based.
    pub rank: usize,
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub mode: ImportanceMode,
    pub aggregation: GroupAggregation,
    pub samples: usize,
    /// One score per encoded column, in column order; non-negative, sums to 1.
    pub encoded: Vec<FeatureScore>,
    /// One score per original feature, in schema order.
    pub features: Vec<FeatureScore>,
}

fn ranked(scores: &[FeatureScore], k: usize) -> Vec<RankedFeature> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps column order among ties.
    order.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score));
    order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, i)| RankedFeature {
            rank: r + 1,
            feature: scores[i].feature.clone(),
            score: scores[i].score,
        })
        .collect()
}

impl AttentionReport {
    /// Highest-scoring encoded columns; `k` beyond the width returns the full ranking.
    pub fn top_encoded(&self, k: usize) -> Vec<RankedFeature> {
        ranked(&self.encoded, k)
    }

    /// Highest-scoring original features.
    pub fn top_features(&self, k: usize) -> Vec<RankedFeature> {
        ranked(&self.features, k)
    }

    /// 0-based position of encoded column `index` in the ranking.
    pub fn encoded_rank(&self, index: usize) -> usize {
        let s = self.encoded[index].score;
        self.encoded[..index].iter().filter(|f| f.score >= s).count()
            + self.encoded[index + 1..].iter().filter(|f| f.score > s).count()
    }
}

/// Attention-derived importance over the rows of `ds`.
pub fn attention_importance(net: &Network, ds: &EncodedDataset, opts: &ImportanceOptions) -> Result<AttentionReport> {
    attention_importance_of(net, &ds.features, &ds.feature_names, &ds.groups, opts)
}

/// As [`attention_importance`] on a bare `[n, F]` feature matrix.
pub fn attention_importance_of(
    net: &Network,
    features: &Tensor,
    names: &[String],
    groups: &[FeatureGroup],
    opts: &ImportanceOptions,
) -> Result<AttentionReport> {
    let cfg = &net.config;
    if !cfg.attention.enabled {
        return Err(Error::Attribution(
            "the model has no self-attention layer, so there are no attention weights to read".into(),
        ));
    }
    if !cfg.preserves_length() {
        return Err(Error::Attribution(
            "the model pools with stride > 1, so attention positions no longer map one-to-one to input features".into(),
        ));
    }
    let width = cfg.input_width;
    if features.rank() != 2 || features.cols() != width {
        return Err(Error::shape(
            "attention importance",
            format!("expected [n, {width}] features, got {:?}", features.shape()),
        ));
    }
    if names.len() != width {
        return Err(Error::Attribution(format!(
            "{} feature names for {width} encoded columns",
            names.len()
        )));
    }
    let n = opts.samples.map_or(features.rows(), |s| s.min(features.rows()));
    if n == 0 {
        return Err(Error::Attribution("no samples to explain".into()));
    }

    let mut totals = vec![0.0; width];
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..n.min(start + CHUNK)).collect();
        let (_, att) = net.infer(&features.select_rows(&idx), true)?;
        let att = att.ok_or_else(|| Error::Attribution("forward pass returned no attention weights".into()))?;
        let l = att.shape()[1];
        if l != width {
            return Err(Error::Attribution(format!(
                "attention spans {l} positions but the input has {width} features"
            )));
        }
        for a in att.data().chunks(l * l) {
            let mut per_sample = vec![0.0; l];
            for row in a.chunks(l) {
                for (j, &w) in row.iter().enumerate() {
                    per_sample[j] = match opts.mode {
                        ImportanceMode::ColumnMean => per_sample[j] + w,
                        ImportanceMode::ColumnMax => per_sample[j].max(w),
                    };
                }
            }
            let norm = match opts.mode {
                ImportanceMode::ColumnMean => l as f64,
                ImportanceMode::ColumnMax => per_sample.iter().sum(),
            };
            for (t, s) in totals.iter_mut().zip(&per_sample) {
                *t += s / norm;
            }
        }
    }
    let encoded: Vec<FeatureScore> = names
        .iter()
        .zip(&totals)
        .map(|(name, t)| FeatureScore {
            feature: name.clone(),
            score: t / n as f64,
        })
        .collect();

    let groups = if groups.is_empty() {
        EncodedDataset::groups_from_names(names)
    } else {
        groups.to_vec()
    };
    let features = groups
        .iter()
        .map(|g| {
            let members = encoded[g.range()].iter().map(|f| f.score);
            FeatureScore {
                feature: g.column.clone(),
                score: match opts.aggregation {
                    GroupAggregation::Sum => members.sum(),
                    GroupAggregation::Max => members.fold(0.0, f64::max),
                },
            }
        })
        .collect();

    Ok(AttentionReport {
        mode: opts.mode,
        aggregation: opts.aggregation,
        samples: n,
        encoded,
        features,
    })
}
