//! One-hot encoding and min-max scaling fitted on a training split.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::raw::{Cell, RawDataset, RawRecord};
use super::schema::{ColumnKind, LabelMap, Schema, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PREPROCESSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoder {
    /// `(x - min) / (max - min)` clipped to `[0, 1]`; constant columns map to 0.
    Numeric { name: String, min: f64, max: f64 },
    /// One-hot over `vocab` in first-appearance order; unseen values encode as all zeros.
    Nominal { name: String, vocab: Vec<String> },
}

impl Encoder {
    pub fn name(&self) -> &str {
        match self {
            Encoder::Numeric { name, .. } | Encoder::Nominal { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Encoder::Numeric { .. } => 1,
            Encoder::Nominal { vocab, .. } => vocab.len(),
        }
    }
}

/// Span of encoded columns produced by one original column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub column: String,
    pub start: usize,
    pub len: usize,
    pub one_hot: bool,
}

impl FeatureGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub version: u32,
    pub schema: Schema,
    pub encoders: Vec<Encoder>,
    pub labels: LabelMap,
}

/// Feature matrix with labels and column metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    /// `[N, F]`, every value in `[0, 1]`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub classes: Vec<String>,
}

impl Preprocessor {
    /// Fit vocabularies and numeric ranges on `raw`.
    pub fn fit(raw: &RawDataset, task: Task) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Data("cannot fit a preprocessor on an empty dataset".into()));
        }
        let columns: Vec<_> = raw.schema.feature_columns().collect();
        let mut encoders = Vec::with_capacity(columns.len());
        for (j, col) in columns.iter().enumerate() {
            match col.kind {
                ColumnKind::Numeric => {
                    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                    for r in &raw.records {
                        let v = r.features[j].as_number().expect("numeric cell");
                        min = min.min(v);
                        max = max.max(v);
                    }
                    encoders.push(Encoder::Numeric {
                        name: col.name.clone(),
                        min,
                        max,
                    });
                }
                ColumnKind::Nominal => {
                    let mut vocab: Vec<String> = Vec::new();
                    let mut seen = HashMap::new();
                    for (i, r) in raw.records.iter().enumerate() {
                        let v = r.features[j].as_text().expect("nominal cell");
                        if v.is_empty() {
                            return Err(Error::Row {
                                row: i + 1,
                                detail: format!("nominal column {} has an empty value", col.name),
                            });
                        }
                        if !seen.contains_key(v) {
                            seen.insert(v.to_string(), vocab.len());
                            vocab.push(v.to_string());
                        }
                    }
                    encoders.push(Encoder::Nominal {
                        name: col.name.clone(),
                        vocab,
                    });
                }
                ColumnKind::Label | ColumnKind::Ignore => unreachable!("feature columns only"),
            }
        }
        let labels = LabelMap::new(&raw.schema.labels.vocabulary()?, task)?;
        Ok(Preprocessor {
            version: PREPROCESSOR_VERSION,
            schema: raw.schema.clone(),
            encoders,
            labels,
        })
    }

    /// Encoded width `F`: numeric columns plus the sum of vocabulary sizes.
    pub fn width(&self) -> usize {
        self.encoders.iter().map(Encoder::width).sum()
    }

    pub fn task(&self) -> Task {
        self.labels.task
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// `name` for numeric columns, `name=value` for one-hot columns.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for e in &self.encoders {
            match e {
                Encoder::Numeric { name, .. } => names.push(name.clone()),
                Encoder::Nominal { name, vocab } => names.extend(vocab.iter().map(|v| format!("{name}={v}"))),
            }
        }
        names
    }

    pub fn groups(&self) -> Vec<FeatureGroup> {
        let mut start = 0;
        self.encoders
            .iter()
            .map(|e| {
                let g = FeatureGroup {
                    column: e.name().to_string(),
                    start,
                    len: e.width(),
                    one_hot: matches!(e, Encoder::Nominal { .. }),
                };
                start += g.len;
                g
            })
            .collect()
    }

    fn check_schema(&self, raw: &RawDataset) -> Result<()> {
        let ours: Vec<_> = self.schema.feature_columns().collect();
        let theirs: Vec<_> = raw.schema.feature_columns().collect();
        if ours != theirs {
            return Err(Error::Data(format!(
                "dataset columns do not match the fitted preprocessor ({} vs {} feature columns)",
                theirs.len(),
                ours.len()
            )));
        }
        Ok(())
    }

    fn encode_record(&self, lookups: &[Option<HashMap<&str, usize>>], rec: &RawRecord, out: &mut Vec<f64>) {
        for ((enc, cell), lookup) in self.encoders.iter().zip(&rec.features).zip(lookups) {
            match (enc, cell) {
                (Encoder::Numeric { min, max, .. }, Cell::Number(v)) => {
                    let span = max - min;
                    out.push(if span > 0.0 { ((v - min) / span).clamp(0.0, 1.0) } else { 0.0 });
                }
                (Encoder::Nominal { vocab, .. }, Cell::Text(v)) => {
                    let start = out.len();
                    out.resize(start + vocab.len(), 0.0);
                    if let Some(&k) = lookup.as_ref().and_then(|m| m.get(v.as_str())) {
                        out[start + k] = 1.0;
                    }
                }
                _ => unreachable!("cell kinds follow the schema"),
            }
        }
    }

    pub fn transform(&self, raw: &RawDataset) -> Result<EncodedDataset> {
        self.check_schema(raw)?;
        if raw.is_empty() {
            return Err(Error::Data("cannot encode an empty dataset".into()));
        }
        let lookups: Vec<Option<HashMap<&str, usize>>> = self
            .encoders
            .iter()
            .map(|e| match e {
                Encoder::Nominal { vocab, .. } => {
                    Some(vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect())
                }
                Encoder::Numeric { .. } => None,
            })
            .collect();
        let width = self.width();
        let mut data = Vec::with_capacity(raw.len() * width);
        let mut labels = Vec::with_capacity(raw.len());
        for (i, rec) in raw.records.iter().enumerate() {
            self.encode_record(&lookups, rec, &mut data);
            labels.push(self.labels.map(&rec.label).map_err(|e| Error::Row {
                row: i + 1,
                detail: e.to_string(),
            })?);
        }
        let features = Tensor::new(vec![raw.len(), width], data)?;
        Ok(EncodedDataset {
            features,
            labels,
            feature_names: self.feature_names(),
            groups: self.groups(),
            classes: self.labels.classes.clone(),
        })
    }

    /// Map encoded rows back to raw records: numerics are unscaled, one-hot
    /// groups become their hot value (empty for an all-zero group), labels
    /// become class names.
    pub fn inverse_transform(&self, ds: &EncodedDataset) -> Result<RawDataset> {
        if ds.features.cols() != self.width() {
            return Err(Error::Data(format!(
                "encoded width {} does not match preprocessor width {}",
                ds.features.cols(),
                self.width()
            )));
        }
        let width = self.width();
        let records = ds
            .features
            .data()
            .chunks(width)
            .zip(&ds.labels)
            .map(|(row, &label)| {
                let mut at = 0;
                let features = self
                    .encoders
                    .iter()
                    .map(|e| {
                        let cell = match e {
                            Encoder::Numeric { min, max, .. } => Cell::Number(min + row[at] * (max - min)),
                            Encoder::Nominal { vocab, .. } => {
                                let hot = row[at..at + vocab.len()].iter().position(|&v| v == 1.0);
                                Cell::Text(hot.map(|k| vocab[k].clone()).unwrap_or_default())
                            }
                        };
                        at += e.width();
                        cell
                    })
                    .collect();
                RawRecord {
                    features,
                    label: self.labels.classes[label].clone(),
                }
            })
            .collect();
        Ok(RawDataset {
            schema: self.schema.clone(),
            records,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Preprocessor = serde_json::from_str(s)?;
        if p.version != PREPROCESSOR_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "preprocessor",
                found: p.version,
                supported: PREPROCESSOR_VERSION,
            });
        }
        Ok(p)
    }
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Rows at `indices`, in that order. `indices` must be non-empty.
    pub fn subset(&self, indices: &[usize]) -> EncodedDataset {
        assert!(!indices.is_empty(), "subset of zero rows");
        EncodedDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            groups: self.groups.clone(),
            classes: self.classes.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Groups derived from `name=value` feature names.
    pub fn groups_from_names(names: &[String]) -> Vec<FeatureGroup> {
        let mut groups: Vec<FeatureGroup> = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let (column, one_hot) = match name.split_once('=') {
                Some((col, _)) => (col, true),
                None => (name.as_str(), false),
            };
            match groups.last_mut() {
                Some(g) if one_hot && g.one_hot && g.column == column => g.len += 1,
                _ => groups.push(FeatureGroup {
                    column: column.to_string(),
                    start: i,
                    len: 1,
                    one_hot,
                }),
            }
        }
        groups
    }
}
