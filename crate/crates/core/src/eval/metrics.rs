//! Confusion counts, detection/false-alarm rates and per-class reports.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Task;
use crate::error::{Error, Result};

/// A rate that may be undefined because its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl Metric {
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn percent(self) -> Option<f64> {
        self.value().map(|v| v * 100.0)
    }

    /// Rounded to 4 decimal places (hundredths of a percent).
    pub fn rounded(self) -> Self {
        match self {
            Metric::Value(v) => Metric::Value(round4(v)),
            Metric::Undefined => Metric::Undefined,
        }
    }
}

pub(crate) fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{:.2}%", v * 100.0),
            Metric::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Metric::Value(v)),
            Repr::Str(s) if s == "undefined" => Ok(Metric::Undefined),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {s:?}"))),
        }
    }
}

/// Binary confusion counts; positive means attack.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub acc: Metric,
    pub dr: Metric,
    pub far: Metric,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fn_: u64, tn: u64, fp: u64) -> Self {
        ConfusionCounts { tp, fn_, tn, fp }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }

    /// `ACC = (TP+TN)/total`, `DR = TP/(TP+FN)`, `FAR = FP/(FP+TN)`.
    pub fn rates(&self) -> Rates {
        Rates {
            acc: Metric::ratio(self.tp + self.tn, self.total()),
            dr: Metric::ratio(self.tp, self.tp + self.fn_),
            far: Metric::ratio(self.fp, self.fp + self.tn),
        }
    }
}

/// Counts with `is_positive` deciding which class indices are positive.
pub fn confusion_with<F>(preds: &[usize], labels: &[usize], is_positive: F) -> Result<ConfusionCounts>
where
    F: Fn(usize) -> bool,
{
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (is_positive(y), is_positive(p)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
        }
    }
    Ok(c)
}

/// Attack-vs-normal counts: class 0 is normal, every other class is an attack.
pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionCounts> {
    confusion_with(preds, labels, |c| c != 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub support: u64,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub rates: Rates,
}

/// One-vs-rest counts and rates for each class.
pub fn per_class_report(preds: &[usize], labels: &[usize], classes: &[String]) -> Result<Vec<ClassReport>> {
    classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let counts = confusion_with(preds, labels, |k| k == c)?;
            Ok(ClassReport {
                class: name.clone(),
                support: counts.tp + counts.fn_,
                counts,
                rates: counts.rates(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub samples: u64,
    /// Accuracy matching the task: `multiclass_acc` for multiclass, `binary_acc` otherwise.
    pub acc: Metric,
    /// Attack-vs-normal counts.
    pub counts: ConfusionCounts,
    /// `(TP+TN)/total` of the attack-vs-normal counts.
    pub binary_acc: Metric,
    pub dr: Metric,
    pub far: Metric,
    /// Exact-class accuracy; equals `binary_acc` for binary tasks.
    pub multiclass_acc: Metric,
    pub per_class: Vec<ClassReport>,
}

impl MetricsReport {
    pub fn new(preds: &[usize], labels: &[usize], classes: &[String], task: Task) -> Result<Self> {
        let counts = confusion(preds, labels)?;
        let rates = counts.rates();
        let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count() as u64;
        let multiclass_acc = Metric::ratio(correct, labels.len() as u64);
        Ok(MetricsReport {
            task,
            samples: labels.len() as u64,
            acc: match task {
                Task::Binary => rates.acc,
                Task::Multiclass => multiclass_acc,
            },
            counts,
            binary_acc: rates.acc,
            dr: rates.dr,
            far: rates.far,
            multiclass_acc,
            per_class: per_class_report(preds, labels, classes)?,
        })
    }

    /// Copy with every rate rounded to 4 decimal places.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        r.acc = r.acc.rounded();
        r.binary_acc = r.binary_acc.rounded();
        r.dr = r.dr.rounded();
        r.far = r.far.rounded();
        r.multiclass_acc = r.multiclass_acc.rounded();
        for c in &mut r.per_class {
            c.rates = Rates {
                acc: c.rates.acc.rounded(),
                dr: c.rates.dr.rounded(),
                far: c.rates.far.rounded(),
            };
        }
        r
    }
}

/// Element-wise mean of rates across reports, skipping undefined entries.
pub fn mean_metric(values: impl IntoIterator<Item = Metric>) -> Metric {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.into_iter().filter_map(Metric::value) {
        sum += v;
        n += 1;
    }
    if n == 0 {
        Metric::Undefined
    } else {
        Metric::Value(sum / n as f64)
    }
}
