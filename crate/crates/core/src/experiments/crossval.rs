//! Stratified k-fold cross-validation.

use serde::{Deserialize, Serialize};

use crate::data::{stratified_kfold, EncodedDataset, Preprocessor, RawDataset, SparseClassPolicy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_metric, Metric, MetricsReport};
use crate::net::{ArchitectureConfig, Network};
use crate::train::{train, TrainConfig};

/// Cross-validation input. Raw data is re-encoded per fold with a
/// preprocessor fitted on that fold's training rows only.
#[derive(Debug, Clone, Copy)]
pub enum CrossValData<'a> {
    Encoded(&'a EncodedDataset),
    Raw(&'a RawDataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// 0-based.
    pub fold: usize,
    /// Seed used for both network initialisation and training.
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub input_width: usize,
    pub params: usize,
    pub metrics: MetricsReport,
}

/// Unweighted mean over folds; undefined fold values are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub acc: Metric,
    pub binary_acc: Metric,
    pub multiclass_acc: Metric,
    pub dr: Metric,
    pub far: Metric,
}

impl MeanMetrics {
    pub fn of(reports: &[&MetricsReport]) -> Self {
        let m = |f: fn(&MetricsReport) -> Metric| mean_metric(reports.iter().map(|r| f(r)));
        MeanMetrics {
            acc: m(|r| r.acc),
            binary_acc: m(|r| r.binary_acc),
            multiclass_acc: m(|r| r.multiclass_acc),
            dr: m(|r| r.dr),
            far: m(|r| r.far),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub seed: u64,
    pub architecture: String,
    pub folds: Vec<FoldReport>,
    pub mean: MeanMetrics,
}

/// Fold seed: the base seed offset by the fold index.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_add(fold as u64)
}

/// Train and evaluate one model per fold. `arch.input_width` is replaced by
/// the encoded width of each fold; `on_fold` sees each report as it finishes.
pub fn cross_validate<F>(
    data: CrossValData<'_>,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    k: usize,
    policy: SparseClassPolicy,
    mut on_fold: F,
) -> Result<CrossValReport>
where
    F: FnMut(&FoldReport),
{
    cfg.validate()?;
    let (labels, classes) = match data {
        CrossValData::Encoded(ds) => {
            if ds.width() != arch.input_width {
                return Err(Error::Config(format!(
                    "dataset has {} encoded features but the architecture expects {}",
                    ds.width(),
                    arch.input_width
                )));
            }
            (ds.labels.clone(), ds.classes.clone())
        }
        CrossValData::Raw(raw) => {
            let prep = Preprocessor::fit(raw, cfg.task)?;
            let labels = raw
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    prep.labels.map(&r.label).map_err(|e| Error::Row {
                        row: i + 1,
                        detail: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (labels, prep.labels.classes.clone())
        }
    };
    let folds = stratified_kfold(&labels, &classes, k, cfg.seed, policy)?;

    let mut reports = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        let (train_ds, test_ds) = match data {
            CrossValData::Encoded(ds) => (ds.subset(&fold.train), ds.subset(&fold.test)),
            CrossValData::Raw(raw) => {
                let train_raw = raw.subset(&fold.train);
                let prep = Preprocessor::fit(&train_raw, cfg.task)?;
                (prep.transform(&train_raw)?, prep.transform(&raw.subset(&fold.test))?)
            }
        };
        let seed = fold_seed(cfg.seed, i);
        let mut fold_arch = arch.clone();
        fold_arch.input_width = train_ds.width();
        let mut net = Network::build(&fold_arch, seed)?;
        train(&mut net, &train_ds, &TrainConfig { seed, ..cfg.clone() })?;
        let report = FoldReport {
            fold: i,
            seed,
            train_size: train_ds.len(),
            test_size: test_ds.len(),
            input_width: train_ds.width(),
            params: net.count_params(),
            metrics: evaluate(&net, &test_ds, cfg.task)?,
        };
        on_fold(&report);
        reports.push(report);
    }
    let mean = MeanMetrics::of(&reports.iter().map(|r| &r.metrics).collect::<Vec<_>>());
    Ok(CrossValReport {
        k,
        seed: cfg.seed,
        architecture: arch.label(),
        folds: reports,
        mean,
    })
}
