//! Loss, optimizer, training loop, prediction and checkpoints.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{permutation, EncodedDataset, Task};
use crate::error::{Error, Result};
use crate::layers::{Mode, Rng};
use crate::net::Network;
use crate::tensor::{Precision, Tensor};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub task: Task,
    /// Fail on the first NaN/Inf produced by any op.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            precision: Precision::Double,
            task: Task::Binary,
            check_finite: false,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if self.epsilon <= 0.0 {
            return fail("adam epsilon must be positive".into());
        }
        if self.batch_size < 2 {
            return fail(format!(
                "batch_size must be at least 2 for batch normalisation, got {}",
                self.batch_size
            ));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches, weighted by batch size.
    pub loss: f64,
    /// Training-mode accuracy over the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Mean of `-ln max(p[i, y_i], 1e-12)` over the batch, recorded on `tape`.
pub fn sparse_ce_loss(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    tape.sparse_cross_entropy(probs, labels, PROB_FLOOR)
}

/// Batch index lists for one epoch. A trailing batch of one row joins the
/// previous batch so every batch can be normalised.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let order = permutation(n, seed);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_compatible(net: &Network, ds: &EncodedDataset) -> Result<()> {
    if ds.width() != net.config.input_width {
        return Err(Error::Config(format!(
            "dataset has {} encoded features but the network expects {}",
            ds.width(),
            net.config.input_width
        )));
    }
    if let Some(&bad) = ds.labels.iter().find(|&&l| l >= net.classes()) {
        return Err(Error::Config(format!(
            "label {bad} is outside the network's {} classes",
            net.classes()
        )));
    }
    Ok(())
}

/// Mini-batch Adam training. Deterministic in `(network, data, cfg)`;
/// `on_epoch` sees each record as it is produced.
pub fn train_with<F>(net: &mut Network, ds: &EncodedDataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<History>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    check_compatible(net, ds)?;
    if ds.len() < 2 {
        return Err(Error::Data("training needs at least 2 rows".into()));
    }
    net.precision = cfg.precision;
    let trainable = net.params.trainable_ids();
    let mut adam = Adam::new(cfg.adam());
    let mut master = Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();

    for epoch in 1..=cfg.epochs {
        let shuffle_seed = master.next_u64();
        let mut dropout_rng = Rng::seed_from_u64(master.next_u64());
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in epoch_batches(ds.len(), cfg.batch_size, shuffle_seed) {
            let x = ds.features.select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| ds.labels[i]).collect();
            let mut tape = Tape::new()
                .with_precision(cfg.precision)
                .with_finite_check(cfg.check_finite);
            let pass = net.forward(&mut tape, &x, Mode::Train, Some(&mut dropout_rng))?;
            let loss = sparse_ce_loss(&mut tape, pass.output.probs, &y)?;
            loss_sum += tape.value(loss).item() * batch.len() as f64;
            let probs = tape.value(pass.output.probs);
            correct += probs
                .data()
                .chunks(net.classes())
                .zip(&y)
                .filter(|(row, &label)| argmax(row) == label)
                .count();

            let mut grads = tape.backward(loss)?;
            let mut bound = vec![None; net.params.len()];
            for (id, var) in pass.params {
                bound[id.index()] = Some(var);
            }
            let grad_tensors: Vec<Tensor> = trainable
                .iter()
                .map(|&id| {
                    bound[id.index()]
                        .and_then(|v| grads.take(v))
                        .unwrap_or_else(|| Tensor::zeros(net.params.get(id).shape()))
                })
                .collect();
            drop(tape);
            let mut values: Vec<Tensor> = trainable.iter().map(|&id| net.params.get(id).clone()).collect();
            adam.step(
                values
                    .iter_mut()
                    .zip(&grad_tensors)
                    .map(|(p, g)| (p.data_mut(), g.data())),
            );
            for (&id, mut value) in trainable.iter().zip(values) {
                cfg.precision.round_slice(value.data_mut());
                *net.params.get_mut(id) = value;
            }
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / ds.len() as f64,
            accuracy: correct as f64 / ds.len() as f64,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}

pub fn train(net: &mut Network, ds: &EncodedDataset, cfg: &TrainConfig) -> Result<History> {
    train_with(net, ds, cfg, |_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    /// `[n, classes]`.
    pub probs: Tensor,
}

/// Inference-mode prediction.
pub fn predict(net: &Network, features: &Tensor) -> Result<Prediction> {
    let probs = net.predict_proba(features)?;
    let classes = probs.data().chunks(net.classes()).map(argmax).collect();
    Ok(Prediction { classes, probs })
}

/// Prediction with an explicit batch partition; results do not depend on it.
pub fn predict_batched(net: &Network, features: &Tensor, batch_size: usize) -> Result<Prediction> {
    let n = features.rows();
    let mut data = Vec::with_capacity(n * net.classes());
    let mut classes = Vec::with_capacity(n);
    for start in (0..n).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..n.min(start + batch_size.max(1))).collect();
        let p = predict(net, &features.select_rows(&idx))?;
        data.extend_from_slice(p.probs.data());
        classes.extend(p.classes);
    }
    Ok(Prediction {
        classes,
        probs: Tensor::new(vec![n, net.classes()], data)?,
    })
}

/// Mean cross-entropy in inference mode.
pub fn evaluate_loss(net: &Network, ds: &EncodedDataset) -> Result<f64> {
    check_compatible(net, ds)?;
    let probs = net.predict_proba(&ds.features)?;
    let c = net.classes();
    Ok(ds
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.data()[i * c + y].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / ds.len() as f64)
}
