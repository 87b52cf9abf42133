use super::{expect_channels, Ctx, Mode};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel batch normalisation over every axis but the last.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`
/// and are stored as non-trainable parameters so checkpoints carry them.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add(format!("{prefix}/gamma"), Tensor::ones(&[channels]), true)?,
            beta: store.add(format!("{prefix}/beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(format!("{prefix}/running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.add(format!("{prefix}/running_var"), Tensor::ones(&[channels]), false)?,
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        })
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let rank = ctx.tape.shape(x).len();
        expect_channels("batch_norm", ctx.tape, x, rank, self.channels)?;
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode() {
            Mode::Train => {
                let batch = ctx.tape.shape(x)[0];
                if batch < 2 {
                    return Err(Error::Config(format!(
                        "batch normalisation in training mode needs a batch of at least 2, got {batch}"
                    )));
                }
                let (y, mean, var) = ctx.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let store = ctx.store_mut()?;
                for (r, v) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
                    *r = m * *r + (1.0 - m) * v;
                }
                for (r, v) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&var) {
                    *r = m * *r + (1.0 - m) * v;
                }
                Ok(y)
            }
            Mode::Infer => {
                let mean = ctx.store().get(self.running_mean).data().to_vec();
                let var = ctx.store().get(self.running_var).data().to_vec();
                ctx.tape.batch_norm_infer(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn run(store: &mut ParamStore, bn: &BatchNorm, input: Tensor, mode: Mode) -> crate::Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let mut ctx = Ctx::new(&mut tape, store, mode);
        let y = bn.forward(&mut ctx, x)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2).unwrap();
        *store.get_mut(bn.beta) = Tensor::new(vec![2], vec![0.25, -1.5]).unwrap();
        let y = run(&mut store, &bn, Tensor::full(&[4, 3, 2], 3.0), Mode::Train).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.25, -1.5]);
        }
    }

    #[test]
    fn standardised_input_passes_through() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::new(vec![4, 1, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let y = run(&mut store, &bn, x.clone(), Mode::Train).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::new(vec![2, 1, 1], vec![1.0, 3.0]).unwrap();
        run(&mut store, &bn, x, Mode::Train).unwrap();
        assert!((store.get(bn.running_mean).item() - 0.02).abs() < 1e-15);
        assert!((store.get(bn.running_var).item() - (0.99 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn train_mode_needs_batch_of_two() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let err = run(&mut store, &bn, Tensor::zeros(&[1, 3, 1]), Mode::Train).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(run(&mut store, &bn, Tensor::zeros(&[1, 3, 1]), Mode::Infer).is_ok());
    }

    #[test]
    fn infer_mode_leaves_state_untouched() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2).unwrap();
        *store.get_mut(bn.running_mean) = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let before = store.clone();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = run(&mut store, &bn, x.clone(), Mode::Infer).unwrap();
        let b = run(&mut store, &bn, x, Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(store, before);
    }
}
