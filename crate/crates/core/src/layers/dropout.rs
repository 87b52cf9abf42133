use rand::Rng as _;

use super::{Ctx, Mode};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at training
/// time so inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if ctx.mode() == Mode::Infer || self.rate == 0.0 {
            return Ok(x);
        }
        let shape = ctx.tape.shape(x).to_vec();
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let rng = ctx
            .rng()
            .ok_or_else(|| Error::Config("dropout in training mode needs a random stream".into()))?;
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mask = ctx.tape.constant(Tensor::new(shape, mask)?);
        ctx.tape.mul(x, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::layers::Rng;
    use crate::params::ParamStore;
    use rand::SeedableRng;

    fn apply(rate: f64, mode: Mode, input: Tensor, seed: u64) -> Tensor {
        let d = Dropout::new(rate).unwrap();
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let mut ctx = Ctx::new(&mut tape, &mut store, mode).with_rng(&mut rng);
        let y = d.forward(&mut ctx, x).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn identity_cases() {
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(apply(0.4, Mode::Infer, x.clone(), 1), x);
        assert_eq!(apply(0.0, Mode::Train, x.clone(), 1), x);
        assert_eq!(apply(0.0, Mode::Infer, x.clone(), 1), x);
    }

    #[test]
    fn rate_must_be_below_one() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
        assert!(Dropout::new(0.4).is_ok());
    }

    #[test]
    fn survivor_fraction_and_mean() {
        let n = 100_000;
        let y = apply(0.4, Mode::Train, Tensor::ones(&[1, n, 1]), 42);
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.6).abs() < 0.01, "survivor fraction {survivors}");
        let mean = y.sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn train_mode_without_rng_is_an_error() {
        let d = Dropout::new(0.4).unwrap();
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 1]));
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Train);
        assert!(d.forward(&mut ctx, x).is_err());
    }
}
