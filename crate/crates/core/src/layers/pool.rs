use serde::{Deserialize, Serialize};

use super::Ctx;
use crate::autograd::Var;
use crate::error::{Error, Result};

/// Windowed per-channel max along the sequence axis with "same" padding
/// (padding never wins the max).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool1d {
    pub size: usize,
    pub stride: usize,
}

impl Default for MaxPool1d {
    fn default() -> Self {
        MaxPool1d { size: 2, stride: 1 }
    }
}

impl MaxPool1d {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::Config("pool size and stride must be positive".into()));
        }
        Ok(MaxPool1d { size, stride })
    }

    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        ctx.tape.max_pool1d(x, self.size, self.stride)
    }
}

/// Mean over the sequence axis, `[b, L, c] -> [b, c]`.
pub fn global_average_pool(ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
    ctx.tape.mean_steps(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::layers::Mode;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;

    fn pool(input: &[f64], p: MaxPool1d) -> Vec<f64> {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, input.len(), 1], input.to_vec()).unwrap());
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Infer);
        let y = p.forward(&mut ctx, x).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn same_padding_window() {
        assert_eq!(pool(&[1.0, 3.0, 2.0], MaxPool1d::default()), vec![3.0, 3.0, 2.0]);
    }

    #[test]
    fn monotone_input_shifts() {
        assert_eq!(pool(&[1.0, 2.0, 3.0, 4.0], MaxPool1d::default()), vec![2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn constant_input_unchanged() {
        assert_eq!(pool(&[5.0; 6], MaxPool1d::default()), vec![5.0; 6]);
    }

    #[test]
    fn stride_two_halves_rounding_up() {
        let p = MaxPool1d::new(2, 2).unwrap();
        assert_eq!(pool(&[1.0, 4.0, 2.0, 0.0, 7.0], p), vec![4.0, 2.0, 7.0]);
        assert_eq!(p.output_len(5), 3);
        assert_eq!(p.output_len(6), 3);
    }

    #[test]
    fn average_pool() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 2], vec![0.0, 4.0, 2.0, 4.0]).unwrap());
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Infer);
        let y = global_average_pool(&mut ctx, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 4.0]);
    }
}
