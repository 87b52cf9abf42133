use super::{expect_channels, glorot_uniform, positionwise_affine, Ctx, Rng};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Affine map applied independently at every sequence position (a 1×1
/// convolution). Used for the stem, the linear bridge closing each plain
/// block, and the classifier head.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add(
            format!("{prefix}/weight"),
            glorot_uniform(&[c_in, c_out], c_in, c_out, rng),
            true,
        )?;
        let bias = store.add(format!("{prefix}/bias"), Tensor::zeros(&[c_out]), true)?;
        Ok(Linear {
            weight,
            bias,
            c_in,
            c_out,
        })
    }

    pub fn param_count(c_in: usize, c_out: usize) -> usize {
        c_in * c_out + c_out
    }

    /// `[b, L, c_in] -> [b, L, c_out]` or `[b, c_in] -> [b, c_out]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let rank = ctx.tape.shape(x).len();
        expect_channels("linear", ctx.tape, x, rank, self.c_in)?;
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        positionwise_affine(ctx.tape, x, w, Some(b))
    }
}

/// Dense layer followed by a row softmax, producing class probabilities.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub dense: Linear,
    pub classes: usize,
}

impl ClassifierHead {
    /// Factor applied to the Glorot draw of the head weights. Pooled features
    /// are O(1) after batch norm and ReLU, so an unscaled head starts with
    /// logits large enough to push the first-batch loss well above `ln(classes)`.
    pub const INIT_SCALE: f64 = 0.1;

    pub fn new(store: &mut ParamStore, prefix: &str, c_in: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {classes}")));
        }
        let dense = Linear::new(store, prefix, c_in, classes, rng)?;
        store.get_mut(dense.weight).data_mut().iter_mut().for_each(|w| *w *= Self::INIT_SCALE);
        Ok(ClassifierHead { dense, classes })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        expect_channels("classifier_head", ctx.tape, x, 2, self.dense.c_in)?;
        let logits = self.dense.forward(ctx, x)?;
        ctx.tape.softmax_rows(logits)
    }
}
