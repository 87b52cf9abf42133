use super::{expect_channels, glorot_uniform, positionwise_affine, Ctx, Rng};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Depthwise-separable 1-D convolution: one `K`-tap kernel per input channel
/// (same padding, no bias), then a pointwise `c_in -> c_out` mix with bias.
#[derive(Debug, Clone)]
pub struct DepthwiseSeparableConv {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl DepthwiseSeparableConv {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {kernel}")));
        }
        let depthwise = store.add(
            format!("{prefix}/depthwise"),
            glorot_uniform(&[kernel, c_in], kernel, kernel, rng),
            true,
        )?;
        let pointwise = store.add(
            format!("{prefix}/pointwise"),
            glorot_uniform(&[c_in, c_out], c_in, c_out, rng),
            true,
        )?;
        let bias = store.add(format!("{prefix}/bias"), Tensor::zeros(&[c_out]), true)?;
        Ok(DepthwiseSeparableConv {
            depthwise,
            pointwise,
            bias,
            c_in,
            c_out,
            kernel,
        })
    }

    pub fn param_count(c_in: usize, c_out: usize, kernel: usize) -> usize {
        kernel * c_in + c_in * c_out + c_out
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        expect_channels("dsc", ctx.tape, x, 3, self.c_in)?;
        let dw = ctx.param(self.depthwise);
        let pw = ctx.param(self.pointwise);
        let b = ctx.param(self.bias);
        let h = ctx.tape.depthwise_conv1d(x, dw)?;
        positionwise_affine(ctx.tape, h, pw, Some(b))
    }
}
