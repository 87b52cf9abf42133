use super::{expect_channels, glorot_uniform, positionwise_affine, Ctx, Rng};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
struct Projections {
    query: ParamId,
    key: ParamId,
    value: ParamId,
}

/// Single-head dot-product self-attention over sequence positions.
///
/// `A = softmax_rows(Q Kᵀ / √d)`, `out = A V`, with `Q, K, V` learned
/// `c -> d` projections of the input (no biases). With projections disabled
/// `Q = K = V = x` and `d = c`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    projections: Option<Projections>,
    pub channels: usize,
    pub width: usize,
    pub scaled: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `[b, L, d]`
    pub output: Var,
    /// Row-stochastic `[b, L, L]` weights.
    pub weights: Var,
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        width: usize,
        projections: bool,
        scaled: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !projections {
            return Ok(SelfAttention {
                projections: None,
                channels,
                width: channels,
                scaled,
            });
        }
        if width == 0 {
            return Err(Error::Config("attention width must be positive".into()));
        }
        let mut proj = |tag: &str| {
            store.add(
                format!("{prefix}/w_{tag}"),
                glorot_uniform(&[channels, width], channels, width, rng),
                true,
            )
        };
        Ok(SelfAttention {
            projections: Some(Projections {
                query: proj("q")?,
                key: proj("k")?,
                value: proj("v")?,
            }),
            channels,
            width,
            scaled,
        })
    }

    pub fn param_count(&self) -> usize {
        if self.projections.is_some() {
            3 * self.channels * self.width
        } else {
            0
        }
    }

    /// `(W_q, W_k, W_v)` when projections are enabled.
    pub fn projection_ids(&self) -> Option<(ParamId, ParamId, ParamId)> {
        self.projections.as_ref().map(|p| (p.query, p.key, p.value))
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<AttentionOutput> {
        expect_channels("self_attention", ctx.tape, x, 3, self.channels)?;
        let (q, k, v) = match &self.projections {
            Some(p) => {
                let wq = ctx.param(p.query);
                let wk = ctx.param(p.key);
                let wv = ctx.param(p.value);
                (
                    positionwise_affine(ctx.tape, x, wq, None)?,
                    positionwise_affine(ctx.tape, x, wk, None)?,
                    positionwise_affine(ctx.tape, x, wv, None)?,
                )
            }
            None => (x, x, x),
        };
        let tape = &mut *ctx.tape;
        let kt = tape.transpose(k)?;
        let mut scores = tape.batch_matmul(q, kt)?;
        if self.scaled {
            scores = tape.scale(scores, 1.0 / (self.width as f64).sqrt())?;
        }
        let weights = tape.softmax_rows(scores)?;
        let output = tape.batch_matmul(weights, v)?;
        Ok(AttentionOutput { output, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::layers::Mode;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn layer(store: &mut ParamStore, c: usize, d: usize) -> SelfAttention {
        SelfAttention::new(store, "att", c, d, true, true, &mut Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn rows_sum_to_one() {
        let mut store = ParamStore::new();
        let att = layer(&mut store, 4, 3);
        let mut rng = Rng::seed_from_u64(5);
        let input = glorot_uniform(&[2, 6, 4], 1, 1, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Infer);
        let out = att.forward(&mut ctx, x).unwrap();
        assert_eq!(tape.shape(out.output), &[2, 6, 3]);
        assert_eq!(tape.shape(out.weights), &[2, 6, 6]);
        for row in tape.value(out.weights).data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_position_attends_to_itself() {
        let mut store = ParamStore::new();
        let att = layer(&mut store, 2, 2);
        let (_, _, wv) = att.projection_ids().unwrap();
        *store.get_mut(wv) = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap());
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Infer);
        let out = att.forward(&mut ctx, x).unwrap();
        assert_eq!(tape.value(out.weights).data(), &[1.0]);
        assert_eq!(tape.value(out.output).data(), &[-2.0, -2.0]);
    }

    #[test]
    fn zero_query_key_is_uniform_mean() {
        let mut store = ParamStore::new();
        let att = layer(&mut store, 3, 2);
        let (wq, wk, wv) = att.projection_ids().unwrap();
        *store.get_mut(wq) = Tensor::zeros(&[3, 2]);
        *store.get_mut(wk) = Tensor::zeros(&[3, 2]);
        let l = 5;
        let mut rng = Rng::seed_from_u64(9);
        let input = glorot_uniform(&[1, l, 3], 1, 1, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Infer);
        let out = att.forward(&mut ctx, x).unwrap();
        assert!(tape.value(out.weights).data().iter().all(|&a| (a - 0.2).abs() < 1e-15));

        let w = store.get(wv);
        let mut mean = [0.0; 2];
        for pos in input.data().chunks(3) {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += (0..3).map(|i| pos[i] * w.data()[i * 2 + j]).sum::<f64>() / l as f64;
            }
        }
        for row in tape.value(out.output).data().chunks(2) {
            assert!((row[0] - mean[0]).abs() < 1e-12 && (row[1] - mean[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count_and_toggle() {
        let mut store = ParamStore::new();
        let att = layer(&mut store, 8, 4);
        assert_eq!(att.param_count(), 96);
        assert_eq!(store.trainable_count(), 96);

        let mut bare = ParamStore::new();
        let plain = SelfAttention::new(&mut bare, "att", 8, 4, false, true, &mut Rng::seed_from_u64(1)).unwrap();
        assert_eq!(plain.param_count(), 0);
        assert_eq!(plain.width, 8);
        assert!(bare.is_empty());
    }
}
