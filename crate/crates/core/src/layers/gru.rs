use super::{expect_channels, glorot_uniform, positionwise_affine, Ctx, Rng};
use crate::autograd::Var;
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

/// Gated recurrent unit scanned along the sequence axis, returning every
/// hidden state. Starts from a zero state.
///
/// ```text
/// z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
/// r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
/// ĥ_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
/// h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ ĥ_t
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    update: Gate,
    reset: Gate,
    candidate: Gate,
    pub c_in: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, prefix: &str, c_in: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut gate = |tag: &str| -> Result<Gate> {
            Ok(Gate {
                w: store.add(
                    format!("{prefix}/w_{tag}"),
                    glorot_uniform(&[c_in, hidden], c_in, hidden, rng),
                    true,
                )?,
                u: store.add(
                    format!("{prefix}/u_{tag}"),
                    glorot_uniform(&[hidden, hidden], hidden, hidden, rng),
                    true,
                )?,
                b: store.add(format!("{prefix}/b_{tag}"), Tensor::zeros(&[hidden]), true)?,
            })
        };
        Ok(Gru {
            update: gate("z")?,
            reset: gate("r")?,
            candidate: gate("h")?,
            c_in,
            hidden,
        })
    }

    pub fn param_count(c_in: usize, hidden: usize) -> usize {
        3 * (c_in * hidden + hidden * hidden + hidden)
    }

    /// Parameter ids in `(W, U, b)` order for the update, reset and candidate gates.
    pub fn param_ids(&self) -> [ParamId; 9] {
        let (z, r, h) = (&self.update, &self.reset, &self.candidate);
        [z.w, z.u, z.b, r.w, r.u, r.b, h.w, h.u, h.b]
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        expect_channels("gru", ctx.tape, x, 3, self.c_in)?;
        let (b, l) = (ctx.tape.shape(x)[0], ctx.tape.shape(x)[1]);

        // Input projections for every step at once.
        let project = |ctx: &mut Ctx<'_>, gate: &Gate| -> Result<(Var, Var)> {
            let w = ctx.param(gate.w);
            let bias = ctx.param(gate.b);
            let xw = positionwise_affine(ctx.tape, x, w, Some(bias))?;
            Ok((xw, ctx.param(gate.u)))
        };
        let (xz, uz) = project(ctx, &self.update)?;
        let (xr, ur) = project(ctx, &self.reset)?;
        let (xh, uh) = project(ctx, &self.candidate)?;

        let tape = &mut *ctx.tape;
        let mut h = tape.constant(Tensor::zeros(&[b, self.hidden]));
        let mut states = Vec::with_capacity(l);
        for t in 0..l {
            let xz_t = tape.select_step(xz, t)?;
            let hz = tape.matmul(h, uz)?;
            let z_pre = tape.add(xz_t, hz)?;
            let z = tape.sigmoid(z_pre)?;

            let xr_t = tape.select_step(xr, t)?;
            let hr = tape.matmul(h, ur)?;
            let r_pre = tape.add(xr_t, hr)?;
            let r = tape.sigmoid(r_pre)?;

            let xh_t = tape.select_step(xh, t)?;
            let rh = tape.mul(r, h)?;
            let rhu = tape.matmul(rh, uh)?;
            let c_pre = tape.add(xh_t, rhu)?;
            let cand = tape.tanh(c_pre)?;

            // h + z ⊙ (ĥ - h) == (1 - z) ⊙ h + z ⊙ ĥ
            let delta = tape.sub(cand, h)?;
            let step = tape.mul(z, delta)?;
            h = tape.add(h, step)?;
            states.push(h);
        }
        tape.stack_steps(&states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::layers::Mode;
    use rand::SeedableRng;

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn zero_weights_give_zero_sequence() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", 3, 4, &mut Rng::seed_from_u64(3)).unwrap();
        for id in gru.param_ids() {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(&shape);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 5, 3], 0.7));
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Infer);
        let y = gru.forward(&mut ctx, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 5, 4]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cells_match_hand_computation() {
        let (wz, uz, bz) = (0.5, -0.3, 0.1);
        let (wr, ur, br) = (-0.8, 0.6, 0.2);
        let (wh, uh, bh) = (1.2, 0.9, -0.4);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", 1, 1, &mut Rng::seed_from_u64(3)).unwrap();
        for (id, v) in gru.param_ids().into_iter().zip([wz, uz, bz, wr, ur, br, wh, uh, bh]) {
            *store.get_mut(id) = Tensor::full(store.get(id).shape(), v);
        }
        let xs = [0.7, -1.1];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 1], xs.to_vec()).unwrap());
        let mut ctx = Ctx::new(&mut tape, &mut store, Mode::Infer);
        let y = gru.forward(&mut ctx, x).unwrap();

        let mut h = 0.0_f64;
        let mut expected = vec![];
        for x in xs {
            let z = sigmoid(wz * x + uz * h + bz);
            let r = sigmoid(wr * x + ur * h + br);
            let cand = (wh * x + uh * (r * h) + bh).tanh();
            h = (1.0 - z) * h + z * cand;
            expected.push(h);
        }
        // first step from h0 = 0 is just z * tanh(wh x + bh)
        let first = sigmoid(wz * xs[0] + bz) * (wh * xs[0] + bh).tanh();
        assert!((tape.value(y).data()[0] - first).abs() < 1e-15);
        for (got, want) in tape.value(y).data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn parameter_count() {
        let mut store = ParamStore::new();
        Gru::new(&mut store, "gru", 3, 5, &mut Rng::seed_from_u64(3)).unwrap();
        assert_eq!(store.trainable_count(), Gru::param_count(3, 5));
        assert_eq!(Gru::param_count(4, 4), 108);
    }
}
