//! Layers used by plain blocks and the network head.
//!
//! Feature maps are `[batch, L, channels]`, where `L` indexes the encoded
//! input features. Every layer here preserves `L` except max pooling with a
//! stride above one.

mod attention;
mod batchnorm;
mod dropout;
mod dsc;
mod gru;
mod linear;
mod pool;

pub use attention::{AttentionOutput, SelfAttention};
pub use batchnorm::BatchNorm;
pub use dropout::Dropout;
pub use dsc::DepthwiseSeparableConv;
pub use gru::Gru;
pub use linear::{ClassifierHead, Linear};
pub use pool::{global_average_pool, MaxPool1d};

use rand::Rng as _;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// State threaded through a forward pass: the tape being recorded, the
/// parameter store, and the dropout random stream.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    store: StoreAccess<'a>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    rng: Option<&'a mut Rng>,
}

enum StoreAccess<'a> {
    Shared(&'a ParamStore),
    Exclusive(&'a mut ParamStore),
}

impl<'a> Ctx<'a> {
    /// Context that may update layer state (batch-norm running statistics).
    pub fn new(tape: &'a mut Tape, store: &'a mut ParamStore, mode: Mode) -> Self {
        let bound = vec![None; store.len()];
        Ctx {
            tape,
            store: StoreAccess::Exclusive(store),
            bound,
            mode,
            rng: None,
        }
    }

    /// Read-only inference context.
    pub fn infer(tape: &'a mut Tape, store: &'a ParamStore) -> Self {
        let bound = vec![None; store.len()];
        Ctx {
            tape,
            store: StoreAccess::Shared(store),
            bound,
            mode: Mode::Infer,
            rng: None,
        }
    }

    pub fn with_rng(mut self, rng: &'a mut Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        match &self.store {
            StoreAccess::Shared(s) => s,
            StoreAccess::Exclusive(s) => s,
        }
    }

    pub(crate) fn store_mut(&mut self) -> Result<&mut ParamStore> {
        match &mut self.store {
            StoreAccess::Exclusive(s) => Ok(s),
            StoreAccess::Shared(_) => Err(Error::Config(
                "layer state update requested through a read-only context".into(),
            )),
        }
    }

    pub(crate) fn rng(&mut self) -> Option<&mut Rng> {
        self.rng.as_deref_mut()
    }

    /// Use `var` for parameter `id` instead of a fresh leaf.
    pub fn bind(&mut self, id: ParamId, var: Var) -> Result<()> {
        let p = self.store().param(id);
        if self.tape.shape(var) != p.value.shape() {
            return Err(Error::shape(
                "bind",
                format!(
                    "{} expects {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    self.tape.shape(var)
                ),
            ));
        }
        self.bound[id.index()] = Some(var);
        Ok(())
    }

    /// Tape handle for a parameter, recording it as a leaf on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let (value, trainable) = {
            let p = self.store().param(id);
            (p.value.clone(), p.trainable)
        };
        let v = self.tape.leaf(value, trainable);
        self.bound[id.index()] = Some(v);
        v
    }

    /// Parameters that were used during this pass, with their tape handles.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId::from_index(i), v)))
            .collect()
    }
}

/// Uniform Glorot initialisation, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

pub(crate) fn expect_channels(op: &'static str, tape: &Tape, x: Var, rank: usize, channels: usize) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != rank || s[rank - 1] != channels {
        return Err(Error::shape(
            op,
            format!("expected rank {rank} input with {channels} channels, got {s:?}"),
        ));
    }
    Ok(())
}

/// Apply a `[c_in, c_out]` weight and `[c_out]` bias at every position of a
/// `[.., c_in]` input.
pub(crate) fn positionwise_affine(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let c_in = *shape.last().unwrap();
    let rows = shape.iter().product::<usize>() / c_in;
    let flat = if shape.len() == 2 { x } else { tape.reshape(x, &[rows, c_in])? };
    let mut y = tape.matmul(flat, w)?;
    if let Some(b) = b {
        y = tape.add_bias(y, b)?;
    }
    if shape.len() == 2 {
        return Ok(y);
    }
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = tape.shape(y)[1];
    tape.reshape(y, &out_shape)
}
