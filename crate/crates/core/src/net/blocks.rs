//! Plain, dense, transition and residual blocks.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Ctx, DepthwiseSeparableConv, Dropout, Gru, Linear, MaxPool1d, Rng};
use crate::params::ParamStore;

use super::config::ArchitectureConfig;

/// Layer settings shared by every plain block of a network.
#[derive(Debug, Clone, Copy)]
pub struct BlockSettings {
    pub kernel_size: usize,
    pub pool: MaxPool1d,
    pub dropout_rate: f64,
}

impl BlockSettings {
    pub fn from_config(cfg: &ArchitectureConfig) -> Result<Self> {
        Ok(BlockSettings {
            kernel_size: cfg.kernel_size,
            pool: MaxPool1d::new(cfg.pool.size, cfg.pool.stride)?,
            dropout_rate: cfg.dropout_rate,
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }
}

impl Default for BlockSettings {
    fn default() -> Self {
        BlockSettings {
            kernel_size: super::config::DEFAULT_KERNEL,
            pool: MaxPool1d::default(),
            dropout_rate: super::config::DEFAULT_DROPOUT,
        }
    }
}

/// Spatial-temporal feature extractor:
/// DSC → GRU → BatchNorm → ReLU → MaxPool → Dropout → linear bridge.
#[derive(Debug, Clone)]
pub struct PlainBlock {
    pub dsc: DepthwiseSeparableConv,
    pub gru: Gru,
    pub bn: BatchNorm,
    pub pool: MaxPool1d,
    pub dropout: Dropout,
    pub bridge: Linear,
    pub c_in: usize,
    pub c_out: usize,
}

impl PlainBlock {
    pub const LAYERS: usize = 7;
    pub const PARAM_LAYERS: usize = 4;

    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        settings: &BlockSettings,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(PlainBlock {
            dsc: DepthwiseSeparableConv::new(store, &format!("{prefix}/dsc"), c_in, c_out, settings.kernel_size, rng)?,
            gru: Gru::new(store, &format!("{prefix}/gru"), c_out, c_out, rng)?,
            bn: BatchNorm::new(store, &format!("{prefix}/bn"), c_out)?,
            pool: settings.pool,
            dropout: Dropout::new(settings.dropout_rate)?,
            bridge: Linear::new(store, &format!("{prefix}/bridge"), c_out, c_out, rng)?,
            c_in,
            c_out,
        })
    }

    pub fn param_count(c_in: usize, c_out: usize, kernel: usize) -> usize {
        DepthwiseSeparableConv::param_count(c_in, c_out, kernel)
            + Gru::param_count(c_out, c_out)
            + BatchNorm::param_count(c_out)
            + Linear::param_count(c_out, c_out)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.dsc.forward(ctx, x)?;
        let h = self.gru.forward(ctx, h)?;
        let h = self.bn.forward(ctx, h)?;
        let h = ctx.tape.relu(h)?;
        let h = self.pool.forward(ctx, h)?;
        let h = self.dropout.forward(ctx, h)?;
        self.bridge.forward(ctx, h)
    }
}

/// `k` plain blocks; block `i` reads the concatenation of the block input and
/// every earlier output (`i * c_base` channels) and emits `c_base` channels.
/// The block output concatenates all of them: `(k + 1) * c_base` channels.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub plains: Vec<PlainBlock>,
    pub c_base: usize,
}

impl DenseBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_base: usize,
        growth_rate: usize,
        settings: &BlockSettings,
        rng: &mut Rng,
    ) -> Result<Self> {
        if growth_rate == 0 {
            return Err(Error::Config("growth rate must be at least 1".into()));
        }
        if settings.pool.stride != 1 {
            return Err(Error::Config(
                "dense blocks concatenate along channels and need length-preserving pooling".into(),
            ));
        }
        let plains = (1..=growth_rate)
            .map(|i| PlainBlock::new(store, &format!("{prefix}/plain{i}"), i * c_base, c_base, settings, rng))
            .collect::<Result<_>>()?;
        Ok(DenseBlock { plains, c_base })
    }

    pub fn growth_rate(&self) -> usize {
        self.plains.len()
    }

    pub fn output_width(c_base: usize, growth_rate: usize) -> usize {
        (growth_rate + 1) * c_base
    }

    pub fn param_count(c_base: usize, growth_rate: usize, kernel: usize) -> usize {
        (1..=growth_rate)
            .map(|i| PlainBlock::param_count(i * c_base, c_base, kernel))
            .sum()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut features = vec![x];
        for plain in &self.plains {
            let input = if features.len() == 1 { x } else { ctx.tape.concat(&features)? };
            features.push(plain.forward(ctx, input)?);
        }
        ctx.tape.concat(&features)
    }
}

/// Plain block with an identity shortcut: `plain(x) + x`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub plain: PlainBlock,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        settings: &BlockSettings,
        rng: &mut Rng,
    ) -> Result<Self> {
        if c_in != c_out {
            return Err(Error::Config(format!(
                "residual block cannot add a {c_out}-channel output to a {c_in}-channel shortcut"
            )));
        }
        if settings.pool.stride != 1 {
            return Err(Error::Config("residual blocks need length-preserving pooling".into()));
        }
        Ok(ResidualBlock {
            plain: PlainBlock::new(store, prefix, c_in, c_out, settings, rng)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let y = self.plain.forward(ctx, x)?;
        ctx.tape.add(y, x)
    }
}

/// Transition blocks share the plain-block structure; the pointwise
/// convolution maps `c_in` back down to `c_base`.
pub fn transition_block(
    store: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    c_base: usize,
    settings: &BlockSettings,
    rng: &mut Rng,
) -> Result<PlainBlock> {
    PlainBlock::new(store, prefix, c_in, c_base, settings, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::layers::Mode;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn rng() -> Rng {
        Rng::seed_from_u64(0)
    }

    fn run_shape(f: impl Fn(&mut Ctx<'_>, Var) -> Result<Var>, store: &mut ParamStore, input: &[usize]) -> Vec<usize> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(input, 0.3));
        let mut ctx = Ctx::new(&mut tape, store, Mode::Infer);
        let y = f(&mut ctx, x).unwrap();
        tape.shape(y).to_vec()
    }

    #[test]
    fn plain_block_param_count() {
        let mut store = ParamStore::new();
        let settings = BlockSettings::default();
        PlainBlock::new(&mut store, "p", 4, 4, &settings, &mut rng()).unwrap();
        // DSC 12+16+4, GRU 3*(16+16+4), BN 8, bridge 20
        assert_eq!(PlainBlock::param_count(4, 4, 3), 168);
        assert_eq!(store.trainable_count(), 168);
    }

    #[test]
    fn plain_block_preserves_length() {
        let mut store = ParamStore::new();
        let settings = BlockSettings::default();
        let p = PlainBlock::new(&mut store, "p", 8, 5, &settings, &mut rng()).unwrap();
        assert_eq!(run_shape(|c, x| p.forward(c, x), &mut store, &[2, 10, 8]), vec![2, 10, 5]);
    }

    #[test]
    fn dense_block_widths() {
        for (c_base, k, expect) in [(8, 4, 40), (3, 2, 9), (5, 1, 10)] {
            let mut store = ParamStore::new();
            let d = DenseBlock::new(&mut store, "d", c_base, k, &BlockSettings::default(), &mut rng()).unwrap();
            assert_eq!(DenseBlock::output_width(c_base, k), expect);
            assert_eq!(run_shape(|c, x| d.forward(c, x), &mut store, &[2, 6, c_base]), vec![2, 6, expect]);
            assert_eq!(store.trainable_count(), DenseBlock::param_count(c_base, k, 3));
        }
    }

    #[test]
    fn growth_law_over_grid() {
        for k in 1..=6 {
            for c_base in [1, 4, 8] {
                let mut store = ParamStore::new();
                let d = DenseBlock::new(&mut store, "d", c_base, k, &BlockSettings::default(), &mut rng()).unwrap();
                let out = run_shape(|c, x| d.forward(c, x), &mut store, &[2, 3, c_base]);
                assert_eq!(out[2], (k + 1) * c_base);
            }
        }
    }

    #[test]
    fn stacked_dense_blocks_grow_geometrically() {
        let (c_base, k) = (1, 2);
        for m in 1..=3u32 {
            let mut store = ParamStore::new();
            let mut blocks = Vec::new();
            let mut width = c_base;
            for i in 0..m {
                blocks.push(
                    DenseBlock::new(&mut store, &format!("d{i}"), width, k, &BlockSettings::default(), &mut rng()).unwrap(),
                );
                width = DenseBlock::output_width(width, k);
            }
            let out = run_shape(
                |c, mut x| {
                    for b in &blocks {
                        x = b.forward(c, x)?;
                    }
                    Ok(x)
                },
                &mut store,
                &[2, 3, c_base],
            );
            assert_eq!(out[2], (k + 1).pow(m) * c_base);
        }
    }

    #[test]
    fn transition_restores_base_width() {
        let mut store = ParamStore::new();
        let t = transition_block(&mut store, "t", 40, 8, &BlockSettings::default(), &mut rng()).unwrap();
        assert_eq!(run_shape(|c, x| t.forward(c, x), &mut store, &[2, 4, 40]), vec![2, 4, 8]);
    }

    #[test]
    fn residual_width_change_rejected() {
        let mut store = ParamStore::new();
        let err = ResidualBlock::new(&mut store, "r", 8, 9, &BlockSettings::default(), &mut rng()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
