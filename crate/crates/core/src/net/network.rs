//! Whole-network assembly, layer accounting and forward passes.

use rand::SeedableRng;
use serde::Serialize;

use super::blocks::{transition_block, BlockSettings, DenseBlock, PlainBlock, ResidualBlock};
use super::config::{ArchitectureConfig, Connectivity};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{global_average_pool, ClassifierHead, Ctx, Linear, Mode, Rng, SelfAttention};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Stem,
    Plain,
    Dense,
    Transition,
    Residual,
    Attention,
    Pool,
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockPlan {
    pub name: String,
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_out: usize,
    /// Sequence length leaving this stage.
    pub length: usize,
    /// Plain blocks contained in this stage.
    pub plain_blocks: usize,
    pub params: usize,
}

/// Stage-by-stage summary of a built network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkPlan {
    pub label: String,
    pub blocks: Vec<BlockPlan>,
    pub plain_blocks: usize,
    pub total_layers: usize,
    pub parameter_layers: usize,
    pub trainable_params: usize,
}

impl NetworkPlan {
    /// `7 * plain blocks + 3`, plus one when attention is present.
    pub fn layer_count(cfg: &ArchitectureConfig) -> usize {
        PlainBlock::LAYERS * cfg.plain_block_count() + 3 + usize::from(cfg.attention.enabled)
    }

    /// `4 * plain blocks + 1` for the head, plus one for projected attention.
    pub fn parameter_layer_count(cfg: &ArchitectureConfig) -> usize {
        PlainBlock::PARAM_LAYERS * cfg.plain_block_count()
            + 1
            + usize::from(cfg.attention.enabled && cfg.attention.projections)
    }

    /// Channels entering the attention layer (or pooling when attention is off).
    pub fn trunk_width(&self) -> usize {
        self.blocks
            .iter()
            .rev()
            .find(|b| !matches!(b.kind, BlockKind::Attention | BlockKind::Pool | BlockKind::Head))
            .map(|b| b.c_out)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub enum Stage {
    Plain(PlainBlock),
    Dense(DenseBlock),
    Transition(PlainBlock),
    Residual(ResidualBlock),
}

impl Stage {
    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Stage::Plain(b) | Stage::Transition(b) => b.forward(ctx, x),
            Stage::Dense(b) => b.forward(ctx, x),
            Stage::Residual(b) => b.forward(ctx, x),
        }
    }
}

/// Immutable topology; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct NetworkLayers {
    /// Encoded feature count `F`; each feature becomes one sequence position.
    pub input_width: usize,
    pub stem: Linear,
    pub stages: Vec<Stage>,
    pub attention: Option<SelfAttention>,
    pub head: ClassifierHead,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[b, classes]` class probabilities.
    pub probs: Var,
    /// `[b, L, L]` attention weights when attention is enabled.
    pub attention: Option<Var>,
}

impl NetworkLayers {
    /// `x` is `[b, F]` with one encoded feature per column.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<ForwardOutput> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input_width {
            return Err(Error::shape(
                "network",
                format!("expected [batch, {}] input, got {shape:?}", self.input_width),
            ));
        }
        let seq = ctx.tape.reshape(x, &[shape[0], shape[1], 1])?;
        let mut h = self.stem.forward(ctx, seq)?;
        for stage in &self.stages {
            h = stage.forward(ctx, h)?;
        }
        let mut attention = None;
        if let Some(att) = &self.attention {
            let out = att.forward(ctx, h)?;
            attention = Some(out.weights);
            h = out.output;
        }
        let pooled = global_average_pool(ctx, h)?;
        let probs = self.head.forward(ctx, pooled)?;
        Ok(ForwardOutput { probs, attention })
    }
}

/// Outcome of a recorded forward pass: outputs plus the tape handles of
/// every parameter that took part.
pub struct ForwardPass {
    pub output: ForwardOutput,
    pub params: Vec<(ParamId, Var)>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: ArchitectureConfig,
    pub layers: NetworkLayers,
    pub params: ParamStore,
    pub plan: NetworkPlan,
    /// Arithmetic precision used for recorded passes.
    pub precision: Precision,
}

/// Rows per inference chunk; bounds tape memory for large inputs.
const PREDICT_CHUNK: usize = 512;

impl Network {
    /// Build from a validated config. Same config and seed give identical parameters.
    pub fn build(cfg: &ArchitectureConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let settings = BlockSettings::from_config(cfg)?;
        let c = cfg.stem_width;
        let mut length = cfg.input_width;
        let mut plans = Vec::new();

        let stem = Linear::new(&mut store, "stem", 1, c, &mut rng)?;
        plans.push(BlockPlan {
            name: "stem".into(),
            kind: BlockKind::Stem,
            c_in: 1,
            c_out: c,
            length,
            plain_blocks: 0,
            params: Linear::param_count(1, c),
        });

        let mut stages = Vec::new();
        let mut width = c;
        match cfg.connectivity {
            Connectivity::Concat => {
                let k = cfg.growth_rate.expect("validated");
                for i in 0..cfg.blocks {
                    if i > 0 {
                        let name = format!("transition{i}");
                        let t = transition_block(&mut store, &name, width, c, &settings, &mut rng)?;
                        plans.push(BlockPlan {
                            name,
                            kind: BlockKind::Transition,
                            c_in: width,
                            c_out: c,
                            length,
                            plain_blocks: 1,
                            params: PlainBlock::param_count(width, c, cfg.kernel_size),
                        });
                        stages.push(Stage::Transition(t));
                        width = c;
                    }
                    let name = format!("dense{}", i + 1);
                    let d = DenseBlock::new(&mut store, &name, c, k, &settings, &mut rng)?;
                    let out = DenseBlock::output_width(c, k);
                    plans.push(BlockPlan {
                        name,
                        kind: BlockKind::Dense,
                        c_in: width,
                        c_out: out,
                        length,
                        plain_blocks: k,
                        params: DenseBlock::param_count(c, k, cfg.kernel_size),
                    });
                    stages.push(Stage::Dense(d));
                    width = out;
                }
            }
            Connectivity::Add => {
                for i in 0..cfg.blocks {
                    let name = format!("residual{}", i + 1);
                    let r = ResidualBlock::new(&mut store, &name, width, width, &settings, &mut rng)?;
                    plans.push(BlockPlan {
                        name,
                        kind: BlockKind::Residual,
                        c_in: width,
                        c_out: width,
                        length,
                        plain_blocks: 1,
                        params: PlainBlock::param_count(width, width, cfg.kernel_size),
                    });
                    stages.push(Stage::Residual(r));
                }
            }
            Connectivity::None => {
                for i in 0..cfg.blocks {
                    let name = format!("plain{}", i + 1);
                    let p = PlainBlock::new(&mut store, &name, width, width, &settings, &mut rng)?;
                    length = settings.pool.output_len(length);
                    plans.push(BlockPlan {
                        name,
                        kind: BlockKind::Plain,
                        c_in: width,
                        c_out: width,
                        length,
                        plain_blocks: 1,
                        params: PlainBlock::param_count(width, width, cfg.kernel_size),
                    });
                    stages.push(Stage::Plain(p));
                }
            }
        }

        let attention = if cfg.attention.enabled {
            let a = cfg.attention;
            let att = SelfAttention::new(&mut store, "attention", width, a.width, a.projections, a.scaled, &mut rng)?;
            plans.push(BlockPlan {
                name: "attention".into(),
                kind: BlockKind::Attention,
                c_in: width,
                c_out: att.width,
                length,
                plain_blocks: 0,
                params: att.param_count(),
            });
            width = att.width;
            Some(att)
        } else {
            None
        };

        plans.push(BlockPlan {
            name: "gap".into(),
            kind: BlockKind::Pool,
            c_in: width,
            c_out: width,
            length: 1,
            plain_blocks: 0,
            params: 0,
        });
        let head = ClassifierHead::new(&mut store, "head", width, cfg.classes, &mut rng)?;
        plans.push(BlockPlan {
            name: "head".into(),
            kind: BlockKind::Head,
            c_in: width,
            c_out: cfg.classes,
            length: 1,
            plain_blocks: 0,
            params: Linear::param_count(width, cfg.classes),
        });

        let plan = NetworkPlan {
            label: cfg.label(),
            plain_blocks: plans.iter().map(|b| b.plain_blocks).sum(),
            total_layers: NetworkPlan::layer_count(cfg),
            parameter_layers: NetworkPlan::parameter_layer_count(cfg),
            trainable_params: plans.iter().map(|b| b.params).sum(),
            blocks: plans,
        };
        debug_assert_eq!(plan.trainable_params, store.trainable_count());
        Ok(Network {
            config: cfg.clone(),
            layers: NetworkLayers {
                input_width: cfg.input_width,
                stem,
                stages,
                attention,
                head,
            },
            params: store,
            plan,
            precision: Precision::Double,
        })
    }

    /// Trainable scalar count; matches what the optimizer updates.
    pub fn count_params(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Record a forward pass on `tape`. Training mode updates batch-norm
    /// running statistics and needs `rng` for dropout.
    pub fn forward(&mut self, tape: &mut Tape, x: &Tensor, mode: Mode, rng: Option<&mut Rng>) -> Result<ForwardPass> {
        let input = tape.constant(x.clone());
        let mut ctx = Ctx::new(tape, &mut self.params, mode);
        if let Some(rng) = rng {
            ctx = ctx.with_rng(rng);
        }
        let output = self.layers.forward(&mut ctx, input)?;
        let params = ctx.bound_params();
        Ok(ForwardPass { output, params })
    }

    /// Class probabilities `[n, classes]` in inference mode. Does not modify the network.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.infer(x, false)?.0)
    }

    /// Probabilities and, when attention is enabled, `[n, L, L]` attention weights.
    pub fn infer(&self, x: &Tensor, want_attention: bool) -> Result<(Tensor, Option<Tensor>)> {
        if x.rank() != 2 {
            return Err(Error::shape("predict", format!("expected [n, F] input, got {:?}", x.shape())));
        }
        let n = x.rows();
        let mut probs = Vec::with_capacity(n * self.classes());
        let mut att: Option<(Vec<usize>, Vec<f64>)> = None;
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let idx: Vec<usize> = (start..n.min(start + PREDICT_CHUNK)).collect();
            let chunk = x.select_rows(&idx);
            let mut tape = Tape::new().with_precision(self.precision);
            let input = tape.constant(chunk);
            let mut ctx = Ctx::infer(&mut tape, &self.params);
            let out = self.layers.forward(&mut ctx, input)?;
            probs.extend_from_slice(tape.value(out.probs).data());
            if want_attention {
                if let Some(a) = out.attention {
                    let v = tape.value(a);
                    let entry = att.get_or_insert_with(|| (v.shape()[1..].to_vec(), Vec::new()));
                    entry.1.extend_from_slice(v.data());
                }
            }
        }
        let probs = Tensor::new(vec![n, self.classes()], probs)?;
        let att = match att {
            Some((tail, data)) => {
                let mut shape = vec![n];
                shape.extend(tail);
                Some(Tensor::new(shape, data)?)
            }
            None => None,
        };
        Ok((probs, att))
    }
}
