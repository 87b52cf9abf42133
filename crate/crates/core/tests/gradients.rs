//! Tape gradients against central finite differences.

use dualnet::autograd::{Tape, Var};
use dualnet::gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
use dualnet::layers::{
    glorot_uniform, BatchNorm, ClassifierHead, Ctx, DepthwiseSeparableConv, Gru, Linear, Mode, Rng, SelfAttention,
};
use dualnet::net::{ArchitectureConfig, BlockSettings, Network, PlainBlock};
use dualnet::params::{ParamId, ParamStore};
use dualnet::{Result, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::seed_from_u64(seed);
    glorot_uniform(shape, 1, 1, &mut rng).map(|v| v * 1.5)
}

/// `sum(y ⊙ r)` for a fixed random `r`, so that every output element matters.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(random(tape.shape(y), seed ^ 0xabc));
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn check_op(inputs: &[Tensor], op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> GradCheckReport {
    gradient_check(
        |tape, vars| {
            let y = op(tape, vars)?;
            weighted_sum(tape, y, 1)
        },
        inputs,
        GradCheckOptions::default(),
    )
    .unwrap()
}

fn assert_pass(name: &str, report: GradCheckReport) {
    assert!(report.passed(), "{name}: {report}");
}

#[test]
fn primitive_ops_match_finite_differences() {
    for seed in 0..3 {
        let s = |i: u64| seed * 100 + i;
        let a = random(&[4, 3], s(1));
        let b = random(&[3, 2], s(2));
        assert_pass("matmul", check_op(&[a.clone(), b], |t, v| t.matmul(v[0], v[1])));

        let x = random(&[2, 3, 4], s(3));
        let y = random(&[2, 4, 5], s(4));
        assert_pass("batch_matmul", check_op(&[x.clone(), y], |t, v| t.batch_matmul(v[0], v[1])));
        assert_pass("transpose", check_op(std::slice::from_ref(&x), |t, v| t.transpose(v[0])));
        assert_pass("reshape", check_op(std::slice::from_ref(&x), |t, v| t.reshape(v[0], &[6, 4])));

        let x2 = random(&[2, 3, 4], s(5));
        assert_pass("add", check_op(&[x.clone(), x2.clone()], |t, v| t.add(v[0], v[1])));
        assert_pass("sub", check_op(&[x.clone(), x2.clone()], |t, v| t.sub(v[0], v[1])));
        assert_pass("mul", check_op(&[x.clone(), x2.clone()], |t, v| t.mul(v[0], v[1])));
        assert_pass("scale", check_op(std::slice::from_ref(&x), |t, v| t.scale(v[0], -0.7)));
        assert_pass(
            "add_bias",
            check_op(&[x.clone(), random(&[4], s(6))], |t, v| t.add_bias(v[0], v[1])),
        );

        assert_pass("relu", check_op(std::slice::from_ref(&x), |t, v| t.relu(v[0])));
        assert_pass("sigmoid", check_op(std::slice::from_ref(&x), |t, v| t.sigmoid(v[0])));
        assert_pass("tanh", check_op(std::slice::from_ref(&x), |t, v| t.tanh(v[0])));
        assert_pass("softmax_rows", check_op(std::slice::from_ref(&x), |t, v| t.softmax_rows(v[0])));

        let narrow = random(&[2, 3, 2], s(7));
        assert_pass(
            "concat",
            check_op(&[x.clone(), narrow, x2.clone()], |t, v| t.concat(&[v[0], v[1], v[2]])),
        );
        assert_pass(
            "select/stack",
            check_op(std::slice::from_ref(&x), |t, v| {
                let a = t.select_step(v[0], 2)?;
                let b = t.select_step(v[0], 0)?;
                t.stack_steps(&[a, b, a])
            }),
        );
        assert_pass(
            "depthwise_conv1d",
            check_op(&[x.clone(), random(&[3, 4], s(8))], |t, v| t.depthwise_conv1d(v[0], v[1])),
        );
        let wide = random(&[3, 7, 4], s(9));
        assert_pass("max_pool1d", check_op(std::slice::from_ref(&wide), |t, v| t.max_pool1d(v[0], 2, 1)));
        assert_pass("max_pool1d stride 2", check_op(std::slice::from_ref(&wide), |t, v| t.max_pool1d(v[0], 3, 2)));
        assert_pass("mean_steps", check_op(std::slice::from_ref(&wide), |t, v| t.mean_steps(v[0])));
        assert_pass(
            "batch_norm_train",
            check_op(&[wide.clone(), random(&[4], s(10)), random(&[4], s(11))], |t, v| {
                Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)
            }),
        );
        assert_pass(
            "batch_norm_infer",
            check_op(&[wide, random(&[4], s(12)), random(&[4], s(13))], |t, v| {
                t.batch_norm_infer(v[0], v[1], v[2], &[0.1, -0.2, 0.3, 0.0], &[1.5, 0.5, 2.0, 1.0], 1e-5)
            }),
        );
        assert_pass(
            "cross_entropy",
            gradient_check(
                |t, v| {
                    let p = t.softmax_rows(v[0])?;
                    t.sparse_cross_entropy(p, &[0, 2, 1, 2], 1e-12)
                },
                &[random(&[4, 3], s(14))],
                GradCheckOptions::default(),
            )
            .unwrap(),
        );
    }
}

#[test]
fn mean_steps_gradient_is_one_over_length() {
    let x = random(&[2, 5, 3], 4);
    let mut tape = Tape::new();
    let v = tape.leaf(x, true);
    let m = tape.mean_steps(v).unwrap();
    let loss = tape.sum(m).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.get(v).unwrap().data().iter().all(|&d| (d - 0.2).abs() < 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_and_tanh_gradients_on_random_inputs(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let a = random(&[m, k], seed);
        let b = random(&[k, n], seed.wrapping_add(1));
        let r = check_op(&[a, b], |t, v| {
            let p = t.matmul(v[0], v[1])?;
            t.tanh(p)
        });
        prop_assert!(r.passed(), "{}", r);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9, scale in 0.1f64..500.0) {
        let x = random(&[rows, cols], seed).map(|v| v * scale);
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.softmax_rows(v).unwrap();
        for row in tape.value(s).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

/// Gradient check of a layer with respect to its input and every trainable
/// parameter. Each evaluation runs on a fresh copy of the store with a
/// reseeded dropout stream.
fn check_layer<F>(store: &ParamStore, input: Tensor, mode: Mode, opts: GradCheckOptions, forward: F) -> GradCheckReport
where
    F: Fn(&mut Ctx<'_>, Var) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.trainable_ids();
    let mut inputs = vec![input];
    inputs.extend(ids.iter().map(|&id| store.get(id).clone()));
    gradient_check(
        |tape, vars| {
            let mut local = store.clone();
            let mut rng = Rng::seed_from_u64(99);
            let mut ctx = Ctx::new(tape, &mut local, mode).with_rng(&mut rng);
            for (&id, &v) in ids.iter().zip(&vars[1..]) {
                ctx.bind(id, v)?;
            }
            let y = forward(&mut ctx, vars[0])?;
            drop(ctx);
            weighted_sum(tape, y, 5)
        },
        &inputs,
        opts,
    )
    .unwrap()
}

fn layer_opts() -> GradCheckOptions {
    GradCheckOptions::with_tolerance(1e-3)
}

#[test]
fn linear_layer() {
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(1);
    let layer = Linear::new(&mut store, "lin", 3, 2, &mut rng).unwrap();
    let r = check_layer(&store, random(&[4, 5, 3], 2), Mode::Train, layer_opts(), |c, x| layer.forward(c, x));
    assert_pass("linear", r);
}

#[test]
fn classifier_head() {
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(1);
    let head = ClassifierHead::new(&mut store, "head", 3, 4, &mut rng).unwrap();
    let r = check_layer(&store, random(&[4, 3], 2), Mode::Train, layer_opts(), |c, x| head.forward(c, x));
    assert_pass("head", r);
}

#[test]
fn depthwise_separable_conv() {
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(1);
    let dsc = DepthwiseSeparableConv::new(&mut store, "dsc", 3, 4, 3, &mut rng).unwrap();
    let r = check_layer(&store, random(&[4, 6, 3], 2), Mode::Train, layer_opts(), |c, x| dsc.forward(c, x));
    assert_pass("dsc", r);
    // Purely linear, so the tight tolerance holds as well.
    let r = check_layer(&store, random(&[4, 6, 3], 3), Mode::Train, GradCheckOptions::default(), |c, x| {
        dsc.forward(c, x)
    });
    assert_pass("dsc tight", r);
}

#[test]
fn gru_through_time() {
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(1);
    let gru = Gru::new(&mut store, "gru", 3, 3, &mut rng).unwrap();
    let r = check_layer(&store, random(&[4, 5, 3], 2), Mode::Train, layer_opts(), |c, x| gru.forward(c, x));
    assert_pass("gru", r);
}

#[test]
fn batch_norm_train_batch_of_eight() {
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
    let r = check_layer(&store, random(&[8, 4, 3], 2), Mode::Train, layer_opts(), |c, x| bn.forward(c, x));
    assert_pass("batch_norm", r);
}

#[test]
fn attention_six_positions_four_channels() {
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(1);
    let att = SelfAttention::new(&mut store, "att", 4, 3, true, true, &mut rng).unwrap();
    let r = check_layer(&store, random(&[4, 6, 4], 2), Mode::Train, layer_opts(), |c, x| {
        Ok(att.forward(c, x)?.output)
    });
    assert_pass("attention", r);
}

#[test]
fn plain_block_end_to_end() {
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(1);
    let block = PlainBlock::new(&mut store, "plain", 3, 3, &BlockSettings::default(), &mut rng).unwrap();
    let r = check_layer(&store, random(&[4, 5, 3], 2), Mode::Train, layer_opts(), |c, x| block.forward(c, x));
    assert_pass("plain block", r);
}

#[test]
fn dualnet_tiny_loss_every_parameter() {
    let cfg = ArchitectureConfig::dualnet_tiny(12, 2);
    let net = Network::build(&cfg, 7).unwrap();
    let x = random(&[4, 12], 8);
    let labels = [0usize, 1, 1, 0];
    let ids = net.params.trainable_ids();
    let inputs: Vec<Tensor> = ids.iter().map(|&id| net.params.get(id).clone()).collect();
    let opts = GradCheckOptions {
        step: 1e-4,
        tolerance: 1e-3,
        ..GradCheckOptions::default()
    };
    let report = gradient_check(
        |tape, vars| {
            let mut local = net.params.clone();
            let mut rng = Rng::seed_from_u64(3);
            let input = tape.constant(x.clone());
            let mut ctx = Ctx::new(tape, &mut local, Mode::Train).with_rng(&mut rng);
            for (&id, &v) in ids.iter().zip(vars) {
                ctx.bind(id, v)?;
            }
            let out = net.layers.forward(&mut ctx, input)?;
            drop(ctx);
            tape.sparse_cross_entropy(out.probs, &labels, 1e-12)
        },
        &inputs,
        opts,
    )
    .unwrap();
    assert_eq!(report.checked, net.count_params());
    assert_pass("dualnet-tiny", report);
}
