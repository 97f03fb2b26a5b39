//! One differentiable function per op (or per argument of an op), each
//! checked on a freshly seeded input.

use refrec_core::objective::{sequence_loss, soft_iou};
use refrec_core::{
    grad_check, CellState, ConvLstmCell, PoolMode, Recurrence, ReduceMode, RefRecModel, Result,
    Tensor,
};

use super::{
    away_from_zero, probe, random_image, random_mask, random_phrases, rng, spread,
    tiny_model_config, uniform,
};

pub const EPS: f64 = 1e-5;

pub struct GradCase {
    pub name: &'static str,
    /// Worst relative error of the analytic gradient for this seed.
    pub run: fn(u64) -> Result<f64>,
}

macro_rules! case {
    ($name:expr, $body:expr) => {
        GradCase {
            name: $name,
            run: $body,
        }
    };
}

pub fn all() -> Vec<GradCase> {
    vec![
        case!("add", |s| {
            let mut r = rng(s);
            let b = uniform(&mut r, &[2, 3, 3], -1.0, 1.0);
            let x = uniform(&mut r, &[2, 3, 3], -1.0, 1.0);
            grad_check(|t| probe(&t.add(&b)?.mul(t)?, s), &x, EPS)
        }),
        case!("sub", |s| {
            let mut r = rng(s);
            let b = uniform(&mut r, &[4, 2], -1.0, 1.0);
            let x = uniform(&mut r, &[4, 2], -1.0, 1.0);
            grad_check(|t| probe(&b.sub(t)?.mul(t)?, s), &x, EPS)
        }),
        case!("mul", |s| {
            let mut r = rng(s);
            let b = uniform(&mut r, &[3, 2, 2], -1.0, 1.0);
            let x = uniform(&mut r, &[3, 2, 2], -1.0, 1.0);
            grad_check(|t| probe(&t.mul(&b)?.mul(t)?, s), &x, EPS)
        }),
        case!("div/numerator", |s| {
            let mut r = rng(s);
            let d = uniform(&mut r, &[5], 0.5, 2.0);
            let x = uniform(&mut r, &[5], -1.0, 1.0);
            grad_check(|t| probe(&t.div(&d)?, s), &x, EPS)
        }),
        case!("div/denominator", |s| {
            let mut r = rng(s);
            let n = uniform(&mut r, &[5], -1.0, 1.0);
            let x = uniform(&mut r, &[5], 0.5, 2.0);
            grad_check(|t| probe(&n.div(t)?, s), &x, EPS)
        }),
        case!("sigmoid", |s| {
            let x = uniform(&mut rng(s), &[2, 4, 4], -4.0, 4.0);
            grad_check(|t| probe(&t.sigmoid(), s), &x, EPS)
        }),
        case!("tanh", |s| {
            let x = uniform(&mut rng(s), &[2, 4, 4], -3.0, 3.0);
            grad_check(|t| probe(&t.tanh(), s), &x, EPS)
        }),
        case!("relu", |s| {
            let x = away_from_zero(&mut rng(s), &[2, 4, 4]);
            grad_check(|t| probe(&t.relu(), s), &x, EPS)
        }),
        case!("scale_and_shift", |s| {
            let x = uniform(&mut rng(s), &[6], -1.0, 1.0);
            grad_check(
                |t| probe(&t.scale(-2.5).add_scalar(0.7).mul(t)?, s),
                &x,
                EPS,
            )
        }),
        case!("conv2d/input", |s| {
            let mut r = rng(s);
            let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
            let b = uniform(&mut r, &[3], -1.0, 1.0);
            let x = uniform(&mut r, &[2, 5, 5], -1.0, 1.0);
            grad_check(|t| probe(&t.conv2d(&k, &b, 1, 1)?, s), &x, EPS)
        }),
        case!("conv2d/kernel", |s| {
            let mut r = rng(s);
            let x = uniform(&mut r, &[2, 6, 5], -1.0, 1.0);
            let b = uniform(&mut r, &[3], -1.0, 1.0);
            let k = uniform(&mut r, &[3, 2, 3, 2], -1.0, 1.0);
            grad_check(|t| probe(&x.conv2d(t, &b, 2, 1)?, s), &k, EPS)
        }),
        case!("conv2d/bias", |s| {
            let mut r = rng(s);
            let x = uniform(&mut r, &[2, 4, 4], -1.0, 1.0);
            let k = uniform(&mut r, &[3, 2, 1, 1], -1.0, 1.0);
            let b = uniform(&mut r, &[3], -1.0, 1.0);
            grad_check(|t| probe(&x.conv2d(&k, t, 1, 0)?.tanh(), s), &b, EPS)
        }),
        case!("conv2d_tiled/vector", |s| {
            let mut r = rng(s);
            let k = uniform(&mut r, &[4, 3, 3, 3], -1.0, 1.0);
            let v = uniform(&mut r, &[3], -1.0, 1.0);
            grad_check(|t| probe(&t.conv2d_tiled(&k, 5, 4, 1)?, s), &v, EPS)
        }),
        case!("conv2d_tiled/kernel", |s| {
            let mut r = rng(s);
            let v = uniform(&mut r, &[3], -1.0, 1.0);
            let k = uniform(&mut r, &[2, 3, 3, 3], -1.0, 1.0);
            grad_check(|t| probe(&v.conv2d_tiled(t, 4, 4, 1)?, s), &k, EPS)
        }),
        case!("pool2d/max", |s| {
            let x = spread(&mut rng(s), &[2, 4, 6]);
            grad_check(|t| probe(&t.pool2d(2, PoolMode::Max)?, s), &x, EPS)
        }),
        case!("pool2d/avg", |s| {
            let x = uniform(&mut rng(s), &[2, 4, 4], -1.0, 1.0);
            grad_check(|t| probe(&t.pool2d(2, PoolMode::Avg)?, s), &x, EPS)
        }),
        case!("upsample_nearest", |s| {
            let x = uniform(&mut rng(s), &[2, 3, 2], -1.0, 1.0);
            grad_check(|t| probe(&t.upsample_nearest(2)?, s), &x, EPS)
        }),
        case!("concat_and_slice", |s| {
            let mut r = rng(s);
            let other = uniform(&mut r, &[2, 3, 3], -1.0, 1.0);
            let x = uniform(&mut r, &[3, 3, 3], -1.0, 1.0);
            grad_check(
                |t| {
                    let c = Tensor::concat_channels(&[other.clone(), t.clone(), t.clone()])?;
                    probe(&c.slice_channels(1, 6)?.tanh(), s)
                },
                &x,
                EPS,
            )
        }),
        case!("broadcast_spatial", |s| {
            let x = uniform(&mut rng(s), &[3], -1.0, 1.0);
            grad_check(|t| probe(&t.broadcast_spatial(3, 4)?.tanh(), s), &x, EPS)
        }),
        case!("reduce", |s| {
            let x = uniform(&mut rng(s), &[2, 3, 3], -1.0, 1.0);
            grad_check(
                |t| {
                    let sum = t.reduce(ReduceMode::Sum);
                    let mean = t.mul(t)?.reduce(ReduceMode::Mean);
                    sum.mul(&mean)
                },
                &x,
                EPS,
            )
        }),
        case!("convlstm/input", |s| {
            let (cell, x, p, state) = lstm_fixture(s);
            grad_check(|t| cell_probe(&cell, t, &p, &state, s), &x, EPS)
        }),
        case!("convlstm/phrase", |s| {
            let (cell, x, p, state) = lstm_fixture(s);
            grad_check(|t| cell_probe(&cell, &x, t, &state, s), &p, EPS)
        }),
        case!("convlstm/hidden", |s| {
            let (cell, x, p, state) = lstm_fixture(s);
            grad_check(
                |t| {
                    let st = CellState {
                        h: t.clone(),
                        c: state.c.clone(),
                    };
                    cell_probe(&cell, &x, &p, &st, s)
                },
                &state.h,
                EPS,
            )
        }),
        case!("convlstm/memory", |s| {
            let (cell, x, p, state) = lstm_fixture(s);
            grad_check(
                |t| {
                    let st = CellState {
                        h: state.h.clone(),
                        c: t.clone(),
                    };
                    cell_probe(&cell, &x, &p, &st, s)
                },
                &state.c,
                EPS,
            )
        }),
        case!("convlstm/gate_weights", |s| {
            let (cell, x, p, state) = lstm_fixture(s);
            grad_check(
                |t| {
                    let mut c = cell.clone();
                    c.gates.weight = t.clone();
                    cell_probe(&c, &x, &p, &state, s)
                },
                &cell.gates.weight,
                EPS,
            )
        }),
        case!("soft_iou", |s| {
            let mut r = rng(s);
            let gt = random_mask(&mut r, 6, 0.4);
            let logits = uniform(&mut r, &[1, 6, 6], -3.0, 3.0);
            grad_check(
                |t| Ok(soft_iou(&t.sigmoid(), &gt)?.scale(-1.0).add_scalar(1.0)),
                &logits,
                EPS,
            )
        }),
        case!("full_graph/phrase", |s| {
            let (model, image, phrases, gts) = graph_fixture(s);
            grad_check(
                |t| {
                    let mut ps = phrases.clone();
                    ps[1] = t.clone();
                    graph_loss(&model, &image, &ps, &gts)
                },
                &phrases[1],
                EPS,
            )
        }),
        case!("full_graph/head", |s| {
            let (model, image, phrases, gts) = graph_fixture(s);
            grad_check(
                |t| {
                    let mut m = model.clone();
                    m.decoder.head.weight = t.clone();
                    graph_loss(&m, &image, &phrases, &gts)
                },
                &model.decoder.head.weight,
                EPS,
            )
        }),
        case!("full_graph/encoder_bias", |s| {
            let (model, image, phrases, gts) = graph_fixture(s);
            let last = model.encoder.blocks.len() - 1;
            grad_check(
                |t| {
                    let mut m = model.clone();
                    m.encoder.blocks[last].conv2.bias = t.clone();
                    graph_loss(&m, &image, &phrases, &gts)
                },
                &model.encoder.blocks[last].conv2.bias,
                EPS,
            )
        }),
    ]
}

fn lstm_fixture(seed: u64) -> (ConvLstmCell, Tensor, Tensor, CellState) {
    let mut r = rng(seed);
    let cell = ConvLstmCell::init(2, 2, 3, 3, &mut r).unwrap();
    let x = uniform(&mut r, &[2, 4, 4], -1.0, 1.0);
    let p = uniform(&mut r, &[2], -1.0, 1.0);
    let state = CellState {
        h: uniform(&mut r, &[3, 4, 4], -0.8, 0.8),
        c: uniform(&mut r, &[3, 4, 4], -1.5, 1.5),
    };
    (cell, x, p, state)
}

fn cell_probe(
    cell: &ConvLstmCell,
    x: &Tensor,
    p: &Tensor,
    state: &CellState,
    seed: u64,
) -> Result<Tensor> {
    let next = cell.step(x, Some(p), state)?;
    probe(&next.h, seed)?.add(&probe(&next.c, seed + 1)?)
}

fn graph_fixture(seed: u64) -> (RefRecModel, Tensor, Vec<Tensor>, Vec<refrec_core::Mask>) {
    let config = tiny_model_config();
    let model = RefRecModel::init(&config, seed).unwrap();
    let mut r = rng(seed + 1000);
    let image = random_image(&mut r, 8);
    let phrases = random_phrases(&mut r, 3, config.decoder.phrase_dim);
    let gts = (0..3).map(|_| random_mask(&mut r, 8, 0.3)).collect();
    (model, image, phrases, gts)
}

fn graph_loss(
    model: &RefRecModel,
    image: &Tensor,
    phrases: &[Tensor],
    gts: &[refrec_core::Mask],
) -> Result<Tensor> {
    let preds = model.forward_sequence(image, phrases, Recurrence::Carried)?;
    sequence_loss(preds.masks(), gts)
}
