//! Central-difference checks for every differentiable tape op.
//!
//! Each case wires the op into a scalar loss `sum(op(...) * C)` with a fixed
//! random C, so transposition and indexing mistakes produce distinct
//! per-element gradients instead of cancelling out.

mod common;

use std::rc::Rc;

use common::{fd_max_rel_err, randn_tensor, FD_TOL};
use graphflow::tensor::{Rng, Tape, Tensor};

/// Builds the loss twice: once for analytic gradients, then repeatedly for
/// finite differences at 10 random points.
fn check_op(
    name: &str,
    shapes: &[&[usize]],
    build: impl Fn(&mut Tape, &[usize]) -> usize,
) {
    for seed in 0..10u64 {
        let mut rng = Rng::new(0xF0D0 + seed, 17);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| randn_tensor(&mut rng, s)).collect();

        let mut tape = Tape::new();
        let ids: Vec<usize> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        assert_eq!(tape.value(loss).numel(), 1, "{name}: loss must be scalar");
        let grads = tape.backward(loss).expect(name);
        let analytic: Vec<Option<Tensor>> = ids.iter().map(|&i| grads.node(i).cloned()).collect();

        let mut f = |xs: &[Tensor]| {
            let mut t = Tape::new();
            let ids: Vec<usize> = xs.iter().map(|x| t.input(x.clone())).collect();
            let l = build(&mut t, &ids);
            t.value(l).item()
        };
        let err = fd_max_rel_err(&mut f, &inputs, &analytic);
        assert!(err < FD_TOL, "{name} seed {seed}: max rel err {err:e}");
    }
}

/// sum(x * C) for a fixed pseudo-random C keyed on the value's shape.
fn weighted_sum(tape: &mut Tape, x: usize) -> usize {
    let shape = tape.value(x).shape.clone();
    let mut rng = Rng::new(0xC0FFEE, shape.iter().sum::<usize>() as u64);
    let c = tape.constant(randn_tensor(&mut rng, &shape));
    let prod = tape.mul(x, c).unwrap();
    tape.sum(prod).unwrap()
}

#[test]
fn matmul_grads() {
    check_op("matmul", &[&[3, 4], &[4, 2]], |t, ids| {
        let y = t.matmul(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn matmul_bt_grads() {
    check_op("matmul_bt", &[&[3, 4], &[5, 4]], |t, ids| {
        let y = t.matmul_bt(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn add_same_shape_grads() {
    check_op("add", &[&[2, 3], &[2, 3]], |t, ids| {
        let y = t.add(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn add_row_broadcast_grads() {
    check_op("add_row", &[&[4, 3], &[1, 3]], |t, ids| {
        let y = t.add(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn add_scalar_broadcast_grads() {
    check_op("add_scalar", &[&[2, 3], &[1]], |t, ids| {
        let y = t.add(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn sub_grads() {
    check_op("sub", &[&[2, 3], &[1, 3]], |t, ids| {
        let y = t.sub(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn mul_grads() {
    check_op("mul", &[&[2, 3], &[2, 3]], |t, ids| {
        let y = t.mul(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
    check_op("mul_row", &[&[3, 2], &[1, 2]], |t, ids| {
        let y = t.mul(ids[0], ids[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn scale_grads() {
    check_op("scale", &[&[2, 4]], |t, ids| {
        let y = t.scale(ids[0], -1.7).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn activation_grads() {
    check_op("relu", &[&[3, 3]], |t, ids| {
        let y = t.relu(ids[0]).unwrap();
        weighted_sum(t, y)
    });
    check_op("gelu", &[&[3, 3]], |t, ids| {
        let y = t.gelu(ids[0]).unwrap();
        weighted_sum(t, y)
    });
    check_op("tanh", &[&[3, 3]], |t, ids| {
        let y = t.tanh(ids[0]).unwrap();
        weighted_sum(t, y)
    });
    check_op("sigmoid", &[&[3, 3]], |t, ids| {
        let y = t.sigmoid(ids[0]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn reduction_grads() {
    check_op("mean", &[&[4, 3]], |t, ids| t.mean(ids[0]).unwrap());
    check_op("sum", &[&[4, 3]], |t, ids| t.sum(ids[0]).unwrap());
}

#[test]
fn mse_grads_both_sides() {
    check_op("mse", &[&[3, 4], &[3, 4]], |t, ids| t.mse(ids[0], ids[1]).unwrap());
}

#[test]
fn bce_logits_grads() {
    // Fixed 0/1 targets; logits are the differentiable side.
    let targets = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    check_op("bce_logits", &[&[3, 2]], move |t, ids| t.bce_logits(ids[0], &targets).unwrap());
}

#[test]
fn concat_and_slice_grads() {
    check_op("concat_rows", &[&[2, 3], &[3, 3]], |t, ids| {
        let y = t.concat_rows(&[ids[0], ids[1]]).unwrap();
        weighted_sum(t, y)
    });
    check_op("concat_cols", &[&[2, 3], &[2, 2]], |t, ids| {
        let y = t.concat_cols(&[ids[0], ids[1]]).unwrap();
        weighted_sum(t, y)
    });
    check_op("slice_rows", &[&[5, 3]], |t, ids| {
        let y = t.slice_rows(ids[0], 1, 3).unwrap();
        weighted_sum(t, y)
    });
    check_op("slice_cols", &[&[3, 5]], |t, ids| {
        let y = t.slice_cols(ids[0], 2, 2).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn gather_grads() {
    check_op("select_rows", &[&[4, 3]], |t, ids| {
        let y = t.select_rows(ids[0], Rc::new(vec![0, 2, 2, 3])).unwrap();
        weighted_sum(t, y)
    });
    check_op("segment_mean", &[&[5, 3]], |t, ids| {
        let segs = Rc::new(vec![vec![0, 1, 4], vec![], vec![2], vec![3, 0]]);
        let y = t.segment_mean(ids[0], segs).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn softmax_grads() {
    check_op("softmax_rows", &[&[3, 4]], |t, ids| {
        let y = t.softmax_rows(ids[0]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn composed_mlp_grads() {
    // Two hidden layers with different activations, a residual add, and an
    // MSE head. Checks that chained backward rules compose.
    check_op(
        "mlp",
        &[&[4, 6], &[6, 8], &[1, 8], &[8, 6], &[1, 6], &[4, 6]],
        |t, ids| {
            let (x, w1, b1, w2, b2, target) = (ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]);
            let h = t.matmul(x, w1).unwrap();
            let h = t.add(h, b1).unwrap();
            let h = t.gelu(h).unwrap();
            let y = t.matmul(h, w2).unwrap();
            let y = t.add(y, b2).unwrap();
            let y = t.tanh(y).unwrap();
            let y = t.add(y, x).unwrap();
            t.mse(y, target).unwrap()
        },
    );
}
