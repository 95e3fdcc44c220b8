//! Finite-difference oracle checks for every differentiable graph op.
//!
//! Each case builds a small random graph around one op, computes the
//! analytic gradient with the reverse sweep, and compares against the
//! central-difference estimate in f64.

use agl_core::rng::seeded_rng;
use agl_core::tensor::gradcheck::{finite_difference_gradient, max_relative_error, FD_STEP, FD_TOLERANCE};
use agl_core::tensor::{Bindings, Graph, GraphBuilder, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 100;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Keep relu inputs away from the kink so the central difference is valid.
fn random_tensor_off_kink(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(10.0 * FD_STEP..2.0)
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn check(graph: &Graph<f64>, x: &Tensor<f64>, what: &str) {
    let mut b = Bindings::new();
    b.set("x", x);
    let eval = graph.forward(&b).unwrap();
    let analytic = eval.backward_output("loss", &["x"]).unwrap();
    let numeric = finite_difference_gradient(
        |probe| -> agl_core::Result<f64> {
            let mut b = Bindings::new();
            b.set("x", probe);
            graph.forward(&b)?.output_scalar("loss")
        },
        x,
        FD_STEP,
    )
    .unwrap();
    let err = max_relative_error(analytic.get("x").unwrap(), &numeric);
    assert!(err < FD_TOLERANCE, "{what}: max relative error {err}");
}

fn for_instances(f: impl Fn(&mut ChaCha8Rng, usize)) {
    let mut rng = seeded_rng(0x0f_0e_0d, "tensor-oracles");
    for i in 0..INSTANCES {
        f(&mut rng, i);
    }
}

#[test]
fn fd_matmul() {
    for_instances(|rng, i| {
        let (m, k, n) = (
            rng.random_range(1..4usize),
            rng.random_range(1..4usize),
            rng.random_range(1..4usize),
        );
        let w = random_tensor(rng, vec![k, n], -1.0, 1.0);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![m, k]).unwrap();
        let wc = g.constant(w);
        let y = g.matmul(x, wc).unwrap();
        let loss = g.sum(y);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![m, k], -1.0, 1.0), &format!("matmul#{i}"));
    });
}

#[test]
fn fd_matmul_rhs() {
    // Gradient w.r.t. the right operand (the weight side in training).
    for_instances(|rng, i| {
        let (m, k, n) = (
            rng.random_range(1..4usize),
            rng.random_range(1..4usize),
            rng.random_range(1..4usize),
        );
        let a = random_tensor(rng, vec![m, k], -1.0, 1.0);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![k, n]).unwrap();
        let ac = g.constant(a);
        let y = g.matmul(ac, x).unwrap();
        let sq = g.square(y);
        let loss = g.sum(sq);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![k, n], -1.0, 1.0), &format!("matmul-rhs#{i}"));
    });
}

#[test]
fn fd_bias_add() {
    for_instances(|rng, i| {
        let (m, n) = (rng.random_range(1..4usize), rng.random_range(1..4usize));
        let a = random_tensor(rng, vec![m, n], -1.0, 1.0);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![n]).unwrap();
        let ac = g.constant(a);
        let y = g.bias_add(ac, x).unwrap();
        let sq = g.square(y);
        let loss = g.sum(sq);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![n], -1.0, 1.0), &format!("bias_add#{i}"));
    });
}

#[test]
fn fd_elementwise_chain() {
    // add, sub, mul, scale, square composed.
    for_instances(|rng, i| {
        let n = rng.random_range(1..6usize);
        let c1 = random_tensor(rng, vec![1, n], -1.0, 1.0);
        let c2 = random_tensor(rng, vec![1, n], 0.5, 1.5);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![1, n]).unwrap();
        let a = g.constant(c1);
        let b = g.constant(c2);
        let s = g.add(x, a).unwrap();
        let d = g.sub(s, b).unwrap();
        let p = g.mul(d, x).unwrap();
        let sc = g.scale(p, -0.75);
        let sq = g.square(sc);
        let loss = g.mean(sq);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![1, n], -1.0, 1.0), &format!("elementwise#{i}"));
    });
}

#[test]
fn fd_relu() {
    for_instances(|rng, i| {
        let n = rng.random_range(1..8usize);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![1, n]).unwrap();
        let y = g.relu(x);
        let sq = g.square(y);
        let loss = g.sum(sq);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor_off_kink(rng, vec![1, n]), &format!("relu#{i}"));
    });
}

#[test]
fn fd_sigmoid_exp_log_square() {
    for_instances(|rng, i| {
        let n = rng.random_range(1..6usize);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![1, n]).unwrap();
        let s = g.sigmoid(x);
        let e = g.exp(s);
        let l = g.log(e);
        let sq = g.square(l);
        let loss = g.mean(sq);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![1, n], -2.0, 2.0), &format!("unary-chain#{i}"));
    });
}

#[test]
fn fd_log_clamp_region_has_zero_like_gradient() {
    // Inputs above the clamp: gradient 1/x; the clamp floor itself is only
    // reached by non-positive inputs which the losses never produce.
    for_instances(|rng, i| {
        let n = rng.random_range(1..5usize);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![1, n]).unwrap();
        let l = g.log(x);
        let loss = g.sum(l);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![1, n], 0.1, 3.0), &format!("log#{i}"));
    });
}

#[test]
fn fd_softmax_xent() {
    for_instances(|rng, i| {
        let (m, c) = (rng.random_range(1..4usize), rng.random_range(2..6usize));
        let labels = (0..m).map(|_| rng.random_range(0..c)).collect::<Vec<_>>();
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![m, c]).unwrap();
        let loss = g.softmax_xent(x, labels).unwrap();
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![m, c], -2.0, 2.0), &format!("softmax_xent#{i}"));
    });
}

#[test]
fn fd_bernoulli_xent_both_sides() {
    for_instances(|rng, i| {
        let n = rng.random_range(1..6usize);
        let targets = random_tensor(rng, vec![1, n], 0.05, 0.95);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![1, n]).unwrap();
        let t = g.constant(targets.clone());
        let loss = g.bernoulli_xent(x, t).unwrap();
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![1, n], -3.0, 3.0), &format!("bernoulli-logits#{i}"));

        // Gradient w.r.t. the target side.
        let logits = random_tensor(rng, vec![1, n], -3.0, 3.0);
        let mut g = GraphBuilder::new();
        let t = g.input("x", vec![1, n]).unwrap();
        let l = g.constant(logits);
        let loss = g.bernoulli_xent(l, t).unwrap();
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![1, n], 0.05, 0.95), &format!("bernoulli-targets#{i}"));
    });
}

#[test]
fn fd_two_layer_network() {
    // Random 2-layer net: gradients w.r.t. the input match finite differences.
    for_instances(|rng, i| {
        let (d_in, d_h, d_out) = (
            rng.random_range(2..5usize),
            rng.random_range(2..5usize),
            rng.random_range(1..4usize),
        );
        let w1 = random_tensor(rng, vec![d_in, d_h], -0.8, 0.8);
        let b1 = random_tensor(rng, vec![d_h], -0.3, 0.3);
        let w2 = random_tensor(rng, vec![d_h, d_out], -0.8, 0.8);
        let b2 = random_tensor(rng, vec![d_out], -0.3, 0.3);
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![1, d_in]).unwrap();
        let w1 = g.constant(w1);
        let b1 = g.constant(b1);
        let w2 = g.constant(w2);
        let b2 = g.constant(b2);
        let h = g.matmul(x, w1).unwrap();
        let h = g.bias_add(h, b1).unwrap();
        let h = g.sigmoid(h);
        let o = g.matmul(h, w2).unwrap();
        let o = g.bias_add(o, b2).unwrap();
        let sq = g.square(o);
        let loss = g.sum(sq);
        g.output("loss", loss);
        let graph = g.finish();
        check(&graph, &random_tensor(rng, vec![1, d_in], -1.0, 1.0), &format!("two-layer#{i}"));
    });
}
