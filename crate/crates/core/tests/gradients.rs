mod common;

use aps_core::nn::{Activation, DenseNet, Gradients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

#[test]
fn encoder_vmf_gradients_match_finite_differences() {
    for seed in 0..120 {
        let err = common::encoder_case(seed);
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn successor_td_gradients_match_finite_differences() {
    for seed in 0..120 {
        let err = common::successor_case(seed);
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn generic_network_gradients_with_every_activation() {
    let acts = [Activation::Identity, Activation::Relu, Activation::Elu];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_dim = rng.random_range(1..7);
        let depth = rng.random_range(1..4);
        let spec: Vec<(usize, Activation)> = (0..depth)
            .map(|_| (rng.random_range(1..6), acts[rng.random_range(0..3)]))
            .collect();
        let net = DenseNet::random(input_dim, &spec, &mut rng).unwrap();
        let x: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bundle = net.backward(&x, &g).unwrap();
        let loss = |n: &DenseNet| -> f64 { n.forward(&x).unwrap().iter().zip(&g).map(|(o, gi)| o * gi).sum() };
        let err = common::fd_relative_error(&net, &bundle.params, 1e-6, loss);
        assert!(err < TOL, "seed {seed}: relative error {err:e}");

        // input gradient against central differences on the input
        for i in 0..input_dim {
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] += 1e-6;
            down[i] -= 1e-6;
            let f = |v: &[f64]| -> f64 { net.forward(v).unwrap().iter().zip(&g).map(|(o, gi)| o * gi).sum() };
            let numeric = (f(&up) - f(&down)) / 2e-6;
            let a = bundle.input_grad[i];
            assert!((a - numeric).abs() <= TOL * a.abs().max(numeric.abs()).max(1e-3), "seed {seed} input {i}");
        }
    }
}

#[test]
fn gradients_accumulate_additively() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNet::random(4, &[(5, Activation::Relu), (2, Activation::Identity)], &mut rng).unwrap();
    let xs = [[0.5, -1.0, 0.0, 2.0], [1.0, 1.0, 1.0, -1.0]];
    let mut sum = Gradients::zeros_like(&net);
    for x in &xs {
        let tape = net.forward_tape(x).unwrap();
        net.accumulate_gradients(&tape, &[1.0, -0.5], &mut sum, false).unwrap();
    }
    let a = net.backward(&xs[0], &[1.0, -0.5]).unwrap().params;
    let b = net.backward(&xs[1], &[1.0, -0.5]).unwrap().params;
    for ((s, ga), gb) in sum.layers.iter().zip(&a.layers).zip(&b.layers) {
        for ((x, y), z) in s.weights_t.iter().zip(&ga.weights_t).zip(&gb.weights_t) {
            assert!((x - (y + z)).abs() < 1e-12);
        }
    }
}
