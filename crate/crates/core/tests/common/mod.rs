//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use aps_core::features::{encode_tape, sample_task_vector, vmf_nll_loss, TaskVector};
use aps_core::nn::{Activation, DenseNet, Gradients};
use aps_core::successor::{td_loss, SuccessorNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::digamma;

/// Calls `f` on every parameter of `net` as `(layer, is_bias, out, input)`.
fn for_each_param(net: &DenseNet, mut f: impl FnMut(usize, bool, usize, usize)) {
    for (l, layer) in net.layers().iter().enumerate() {
        for o in 0..layer.out_dim() {
            for i in 0..layer.in_dim() {
                f(l, false, o, i);
            }
            f(l, true, o, 0);
        }
    }
}

fn get(net: &DenseNet, l: usize, bias: bool, o: usize, i: usize) -> f64 {
    let layer = &net.layers()[l];
    if bias {
        layer.bias()[o]
    } else {
        layer.weight(o, i)
    }
}

fn set(net: &mut DenseNet, l: usize, bias: bool, o: usize, i: usize, v: f64) {
    let layer = &mut net.layers_mut()[l];
    if bias {
        layer.bias_mut()[o] = v;
    } else {
        layer.set_weight(o, i, v);
    }
}

fn grad_of(g: &Gradients, l: usize, bias: bool, o: usize, i: usize) -> f64 {
    if bias {
        g.layers[l].bias[o]
    } else {
        g.layers[l].weight(o, i)
    }
}

/// `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole
/// parameter vector, with central differences of step `h`.
pub fn fd_relative_error(net: &DenseNet, analytic: &Gradients, h: f64, loss: impl Fn(&DenseNet) -> f64) -> f64 {
    let mut work = net.clone();
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for_each_param(net, |l, b, o, i| {
        let p = get(net, l, b, o, i);
        set(&mut work, l, b, o, i, p + h);
        let up = loss(&work);
        set(&mut work, l, b, o, i, p - h);
        let down = loss(&work);
        set(&mut work, l, b, o, i, p);
        let numeric = (up - down) / (2.0 * h);
        let a = grad_of(analytic, l, b, o, i);
        diff2 += (a - numeric).powi(2);
        a2 += a * a;
        n2 += numeric * numeric;
    });
    let scale = a2.sqrt().max(n2.sqrt());
    if scale < 1e-12 {
        diff2.sqrt()
    } else {
        diff2.sqrt() / scale
    }
}

fn random_input(rng: &mut ChaCha8Rng, dim: usize, one_hot: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    if one_hot > 0 {
        x[rng.random_range(0..one_hot)] = 1.0;
        for v in x.iter_mut().skip(one_hot) {
            *v = f64::from(u8::from(rng.random_bool(0.5)));
        }
    } else {
        for v in &mut x {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    x
}

/// Encoder trained through the VMF loss on a small batch.
pub fn encoder_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = rng.random_range(4..12);
    let obs_dim = cells + 2;
    let hidden = rng.random_range(3..9);
    let depth = rng.random_range(1..3);
    let mut spec = vec![(hidden, Activation::Relu); depth];
    if seed.is_multiple_of(3) {
        spec[0].1 = Activation::Elu;
    }
    spec.push((5, Activation::Identity));
    let net = DenseNet::random(obs_dim, &spec, &mut rng).unwrap();
    let batch = rng.random_range(1..5);
    let inputs: Vec<Vec<f64>> = (0..batch).map(|_| random_input(&mut rng, obs_dim, cells)).collect();
    let tasks: Vec<TaskVector> = (0..batch).map(|_| sample_task_vector(&mut rng, 5).unwrap()).collect();
    let task_refs: Vec<&TaskVector> = tasks.iter().collect();

    let tapes: Vec<_> = inputs.iter().map(|x| encode_tape(&net, x).unwrap().1).collect();
    let raw: Vec<&[f64]> = tapes.iter().map(|t| t.output()).collect();
    let loss = vmf_nll_loss(&raw, &task_refs).unwrap();
    let mut grads = Gradients::zeros_like(&net);
    for (t, g) in tapes.iter().zip(&loss.raw_grads) {
        net.accumulate_gradients(t, g, &mut grads, false).unwrap();
    }
    fd_relative_error(&net, &grads, 1e-6, |n| {
        let outs: Vec<Vec<f64>> = inputs.iter().map(|x| n.forward(x).unwrap()).collect();
        let refs: Vec<&[f64]> = outs.iter().map(Vec::as_slice).collect();
        vmf_nll_loss(&refs, &task_refs).unwrap().loss
    })
}

/// Online successor network trained through the scalar TD loss.
pub fn successor_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cells = rng.random_range(4..10);
    let obs_dim = cells + 2;
    let depth = rng.random_range(1..3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(3..8)).collect();
    let net = SuccessorNet::new(obs_dim, 4, 5, &hidden, &mut rng).unwrap();
    let batch = rng.random_range(1..5);
    let cases: Vec<(Vec<f64>, usize, TaskVector, f64)> = (0..batch)
        .map(|_| {
            (
                random_input(&mut rng, obs_dim, cells),
                rng.random_range(0..4),
                sample_task_vector(&mut rng, 5).unwrap(),
                rng.random_range(-3.0..3.0),
            )
        })
        .collect();
    let mut grads = Gradients::zeros_like(&net.online);
    for (x, a, w, y) in &cases {
        let (psi, tape) = net.psi_tape(x, w).unwrap();
        let q: f64 = psi.row(*a).iter().zip(w.as_slice()).map(|(p, wi)| p * wi).sum();
        let td = td_loss(q, *y).unwrap();
        net.accumulate_td_gradient(&tape, *a, w, td.grad_q / batch as f64, &mut grads)
            .unwrap();
    }
    fd_relative_error(&net.online, &grads, 1e-6, |online| {
        let mut total = 0.0;
        for (x, a, w, y) in &cases {
            let mut input = x.clone();
            input.extend_from_slice(w.as_slice());
            let out = online.forward(&input).unwrap();
            // head j holds feature j for every action
            let q: f64 = (0..5).map(|j| out[j * 4 + a] * w.as_slice()[j]).sum();
            total += (q - y).powi(2);
        }
        total / batch as f64
    })
}

/// Kozachenko-Leonenko differential entropy estimate with Euclidean k-NN distances.
pub fn kl_entropy(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut sum_log = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut dists: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        sum_log += dists[k - 1].ln();
    }
    let half_d = d as f64 / 2.0;
    let log_unit_ball = half_d * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(half_d + 1.0);
    digamma(n as f64) - digamma(k as f64) + log_unit_ball + d as f64 * sum_log / n as f64
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of a difference of means using the pooled variance.
pub fn pooled_se(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp2 = ((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0);
    (sp2 * (1.0 / na + 1.0 / nb)).sqrt()
}

pub const CHAIN_STATES: usize = 4;
pub const CHAIN_GAMMA: f64 = 0.9;

/// Deterministic 4-state chain: action 0 moves left, action 1 moves right,
/// walls at both ends. The evaluated policy always moves right.
pub fn chain_next(s: usize, a: usize) -> usize {
    if a == 0 {
        s.saturating_sub(1)
    } else {
        (s + 1).min(CHAIN_STATES - 1)
    }
}

pub const CHAIN_POLICY: usize = 1;

fn one_hot(s: usize) -> Vec<f64> {
    let mut x = vec![0.0; CHAIN_STATES];
    x[s] = 1.0;
    x
}

pub struct ChainReport {
    /// Largest `|psi(s, a) - [(I - gamma P)^-1 Phi](next(s, a))|` entry.
    pub psi_error: f64,
    /// Largest `|psi(s, a, w) . w - Q_vi(s, a; w)|` over 20 random `w`.
    pub q_error: f64,
}

/// Trains a zero-initialised linear successor network by TD on the chain and
/// compares it against the closed form and against policy-evaluation sweeps.
pub fn chain_successor_check(seed: u64) -> ChainReport {
    use aps_core::nn::{AdamConfig, AdamState, DenseNet, Layer};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let n_act = 2;
    let phi: Vec<Vec<f64>> = (0..CHAIN_STATES)
        .map(|_| sample_task_vector(&mut rng, d).unwrap().as_slice().to_vec())
        .collect();

    // closed form: Psi = (I - gamma P)^-1 Phi, column by column
    let mut a = vec![vec![0.0; CHAIN_STATES]; CHAIN_STATES];
    for s in 0..CHAIN_STATES {
        a[s][s] += 1.0;
        a[s][chain_next(s, CHAIN_POLICY)] -= CHAIN_GAMMA;
    }
    let mut psi_state = vec![vec![0.0; d]; CHAIN_STATES];
    for j in 0..d {
        let col = solve_dense(a.clone(), phi.iter().map(|p| p[j]).collect());
        for s in 0..CHAIN_STATES {
            psi_state[s][j] = col[s];
        }
    }

    let in_dim = CHAIN_STATES + d;
    let out = n_act * d;
    let layer = Layer::from_row_major(out, in_dim, &vec![0.0; out * in_dim], &vec![0.0; out], Activation::Identity).unwrap();
    let online = DenseNet::from_layers(vec![layer]).unwrap();
    let mut net = SuccessorNet::from_parts(online.clone(), online, n_act, d).unwrap();
    let mut adam = AdamState::new(&net.online, AdamConfig::with_learning_rate(1e-2));
    let train_ws: Vec<TaskVector> = (0..64).map(|_| sample_task_vector(&mut rng, d).unwrap()).collect();
    let count = (CHAIN_STATES * n_act * train_ws.len()) as f64;
    let steps = 8_000;
    for step in 0..steps {
        if step == 5_000 {
            adam.config.learning_rate = 1e-3;
        }
        if step == 7_000 {
            adam.config.learning_rate = 1e-4;
        }
        let mut grads = Gradients::zeros_like(&net.online);
        for s in 0..CHAIN_STATES {
            for act in 0..n_act {
                let next = chain_next(s, act);
                for w in &train_ws {
                    let (psi, tape) = net.psi_tape(&one_hot(s), w).unwrap();
                    let q: f64 = psi.row(act).iter().zip(w.as_slice()).map(|(p, x)| p * x).sum();
                    let boot = net.psi_target(&one_hot(next), w).unwrap();
                    let r: f64 = phi[next].iter().zip(w.as_slice()).map(|(p, x)| p * x).sum();
                    let b: f64 = boot.row(CHAIN_POLICY).iter().zip(w.as_slice()).map(|(p, x)| p * x).sum();
                    let td = td_loss(q, r + CHAIN_GAMMA * b).unwrap();
                    net.accumulate_td_gradient(&tape, act, w, td.grad_q / count, &mut grads).unwrap();
                }
            }
        }
        adam.step(&mut net.online, &grads).unwrap();
        if step % 10 == 9 {
            net.sync_target().unwrap();
        }
    }

    let probe = sample_task_vector(&mut rng, d).unwrap();
    let mut psi_error: f64 = 0.0;
    for s in 0..CHAIN_STATES {
        let psi = net.psi(&one_hot(s), &probe).unwrap();
        for act in 0..n_act {
            let expect = &psi_state[chain_next(s, act)];
            for j in 0..d {
                psi_error = psi_error.max((psi.row(act)[j] - expect[j]).abs());
            }
        }
    }

    let mut q_error: f64 = 0.0;
    for _ in 0..20 {
        let w = sample_task_vector(&mut rng, d).unwrap();
        let r: Vec<f64> = phi.iter().map(|p| p.iter().zip(w.as_slice()).map(|(x, y)| x * y).sum()).collect();
        let mut q = vec![[0.0f64; 2]; CHAIN_STATES];
        for _ in 0..2_000 {
            let prev = q.clone();
            for s in 0..CHAIN_STATES {
                for act in 0..n_act {
                    let next = chain_next(s, act);
                    q[s][act] = r[next] + CHAIN_GAMMA * prev[next][CHAIN_POLICY];
                }
            }
        }
        for s in 0..CHAIN_STATES {
            let got = net.q(&one_hot(s), &w).unwrap();
            for act in 0..n_act {
                q_error = q_error.max((got[act] - q[s][act]).abs());
            }
        }
    }
    ChainReport { psi_error, q_error }
}

/// k-NN entropy oracle on `n` draws from Uniform([0, 2]^2); the analytic value is `2 ln 2`.
pub fn uniform_square_entropy(seed: u64, n: usize, k: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)])
        .collect();
    kl_entropy(&pts, k)
}

/// Cosine between a planted task vector and the regression estimate from
/// `n` random unit features with Gaussian reward noise `sigma`.
pub fn planted_cosine(seed: u64, n: usize, sigma: f64) -> f64 {
    use aps_core::trainer::solve_task_regression;
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_star = sample_task_vector(&mut rng, 5).unwrap();
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|_| sample_task_vector(&mut rng, 5).unwrap().as_slice().to_vec())
        .collect();
    let rewards: Vec<f64> = feats
        .iter()
        .map(|f| {
            let clean: f64 = f.iter().zip(w_star.as_slice()).map(|(a, b)| a * b).sum();
            if sigma > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            }
        })
        .collect();
    let w = solve_task_regression(&feats, &rewards, 1e-6).unwrap();
    cosine(w.as_slice(), w_star.as_slice())
}

/// Checks over random batches that the entropy reward is `ln(1 + mean)` of the
/// brute-force k-NN distances, hence strictly increasing in that mean.
/// Returns the number of batches checked.
pub fn entropy_reward_monotone_batches(seed: u64, batches: usize) -> usize {
    use aps_core::entropy::ParticleBatch;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..batches {
        let n = rng.random_range(12..40);
        let k = [3, 5, 10][rng.random_range(0..3)];
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch = ParticleBatch::new(pts.clone(), k).unwrap();
        let mut pairs = Vec::with_capacity(n);
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            let m = d[..k].iter().sum::<f64>() / k as f64;
            let r = batch.entropy_reward(i).unwrap();
            assert!((r - m.ln_1p()).abs() < 1e-12);
            pairs.push((m, r));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[1].0 > w[0].0 {
                assert!(w[1].1 > w[0].1, "reward not increasing in mean distance");
            }
        }
    }
    batches
}
