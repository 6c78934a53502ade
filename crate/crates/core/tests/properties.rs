mod common;

use aps_core::entropy::ParticleBatch;
use aps_core::features::{encode, normalize, sample_task_vector, TaskVector, FEATURE_DIM};
use aps_core::gridworld::{GridEnv, GridMap, DEFAULT_STEP_CAP};
use aps_core::nn::{Activation, DenseNet};
use aps_core::rewards::{intrinsic_reward, RewardMode};
use aps_core::successor::{nstep_target, q_values, PolicySet, SuccessorMatrix, SuccessorNet};
use aps_core::trainer::{ReplayBuffer, RunConfig, Transition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit(raw: &[f64]) -> Option<TaskVector> {
    TaskVector::from_unnormalized(raw.to_vec()).ok()
}

fn matrix(values: &[f64], actions: usize) -> SuccessorMatrix {
    let rows: Vec<Vec<f64>> = values.chunks(FEATURE_DIM).take(actions).map(<[f64]>::to_vec).collect();
    SuccessorMatrix::from_rows(&rows).unwrap()
}

proptest! {
    #[test]
    fn q_is_linear_in_psi(
        a in prop::collection::vec(-5.0f64..5.0, 20),
        b in prop::collection::vec(-5.0f64..5.0, 20),
        w in prop::collection::vec(-1.0f64..1.0, 5),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let Some(w) = unit(&w) else { return Ok(()) };
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let qa = q_values(&matrix(&a, 4), &w).unwrap();
        let qb = q_values(&matrix(&b, 4), &w).unwrap();
        let qc = q_values(&matrix(&combo, 4), &w).unwrap();
        for act in 0..4 {
            let direct: f64 = (0..5).map(|j| combo[act * 5 + j] * w.as_slice()[j]).sum();
            prop_assert!((qc[act] - direct).abs() < 1e-9);
            prop_assert!((qc[act] - (alpha * qa[act] + beta * qb[act])).abs() < 1e-9);
        }
    }

    #[test]
    fn q_flips_sign_with_w(a in prop::collection::vec(-5.0f64..5.0, 20), w in prop::collection::vec(-1.0f64..1.0, 5)) {
        let Some(w) = unit(&w) else { return Ok(()) };
        let neg = unit(&w.as_slice().iter().map(|x| -x).collect::<Vec<_>>()).unwrap();
        let q = q_values(&matrix(&a, 4), &w).unwrap();
        let qn = q_values(&matrix(&a, 4), &neg).unwrap();
        for (x, y) in q.iter().zip(&qn) {
            prop_assert!((x + y).abs() < 1e-9);
        }
    }

    #[test]
    fn nstep_with_zero_gamma_is_first_reward(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..12),
        boot in prop::option::of(-50.0f64..50.0),
    ) {
        prop_assert_eq!(nstep_target(&rewards, 0.0, boot), rewards[0]);
    }

    #[test]
    fn nstep_matches_power_sum(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..12),
        gamma in 0.0f64..0.999,
        boot in prop::option::of(-50.0f64..50.0),
    ) {
        let mut expect: f64 = rewards.iter().enumerate().map(|(i, r)| gamma.powi(i as i32) * r).sum();
        if let Some(b) = boot {
            expect += gamma.powi(rewards.len() as i32) * b;
        }
        let got = nstep_target(&rewards, gamma, boot);
        prop_assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{got} vs {expect}");
    }

    #[test]
    fn aps_reward_is_sum_of_parts(
        seed in any::<u64>(),
        n in 4usize..20,
        k in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<_> = (0..n)
            .map(|_| normalize(sample_task_vector(&mut rng, FEATURE_DIM).unwrap().as_slice()))
            .collect();
        let batch = ParticleBatch::new(feats.iter().map(|f| f.as_slice().to_vec()).collect(), k).unwrap();
        let w = sample_task_vector(&mut rng, FEATURE_DIM).unwrap();
        for (i, f) in feats.iter().enumerate() {
            let aps = intrinsic_reward(RewardMode::Aps, f, &w, &batch, i).unwrap();
            let apt = intrinsic_reward(RewardMode::Apt, f, &w, &batch, i).unwrap();
            let visr = intrinsic_reward(RewardMode::Visr, f, &w, &batch, i).unwrap();
            prop_assert!((aps - (apt + visr)).abs() < 1e-12);
            let dot: f64 = f.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
            prop_assert!((visr - dot).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_reward_matches_sorted_distances(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 5..30),
        k in 1usize..5,
    ) {
        let batch = ParticleBatch::new(pts.clone(), k).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            let mean = d[..k].iter().sum::<f64>() / k as f64;
            prop_assert!((batch.entropy_reward(i).unwrap() - (1.0 + mean).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn spreading_particles_raises_every_reward(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 6..20),
        scale in 1.01f64..4.0,
    ) {
        let tight = ParticleBatch::new(pts.clone(), 3).unwrap();
        let wide = ParticleBatch::new(
            pts.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect(),
            3,
        ).unwrap();
        for i in 0..pts.len() {
            let (a, b) = (tight.entropy_reward(i).unwrap(), wide.entropy_reward(i).unwrap());
            // coincident particles stay at zero distance
            prop_assert!(b > a || (a == 0.0 && b == 0.0));
        }
    }

    #[test]
    fn encodings_have_unit_norm(seed in any::<u64>(), width in 1usize..16, elu in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if elu { Activation::Elu } else { Activation::Relu };
        let net = DenseNet::random(7, &[(width, act), (FEATURE_DIM, Activation::Identity)], &mut rng).unwrap();
        let x: Vec<f64> = (0..7).map(|i| ((seed >> i) & 1) as f64 - 0.5).collect();
        let raw = net.forward(&x).unwrap();
        let n: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let phi = encode(&net, &x).unwrap();
        if n >= 1e-8 {
            prop_assert!((phi.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gpi_dominates_every_member(seed in any::<u64>(), size in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SuccessorNet::new(9, 4, FEATURE_DIM, &[8], &mut rng).unwrap();
        let policies = PolicySet::sample(&mut rng, size, FEATURE_DIM).unwrap();
        let w_task = sample_task_vector(&mut rng, FEATURE_DIM).unwrap();
        let obs: Vec<f64> = (0..9).map(|i| f64::from(u8::from(i == (seed % 7) as usize))).collect();
        let gpi = net.gpi_values(&obs, &w_task, &policies).unwrap();
        let own = net.q(&obs, &w_task).unwrap();
        let mut best = own.clone();
        for wi in policies.members() {
            let q = q_values(&net.psi(&obs, wi).unwrap(), &w_task).unwrap();
            for a in 0..4 {
                prop_assert!(gpi[a] >= q[a]);
                best[a] = best[a].max(q[a]);
            }
        }
        for a in 0..4 {
            prop_assert!(gpi[a] >= own[a]);
            prop_assert_eq!(gpi[a], best[a]);
        }
    }

    #[test]
    fn replay_keeps_the_newest_in_order(cap in 1usize..40, extra in 0usize..60) {
        let env = GridEnv::new(GridMap::bundled("easy").unwrap(), DEFAULT_STEP_CAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, obs) = env.reset(&mut rng);
        let w = TaskVector::basis(FEATURE_DIM, 0);
        let mut buf = ReplayBuffer::new(cap, 1).unwrap();
        for i in 0..cap + extra {
            buf.push(Transition::new(obs, i % 4, obs, 0.0, false, w.clone(), 0, 0, i as u64).unwrap());
            prop_assert!(buf.len() <= cap);
        }
        prop_assert_eq!(buf.len(), cap);
        let steps: Vec<u64> = buf.iter().map(|t| t.step_index).collect();
        let expect: Vec<u64> = (extra as u64..(cap + extra) as u64).collect();
        prop_assert_eq!(steps, expect);
    }

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        steps in 1u64..1_000_000,
        gamma in 0.0f64..0.999,
        k_idx in 0usize..3,
        lr in 1e-6f64..1e-1,
        hidden in prop::collection::vec(1usize..256, 1..4),
        mode_idx in 0usize..3,
    ) {
        let mut cfg = RunConfig {
            seed,
            pretrain_steps: steps,
            gamma,
            knn_k: [3, 5, 10][k_idx],
            pretrain_lr: lr,
            encoder_hidden: hidden,
            mode: [RewardMode::Aps, RewardMode::Apt, RewardMode::Visr][mode_idx],
            ..RunConfig::default()
        };
        cfg.map = "hard".into();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn entropy_reward_increases_with_mean_distance_over_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    use rand::Rng;
    for _ in 0..1000 {
        let n = rng.random_range(12..33);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch = ParticleBatch::new(pts, 10).unwrap();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let nb = batch.knn_neighbors(i).unwrap();
                let mean = nb.iter().map(|x| x.distance).sum::<f64>() / nb.len() as f64;
                (mean, batch.entropy_reward(i).unwrap())
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[1].0 > w[0].0 {
                assert!(w[1].1 > w[0].1);
            }
        }
    }
}
