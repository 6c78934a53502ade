//! Task-vector inference: roll out the pretrained policy under random task
//! vectors and regress the observed environment rewards on the features.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{sample_task_vector, TaskVector, FEATURE_DIM, NORM_FLOOR};
use crate::gridworld::{Action, GridEnv};
use crate::successor::epsilon_greedy;

use super::agent::Agent;

/// Ridge regression `argmin_w sum (phi . w - r)^2 + lambda |w|^2` via the
/// normal equations, returned normalized to unit length.
pub fn solve_task_regression(features: &[Vec<f64>], rewards: &[f64], lambda: f64) -> Result<TaskVector> {
    if features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if features.len() != rewards.len() {
        return Err(Error::shape("regression targets", features.len(), rewards.len()));
    }
    let d = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::shape("regression feature", d, f.len()));
    }
    let mut gram = DMatrix::<f64>::identity(d, d) * lambda;
    let mut rhs = DVector::<f64>::zeros(d);
    for (phi, &r) in features.iter().zip(rewards) {
        for i in 0..d {
            rhs[i] += phi[i] * r;
            for j in 0..d {
                gram[(i, j)] += phi[i] * phi[j];
            }
        }
    }
    let solution = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("singular regression system; increase lambda".into()))?,
    };
    let norm = solution.norm();
    if !norm.is_finite() || norm < NORM_FLOOR {
        return Err(Error::DegenerateTask {
            norm,
            samples: features.len(),
        });
    }
    TaskVector::from_unnormalized(solution.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceData {
    pub features: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub episodes: u32,
    pub successes: u32,
    pub mean_return: f64,
}

/// Collects `(phi(s'), r)` pairs under uniformly drawn task vectors, one per
/// episode, for at most `episodes` episodes or `max_steps` steps.
pub fn collect_inference_data<R: Rng + ?Sized>(
    agent: &Agent,
    env: &GridEnv,
    episodes: u32,
    max_steps: u64,
    epsilon: f64,
    rng: &mut R,
) -> Result<InferenceData> {
    let mut features = Vec::new();
    let mut rewards = Vec::new();
    let mut steps = 0u64;
    let mut finished = 0u32;
    let mut successes = 0u32;
    let mut return_sum = 0.0;
    while finished < episodes && steps < max_steps {
        let w = sample_task_vector(rng, FEATURE_DIM)?;
        let (mut state, mut obs) = env.reset(rng);
        let mut ret = 0.0;
        loop {
            let x = obs.to_vec();
            let q = agent.successor.q(&x, &w)?;
            let a = epsilon_greedy(&q, epsilon, rng)?;
            let out = env.step(&state, Action::from_index(a)?)?;
            steps += 1;
            features.push(agent.features(&out.observation.to_vec())?.as_slice().to_vec());
            rewards.push(out.reward);
            ret += out.reward;
            if out.done {
                finished += 1;
                successes += u32::from(out.reached_goal);
                return_sum += ret;
                break;
            }
            if steps >= max_steps {
                break;
            }
            state = out.state;
            obs = out.observation;
        }
    }
    Ok(InferenceData {
        features,
        rewards,
        episodes: finished,
        successes,
        mean_return: if finished > 0 { return_sum / f64::from(finished) } else { 0.0 },
    })
}
