//! Fine-tuning on the inferred task vector, and policy evaluation.

use std::collections::{HashSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{sample_task_vector, TaskVector, FEATURE_DIM};
use crate::gridworld::{Action, GridEnv, GridState, Observation};
use crate::successor::{epsilon_greedy, EpsilonSchedule, PolicySet, SuccessorNet};

use super::agent::{Agent, LearnTarget, LearnerSettings};
use super::config::RunConfig;
use super::infer::{collect_inference_data, solve_task_regression};
use super::metrics::{Mean, MetricsRow, Phase};
use super::replay::{ReplayBuffer, Transition};
use super::rng::eval_rng;

pub trait Policy {
    fn act(&mut self, env: &GridEnv, state: &GridState, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<usize>;
}

/// GPI over a frozen policy set plus the task vector itself, epsilon-greedy.
pub struct GpiPolicy<'a> {
    pub successor: &'a SuccessorNet,
    pub w_task: &'a TaskVector,
    pub policies: &'a PolicySet,
    pub epsilon: f64,
}

impl Policy for GpiPolicy<'_> {
    fn act(&mut self, _env: &GridEnv, _state: &GridState, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<usize> {
        let q = self.successor.gpi_values(&obs.to_vec(), self.w_task, self.policies)?;
        epsilon_greedy(&q, self.epsilon, rng)
    }
}

pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&mut self, _env: &GridEnv, _state: &GridState, _obs: &Observation, rng: &mut ChaCha8Rng) -> Result<usize> {
        Ok(rng.random_range(0..Action::COUNT))
    }
}

/// Shortest path to the goal by breadth-first search over positions and flags.
pub struct ScriptedPolicy;

type SearchKey = (usize, usize, Vec<bool>, Vec<bool>);

fn search_key(s: &GridState) -> SearchKey {
    (s.row, s.col, s.has_key.clone(), s.door_open.clone())
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, env: &GridEnv, state: &GridState, _obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<usize> {
        let mut seen: HashSet<SearchKey> = HashSet::new();
        let mut queue: VecDeque<(GridState, usize)> = VecDeque::new();
        seen.insert(search_key(state));
        let mut start = state.clone();
        start.step_count = 0;
        for a in Action::ALL {
            let out = env.step(&start, a)?;
            if out.reached_goal {
                return Ok(a.index());
            }
            if seen.insert(search_key(&out.state)) && !out.done {
                queue.push_back((out.state, a.index()));
            }
        }
        while let Some((mut s, first)) = queue.pop_front() {
            s.step_count = 0;
            for a in Action::ALL {
                let out = env.step(&s, a)?;
                if out.reached_goal {
                    return Ok(first);
                }
                if seen.insert(search_key(&out.state)) && !out.done {
                    queue.push_back((out.state, first));
                }
            }
        }
        Err(Error::InvalidArgument("goal unreachable from this state".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub episodes: u32,
    pub success_rate: f64,
    pub mean_return: f64,
}

pub fn evaluate(env: &GridEnv, policy: &mut dyn Policy, episodes: u32, rng: &mut ChaCha8Rng) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut successes = 0u32;
    let mut total = 0.0;
    for _ in 0..episodes {
        let (mut state, mut obs) = env.reset(rng);
        loop {
            let a = policy.act(env, &state, &obs, rng)?;
            let out = env.step(&state, Action::from_index(a)?)?;
            total += out.reward;
            if out.done {
                successes += u32::from(out.reached_goal);
                break;
            }
            state = out.state;
            obs = out.observation;
        }
    }
    Ok(EvalResult {
        episodes,
        success_rate: f64::from(successes) / f64::from(episodes),
        mean_return: total / f64::from(episodes),
    })
}

/// GPI evaluation on the dedicated evaluation stream for `seed`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_gpi(
    successor: &SuccessorNet,
    w_task: &TaskVector,
    policies: &PolicySet,
    env: &GridEnv,
    episodes: u32,
    epsilon: f64,
    seed: u64,
) -> Result<EvalResult> {
    let mut policy = GpiPolicy {
        successor,
        w_task,
        policies,
        epsilon,
    };
    evaluate(env, &mut policy, episodes, &mut eval_rng(seed))
}

/// Infers the task vector from reward-labelled rollouts. When no reward was
/// seen the regression is degenerate; a random vector is used instead.
pub fn infer_task(
    agent: &Agent,
    env: &GridEnv,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TaskVector, MetricsRow)> {
    let data = collect_inference_data(agent, env, cfg.infer_episodes, cfg.infer_steps, cfg.infer_epsilon, rng)?;
    let mut row = MetricsRow::new(data.rewards.len() as u64, Phase::Infer, cfg.mode, cfg.seed);
    if data.episodes > 0 {
        row.extrinsic_return_mean = Some(data.mean_return);
        row.success_rate = Some(f64::from(data.successes) / f64::from(data.episodes));
    }
    row.epsilon = Some(cfg.infer_epsilon);
    let w = match solve_task_regression(&data.features, &data.rewards, cfg.regression_lambda) {
        Ok(w) => w,
        Err(e @ Error::DegenerateTask { .. }) => {
            log::warn!("{e}; falling back to a random task vector");
            sample_task_vector(rng, FEATURE_DIM)?
        }
        Err(e) => return Err(e),
    };
    Ok((w, row))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub agent: Agent,
    pub w_task: TaskVector,
    pub policies: PolicySet,
    pub zero_shot: EvalResult,
    pub finetuned: EvalResult,
    pub rows: Vec<MetricsRow>,
}

fn eval_row(step: u64, phase: Phase, cfg: &RunConfig, r: &EvalResult) -> MetricsRow {
    let mut row = MetricsRow::new(step, phase, cfg.mode, cfg.seed);
    row.success_rate = Some(r.success_rate);
    row.extrinsic_return_mean = Some(r.mean_return);
    row.epsilon = Some(cfg.eval_epsilon);
    row
}

/// Q-learning on clipped environment rewards with `phi` frozen and `w_task` fixed.
pub fn finetune(
    agent: &mut Agent,
    env: &GridEnv,
    w_task: &TaskVector,
    policies: &PolicySet,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MetricsRow>> {
    agent.reset_optimizers(cfg.finetune_lr);
    agent.successor.sync_target()?;
    let settings = LearnerSettings::from_config(cfg);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, cfg.min_replay)?;
    let mut rows = Vec::new();
    let (mut state, mut obs) = env.reset(rng);
    let mut episode = 0u64;
    let mut episode_return = 0.0;
    let (mut returns, mut successes, mut td) = (Mean::default(), Mean::default(), Mean::default());
    let schedule = EpsilonSchedule {
        start: cfg.finetune_epsilon_start,
        end: cfg.finetune_epsilon,
        decay_steps: cfg.epsilon_decay,
    };
    for step in 0..cfg.finetune_steps {
        let eps = schedule.value(step);
        let a = {
            let mut policy = GpiPolicy {
                successor: &agent.successor,
                w_task,
                policies,
                epsilon: eps,
            };
            policy.act(env, &state, &obs, rng)?
        };
        let out = env.step(&state, Action::from_index(a)?)?;
        buffer.push(Transition::new(
            obs,
            a,
            out.observation,
            out.reward,
            out.done,
            w_task.clone(),
            episode,
            episode,
            step,
        )?);
        episode_return += out.reward;
        if out.done {
            returns.add(episode_return);
            successes.add(f64::from(u8::from(out.reached_goal)));
            episode_return = 0.0;
            episode += 1;
            (state, obs) = env.reset(rng);
        } else {
            state = out.state;
            obs = out.observation;
        }
        if buffer.can_sample() {
            let stats = agent
                .learn(&buffer, LearnTarget::Extrinsic, &settings, rng)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { what, .. } => Error::NonFiniteLoss { what, step },
                    other => other,
                })?;
            td.add(stats.td_loss);
        }
        if (step + 1) % cfg.log_interval == 0 {
            let mut row = MetricsRow::new(step + 1, Phase::Finetune, cfg.mode, cfg.seed);
            row.extrinsic_return_mean = returns.take();
            row.success_rate = successes.take();
            row.td_loss = td.take();
            row.epsilon = Some(eps);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Inference, zero-shot evaluation, fine-tuning and final evaluation, continuing
/// from a finished pretraining run's generator.
pub fn adapt(
    mut agent: Agent,
    env: &GridEnv,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FinetuneOutcome> {
    let (w_task, infer_row) = infer_task(&agent, env, cfg, rng)?;
    let policies = PolicySet::sample(rng, cfg.gpi_policies, FEATURE_DIM)?;
    let mut rows = vec![infer_row];
    let zero_shot = evaluate_gpi(&agent.successor, &w_task, &policies, env, cfg.eval_episodes, cfg.eval_epsilon, cfg.seed)?;
    rows.push(eval_row(0, Phase::ZeroShot, cfg, &zero_shot));
    rows.extend(finetune(&mut agent, env, &w_task, &policies, cfg, rng)?);
    let finetuned = evaluate_gpi(&agent.successor, &w_task, &policies, env, cfg.eval_episodes, cfg.eval_epsilon, cfg.seed)?;
    rows.push(eval_row(cfg.finetune_steps, Phase::Finetuned, cfg, &finetuned));
    log::info!(
        "{} seed {}: zero-shot {:.3}, fine-tuned {:.3}",
        cfg.mode,
        cfg.seed,
        zero_shot.success_rate,
        finetuned.success_rate
    );
    Ok(FinetuneOutcome {
        agent,
        w_task,
        policies,
        zero_shot,
        finetuned,
        rows,
    })
}
