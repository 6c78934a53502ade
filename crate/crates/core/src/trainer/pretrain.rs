//! The reward-free pretraining loop, kept as resumable state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::features::{sample_task_vector, TaskVector, FEATURE_DIM};
use crate::gridworld::{Action, GridEnv, GridState, Observation};
use crate::successor::{epsilon_greedy, EpsilonSchedule};

use super::agent::{Agent, LearnTarget, LearnerSettings};
use super::config::RunConfig;
use super::metrics::{Mean, MetricsRow, Phase};
use super::replay::{ReplayBuffer, Transition};
use super::rng::{decode_rng, encode_rng};

#[derive(Debug, Clone, Default, PartialEq)]
struct Accumulators {
    intrinsic: Mean,
    returns: Mean,
    successes: Mean,
    td: Mean,
    vmf: Mean,
}

/// Everything needed to continue pretraining exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainRun {
    pub config: RunConfig,
    pub env: GridEnv,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    state: GridState,
    obs: Observation,
    w: TaskVector,
    step: u64,
    episode: u64,
    segment: u64,
    episode_return: f64,
    acc: Accumulators,
    /// When false the loop only collects experience.
    pub learner_enabled: bool,
}

impl PretrainRun {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = config.build_env()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = Agent::new(&config, env.observation_dim(), &mut rng)?;
        let buffer = ReplayBuffer::new(config.replay_capacity, config.min_replay)?;
        let (state, obs) = env.reset(&mut rng);
        let w = TaskVector::basis(FEATURE_DIM, 0);
        Ok(Self {
            config,
            env,
            agent,
            buffer,
            rng,
            state,
            obs,
            w,
            step: 0,
            episode: 0,
            segment: 0,
            episode_return: 0.0,
            acc: Accumulators::default(),
            learner_enabled: true,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.pretrain_steps
    }

    pub fn epsilon(&self) -> f64 {
        EpsilonSchedule {
            start: self.config.epsilon_start,
            end: self.config.epsilon_end,
            decay_steps: self.config.epsilon_decay,
        }
        .value(self.step)
    }

    /// One environment step plus, once the buffer is warm, one learner step.
    /// Returns a metrics row when a logging interval closes.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        let cfg = &self.config;
        if self.step.is_multiple_of(u64::from(cfg.w_resample_period)) {
            self.w = sample_task_vector(&mut self.rng, FEATURE_DIM)?;
            if self.step > 0 {
                self.segment += 1;
            }
        }
        let eps = self.epsilon();
        let obs_vec = self.obs.to_vec();
        let q = self.agent.successor.q(&obs_vec, &self.w)?;
        let action = epsilon_greedy(&q, eps, &mut self.rng)?;
        let out = self.env.step(&self.state, Action::from_index(action)?)?;
        self.buffer.push(Transition::new(
            self.obs,
            action,
            out.observation,
            out.reward,
            out.done,
            self.w.clone(),
            self.episode,
            self.segment,
            self.step,
        )?);
        self.episode_return += out.reward;
        if out.done {
            self.acc.returns.add(self.episode_return);
            self.acc.successes.add(f64::from(u8::from(out.reached_goal)));
            self.episode_return = 0.0;
            self.episode += 1;
            let (s, o) = self.env.reset(&mut self.rng);
            self.state = s;
            self.obs = o;
        } else {
            self.state = out.state;
            self.obs = out.observation;
        }

        if self.learner_enabled && self.buffer.can_sample() {
            let settings = LearnerSettings::from_config(&self.config);
            let stats = self
                .agent
                .learn(&self.buffer, LearnTarget::Intrinsic(self.config.mode), &settings, &mut self.rng)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { what, .. } => Error::NonFiniteLoss { what, step: self.step },
                    other => other,
                })?;
            self.acc.intrinsic.add(stats.reward_mean);
            self.acc.td.add(stats.td_loss);
            if let Some(v) = stats.vmf_loss {
                self.acc.vmf.add(v);
            }
        }
        self.step += 1;

        if self.step.is_multiple_of(self.config.log_interval) {
            let mut row = MetricsRow::new(self.step, Phase::Pretrain, self.config.mode, self.config.seed);
            row.intrinsic_reward_mean = self.acc.intrinsic.take();
            row.extrinsic_return_mean = self.acc.returns.take();
            row.success_rate = self.acc.successes.take();
            row.td_loss = self.acc.td.take();
            row.vmf_loss = self.acc.vmf.take();
            row.epsilon = Some(eps);
            log::info!(
                "pretrain {} seed {} step {}: td {:?} vmf {:?}",
                self.config.mode,
                self.config.seed,
                self.step,
                row.td_loss,
                row.vmf_loss
            );
            return Ok(Some(row));
        }
        Ok(None)
    }

    /// Steps until `until` (capped at the configured budget), collecting metrics rows.
    pub fn run_until(&mut self, until: u64) -> Result<Vec<MetricsRow>> {
        let until = until.min(self.config.pretrain_steps);
        let mut rows = Vec::new();
        while self.step < until {
            if let Some(r) = self.step()? {
                rows.push(r);
            }
        }
        Ok(rows)
    }

    /// The trained networks, the environment and the generator, for adaptation.
    pub fn into_parts(self) -> (Agent, GridEnv, ChaCha8Rng) {
        (self.agent, self.env, self.rng)
    }

    pub fn run_to_end(&mut self) -> Result<Vec<MetricsRow>> {
        self.run_until(self.config.pretrain_steps)
    }

    pub(crate) fn encode_state(&self, enc: &mut Encoder) {
        self.agent.encode(enc);
        self.buffer.encode(enc);
        encode_rng(&self.rng, enc);
        encode_grid_state(&self.state, enc);
        enc.put_u64(self.obs.pack());
        enc.put_f64s(self.w.as_slice());
        enc.put_u64(self.step);
        enc.put_u64(self.episode);
        enc.put_u64(self.segment);
        enc.put_f64(self.episode_return);
        for m in [
            &self.acc.intrinsic,
            &self.acc.returns,
            &self.acc.successes,
            &self.acc.td,
            &self.acc.vmf,
        ] {
            enc.put_f64(m.sum);
            enc.put_u64(m.count);
        }
        enc.put_bool(self.learner_enabled);
    }

    pub(crate) fn decode_state(config: RunConfig, env: GridEnv, dec: &mut Decoder<'_>) -> Result<Self> {
        let agent = Agent::decode(dec)?;
        if agent.encoder.input_dim() != env.observation_dim() {
            return Err(Error::shape(
                "checkpoint observation size",
                env.observation_dim(),
                agent.encoder.input_dim(),
            ));
        }
        let buffer = ReplayBuffer::decode(dec)?;
        let rng = decode_rng(dec)?;
        let state = decode_grid_state(dec)?;
        let obs = Observation::unpack(dec.u64()?);
        let w = TaskVector::from_raw(dec.f64s()?);
        let step = dec.u64()?;
        let episode = dec.u64()?;
        let segment = dec.u64()?;
        let episode_return = dec.f64()?;
        let mut means = [Mean::default(); 5];
        for m in &mut means {
            m.sum = dec.f64()?;
            m.count = dec.u64()?;
        }
        let [intrinsic, returns, successes, td, vmf] = means;
        let learner_enabled = dec.bool()?;
        Ok(Self {
            config,
            env,
            agent,
            buffer,
            rng,
            state,
            obs,
            w,
            step,
            episode,
            segment,
            episode_return,
            acc: Accumulators {
                intrinsic,
                returns,
                successes,
                td,
                vmf,
            },
            learner_enabled,
        })
    }
}

fn encode_flags(flags: &[bool], enc: &mut Encoder) {
    enc.put_u32(flags.len() as u32);
    for &f in flags {
        enc.put_bool(f);
    }
}

fn decode_flags(dec: &mut Decoder<'_>) -> Result<Vec<bool>> {
    let n = dec.u32()? as usize;
    (0..n).map(|_| dec.bool()).collect()
}

pub(crate) fn encode_grid_state(s: &GridState, enc: &mut Encoder) {
    enc.put_usize(s.row);
    enc.put_usize(s.col);
    encode_flags(&s.has_key, enc);
    encode_flags(&s.door_open, enc);
    encode_flags(&s.key_reward_paid, enc);
    enc.put_u32(s.step_count);
    enc.put_bool(s.done);
}

pub(crate) fn decode_grid_state(dec: &mut Decoder<'_>) -> Result<GridState> {
    Ok(GridState {
        row: dec.usize()?,
        col: dec.usize()?,
        has_key: decode_flags(dec)?,
        door_open: decode_flags(dec)?,
        key_reward_paid: decode_flags(dec)?,
        step_count: dec.u32()?,
        done: dec.bool()?,
    })
}
