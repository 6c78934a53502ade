//! Encoder plus successor networks, their optimizers, and the minibatch learner step.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::Rng;

use crate::codec::{Decoder, Encoder};
use crate::entropy::ParticleBatch;
use crate::error::{Error, Result};
use crate::features::{dot, encode, encode_tape, vmf_nll_loss, FeatureVector, FEATURE_DIM};
use crate::gridworld::Action;
use crate::nn::{clip_grad_norm, Activation, AdamConfig, AdamState, DenseNet, Gradients, Tape};
use crate::rewards::{clip_reward, RewardMode};
use crate::successor::{nstep_target, td_loss, SuccessorNet};

use super::config::RunConfig;
use super::replay::ReplayBuffer;

/// Which reward the learner optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnTarget {
    /// Mode-specific intrinsic reward; the encoder also learns when the mode uses it.
    Intrinsic(RewardMode),
    /// Clipped environment reward with the encoder frozen.
    Extrinsic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnStats {
    pub td_loss: f64,
    pub vmf_loss: Option<f64>,
    /// Mean reward of the first transition of each sampled window.
    pub reward_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerSettings {
    pub batch_size: usize,
    pub nstep: usize,
    pub gamma: f64,
    pub knn_k: usize,
    pub max_grad_norm: f64,
    pub target_period: u64,
}

impl LearnerSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            batch_size: cfg.batch_size,
            nstep: cfg.nstep,
            gamma: cfg.gamma,
            knn_k: cfg.knn_k,
            max_grad_norm: cfg.max_grad_norm,
            target_period: cfg.target_period,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub encoder: DenseNet,
    pub successor: SuccessorNet,
    pub encoder_opt: AdamState,
    pub successor_opt: AdamState,
    /// Learner steps taken so far; drives target syncs.
    pub updates: u64,
    encoder_grads: Gradients,
    successor_grads: Gradients,
}

impl PartialEq for Agent {
    fn eq(&self, other: &Self) -> bool {
        self.encoder == other.encoder
            && self.successor == other.successor
            && self.encoder_opt == other.encoder_opt
            && self.successor_opt == other.successor_opt
            && self.updates == other.updates
    }
}

fn encoder_spec(hidden: &[usize]) -> Vec<(usize, Activation)> {
    let mut spec: Vec<(usize, Activation)> = hidden.iter().map(|&h| (h, Activation::Elu)).collect();
    spec.push((FEATURE_DIM, Activation::Identity));
    spec
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, obs_dim: usize, rng: &mut R) -> Result<Self> {
        let encoder = DenseNet::random(obs_dim, &encoder_spec(&cfg.encoder_hidden), rng)?;
        let successor =
            SuccessorNet::new(obs_dim, Action::COUNT, FEATURE_DIM, &cfg.successor_hidden, rng)?;
        let adam = AdamConfig {
            learning_rate: cfg.pretrain_lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
        };
        Ok(Self::from_parts(encoder, successor, adam))
    }

    fn from_parts(encoder: DenseNet, successor: SuccessorNet, adam: AdamConfig) -> Self {
        Self {
            encoder_opt: AdamState::new(&encoder, adam),
            successor_opt: AdamState::new(&successor.online, adam),
            encoder_grads: Gradients::zeros_like(&encoder),
            successor_grads: Gradients::zeros_like(&successor.online),
            encoder,
            successor,
            updates: 0,
        }
    }

    /// Fresh optimizer state at a new learning rate, e.g. when fine-tuning starts.
    pub fn reset_optimizers(&mut self, learning_rate: f64) {
        let cfg = AdamConfig {
            learning_rate,
            ..self.successor_opt.config
        };
        self.encoder_opt = AdamState::new(&self.encoder, cfg);
        self.successor_opt = AdamState::new(&self.successor.online, cfg);
    }

    pub fn features(&self, obs: &[f64]) -> Result<FeatureVector> {
        encode(&self.encoder, obs)
    }

    /// One minibatch update of the successor network (and the encoder when
    /// the target trains it). Rewards are recomputed from the current encoder.
    pub fn learn<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        target: LearnTarget,
        settings: &LearnerSettings,
        rng: &mut R,
    ) -> Result<LearnStats> {
        let idx = buffer.sample_indices(rng, settings.batch_size)?;
        let bsz = idx.len();
        let mode = match target {
            LearnTarget::Intrinsic(RewardMode::Extrinsic) => {
                return Err(Error::ModeMismatch {
                    mode: RewardMode::Extrinsic.to_string(),
                    phase: "pretraining",
                })
            }
            LearnTarget::Intrinsic(m) => Some(m),
            LearnTarget::Extrinsic => None,
        };
        let train_encoder = mode.is_some_and(RewardMode::trains_encoder);

        let next_vecs: Vec<Vec<f64>> = idx.iter().map(|&i| buffer.get(i).next_obs.to_vec()).collect();
        let mut tapes: Vec<Tape> = Vec::new();
        let mut particles: Vec<Vec<f64>> = Vec::new();
        if mode.is_some() {
            for x in &next_vecs {
                if train_encoder {
                    let (phi, tape) = encode_tape(&self.encoder, x)?;
                    particles.push(phi.as_slice().to_vec());
                    tapes.push(tape);
                } else {
                    particles.push(self.features(x)?.as_slice().to_vec());
                }
            }
        }
        let batch = match mode {
            Some(m) if m.uses_exploration() => Some(ParticleBatch::new(particles.clone(), settings.knn_k)?),
            _ => None,
        };

        // the encoder is fixed for the rest of this step, so window features can be shared
        let mut feature_cache: HashMap<u64, FeatureVector> = HashMap::new();
        self.successor_grads.fill_zero();
        let scale = 1.0 / bsz as f64;
        let mut td_sum = 0.0;
        let mut reward_sum = 0.0;
        for (b, &i) in idx.iter().enumerate() {
            let win = buffer.window(i, settings.nstep);
            let mut rewards = Vec::with_capacity(win.len);
            for l in 0..win.len {
                let t = buffer.get(win.start + l);
                let r = match mode {
                    None => clip_reward(t.extrinsic_reward()),
                    Some(m) => {
                        let phi: &[f64] = if l == 0 {
                            &particles[b]
                        } else {
                            match feature_cache.entry(t.next_obs.pack()) {
                                Entry::Occupied(e) => e.into_mut().as_slice(),
                                Entry::Vacant(e) => e.insert(encode(&self.encoder, &t.next_obs.to_vec())?).as_slice(),
                            }
                        };
                        let exploit = if m.uses_exploitation() { dot(phi, t.w.as_slice()) } else { 0.0 };
                        let explore = match &batch {
                            Some(pb) if l == 0 => pb.entropy_reward(b)?,
                            Some(pb) => pb.entropy_reward_of(phi)?,
                            None => 0.0,
                        };
                        m.compose(exploit, explore)?
                    }
                };
                rewards.push(r);
            }
            reward_sum += rewards[0];
            let first = buffer.get(i);
            let last = buffer.get(win.start + win.len - 1);
            let boot = if win.bootstrap {
                Some(self.successor.double_q_bootstrap(&last.next_obs.to_vec(), &first.w)?)
            } else {
                None
            };
            let y = nstep_target(&rewards, settings.gamma, boot);
            let (psi, tape) = self.successor.psi_tape(&first.obs.to_vec(), &first.w)?;
            let q = dot(psi.row(first.action), first.w.as_slice());
            let td = td_loss(q, y)?;
            td_sum += td.loss;
            self.successor.accumulate_td_gradient(
                &tape,
                first.action,
                &first.w,
                td.grad_q * scale,
                &mut self.successor_grads,
            )?;
        }
        let td_mean = td_sum * scale;
        if !td_mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "td loss",
                step: self.updates,
            });
        }

        let mut vmf = None;
        if train_encoder {
            let raw: Vec<&[f64]> = tapes.iter().map(Tape::output).collect();
            let ws: Vec<_> = idx.iter().map(|&i| &buffer.get(i).w).collect();
            let loss = vmf_nll_loss(&raw, &ws)?;
            if !loss.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    what: "vmf loss",
                    step: self.updates,
                });
            }
            self.encoder_grads.fill_zero();
            for (tape, g) in tapes.iter().zip(&loss.raw_grads) {
                self.encoder.accumulate_gradients(tape, g, &mut self.encoder_grads, false)?;
            }
            clip_grad_norm(&mut self.encoder_grads, settings.max_grad_norm)?;
            self.encoder_opt.step(&mut self.encoder, &self.encoder_grads)?;
            vmf = Some(loss.loss);
        }

        clip_grad_norm(&mut self.successor_grads, settings.max_grad_norm)?;
        self.successor_opt
            .step(&mut self.successor.online, &self.successor_grads)?;
        self.updates += 1;
        if self.updates.is_multiple_of(settings.target_period) {
            self.successor.sync_target()?;
        }
        Ok(LearnStats {
            td_loss: td_mean,
            vmf_loss: vmf,
            reward_mean: reward_sum * scale,
        })
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        self.encoder.encode(enc);
        self.successor.online.encode(enc);
        self.successor.target.encode(enc);
        self.encoder_opt.encode(enc);
        self.successor_opt.encode(enc);
        enc.put_u64(self.updates);
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let encoder = DenseNet::decode(dec)?;
        let online = DenseNet::decode(dec)?;
        let target = DenseNet::decode(dec)?;
        if encoder.output_dim() != FEATURE_DIM {
            return Err(Error::shape("encoder output", FEATURE_DIM, encoder.output_dim()));
        }
        let successor = SuccessorNet::from_parts(online, target, Action::COUNT, FEATURE_DIM)?;
        if successor.obs_dim() != encoder.input_dim() {
            return Err(Error::ArchitectureMismatch(
                "encoder and successor observation sizes differ".into(),
            ));
        }
        let encoder_opt = AdamState::decode(dec, &encoder)?;
        let successor_opt = AdamState::decode(dec, &successor.online)?;
        let updates = dec.u64()?;
        Ok(Self {
            encoder_grads: Gradients::zeros_like(&encoder),
            successor_grads: Gradients::zeros_like(&successor.online),
            encoder,
            successor,
            encoder_opt,
            successor_opt,
            updates,
        })
    }
}
