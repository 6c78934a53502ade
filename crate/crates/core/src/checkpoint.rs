//! Versioned binary checkpoints.
//!
//! ```text
//! magic     8 bytes  "APSCKPT\0"
//! version   u32      1
//! kind      u8       0 = pretraining in progress or finished, 1 = fine-tuned
//! config    u32 length + UTF-8 config text
//! map       u32 length + UTF-8 map text, then u32 step cap
//! payload   kind-specific state (networks, optimizers, generator, counters,
//!           and for pretraining the replay buffer)
//! ```
//!
//! Readers refuse any other magic or version.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::features::TaskVector;
use crate::gridworld::{GridEnv, GridMap};
use crate::successor::PolicySet;
use crate::trainer::finetune::EvalResult;
use crate::trainer::rng::{decode_rng, encode_rng};
use crate::trainer::{Agent, PretrainRun, RunConfig};

pub const CHECKPOINT_MAGIC: &str = "APSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// State after adaptation: the fine-tuned networks and the task they serve.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneState {
    pub config: RunConfig,
    pub env: GridEnv,
    pub agent: Agent,
    pub w_task: TaskVector,
    pub policies: PolicySet,
    pub rng: ChaCha8Rng,
    pub zero_shot: EvalResult,
    pub finetuned: EvalResult,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Pretrain(Box<PretrainRun>),
    Finetune(Box<FinetuneState>),
}

fn encode_header(enc: &mut Encoder, kind: u8, config: &RunConfig, env: &GridEnv) {
    enc.put_raw(CHECKPOINT_MAGIC.as_bytes());
    enc.put_u32(CHECKPOINT_VERSION);
    enc.put_u8(kind);
    enc.put_str(&config.to_text());
    enc.put_str(&env.map().render());
    enc.put_u32(env.step_cap());
}

fn encode_eval(r: &EvalResult, enc: &mut Encoder) {
    enc.put_u32(r.episodes);
    enc.put_f64(r.success_rate);
    enc.put_f64(r.mean_return);
}

fn decode_eval(dec: &mut Decoder<'_>) -> Result<EvalResult> {
    Ok(EvalResult {
        episodes: dec.u32()?,
        success_rate: dec.f64()?,
        mean_return: dec.f64()?,
    })
}

impl Checkpoint {
    pub fn config(&self) -> &RunConfig {
        match self {
            Checkpoint::Pretrain(r) => &r.config,
            Checkpoint::Finetune(f) => &f.config,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            Checkpoint::Pretrain(run) => {
                encode_header(&mut enc, 0, &run.config, &run.env);
                run.encode_state(&mut enc);
            }
            Checkpoint::Finetune(f) => {
                encode_header(&mut enc, 1, &f.config, &f.env);
                f.agent.encode(&mut enc);
                enc.put_f64s(f.w_task.as_slice());
                f.policies.encode(&mut enc);
                encode_rng(&f.rng, &mut enc);
                encode_eval(&f.zero_shot, &mut enc);
                encode_eval(&f.finetuned, &mut enc);
            }
        }
        enc.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes);
        dec.expect_magic(CHECKPOINT_MAGIC)?;
        let version = dec.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let kind = dec.u8()?;
        let config = RunConfig::from_text(&dec.str()?)?;
        let map = GridMap::parse(&dec.str()?)?;
        let env = GridEnv::new(map, dec.u32()?)?;
        let ckpt = match kind {
            0 => Checkpoint::Pretrain(Box::new(PretrainRun::decode_state(config, env, &mut dec)?)),
            1 => {
                let agent = Agent::decode(&mut dec)?;
                let w_task = TaskVector::from_raw(dec.f64s()?);
                let policies = PolicySet::decode(&mut dec)?;
                let rng = decode_rng(&mut dec)?;
                let zero_shot = decode_eval(&mut dec)?;
                let finetuned = decode_eval(&mut dec)?;
                Checkpoint::Finetune(Box::new(FinetuneState {
                    config,
                    env,
                    agent,
                    w_task,
                    policies,
                    rng,
                    zero_shot,
                    finetuned,
                }))
            }
            k => return Err(Error::Format(format!("unknown checkpoint kind {k}"))),
        };
        dec.finish()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
