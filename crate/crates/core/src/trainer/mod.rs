//! Replay, pretraining, task inference, fine-tuning and evaluation.

pub mod agent;
pub mod config;
pub mod finetune;
pub mod infer;
pub mod metrics;
pub mod pretrain;
pub mod replay;
pub mod rng;

pub use agent::{Agent, LearnStats, LearnTarget, LearnerSettings};
pub use config::{bundled_config, RunConfig};
pub use finetune::{
    adapt, evaluate, evaluate_gpi, finetune, infer_task, EvalResult, FinetuneOutcome, GpiPolicy, Policy,
    RandomPolicy, ScriptedPolicy,
};
pub use infer::{collect_inference_data, solve_task_regression, InferenceData};
pub use metrics::{parse_csv, to_csv, MetricsRow, Phase, CSV_HEADER};
pub use pretrain::PretrainRun;
pub use replay::{extrinsic_reads, reset_extrinsic_reads, ReplayBuffer, Transition, Window};
pub use rng::eval_rng;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub rows: Vec<MetricsRow>,
    pub outcome: FinetuneOutcome,
}

/// Pretrain, infer the task, evaluate zero-shot, fine-tune and evaluate again.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineResult> {
    let mut run = PretrainRun::new(cfg.clone())?;
    let mut rows = run.run_to_end()?;
    let (agent, env, mut rng) = run.into_parts();
    let outcome = adapt(agent, &env, cfg, &mut rng)?;
    rows.extend(outcome.rows.iter().cloned());
    Ok(PipelineResult { rows, outcome })
}
