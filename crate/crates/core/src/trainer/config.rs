//! Run configuration and its flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional;
//! unknown keys are rejected. The canonical rendering produced by
//! [`RunConfig::to_text`] lists every key in a fixed order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gridworld::{GridEnv, GridMap, DEFAULT_STEP_CAP};
use crate::rewards::RewardMode;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: RewardMode,
    pub seed: u64,
    /// `easy`, `hard`, or a path to a map file.
    pub map: String,
    pub step_cap: u32,

    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub infer_episodes: u32,
    pub infer_steps: u64,
    pub eval_episodes: u32,

    pub gamma: f64,
    pub batch_size: usize,
    pub nstep: usize,
    pub knn_k: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_grad_norm: f64,
    pub target_period: u64,
    pub w_resample_period: u32,
    pub replay_capacity: usize,
    pub min_replay: usize,

    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: u64,
    pub finetune_epsilon_start: f64,
    pub finetune_epsilon: f64,
    pub infer_epsilon: f64,
    pub eval_epsilon: f64,

    pub gpi_policies: usize,
    pub regression_lambda: f64,
    pub encoder_hidden: Vec<usize>,
    pub successor_hidden: Vec<usize>,
    pub log_interval: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RewardMode::Aps,
            seed: 0,
            map: "easy".into(),
            step_cap: DEFAULT_STEP_CAP,
            pretrain_steps: 200_000,
            finetune_steps: 30_000,
            infer_episodes: 10,
            infer_steps: 2_000,
            eval_episodes: 20,
            gamma: 0.99,
            batch_size: 32,
            nstep: 10,
            knn_k: 10,
            pretrain_lr: 1e-4,
            finetune_lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 0.00015,
            max_grad_norm: 10.0,
            target_period: 100,
            w_resample_period: 10,
            replay_capacity: 100_000,
            min_replay: 1_600,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 2_500,
            finetune_epsilon_start: 1.0,
            finetune_epsilon: 0.05,
            infer_epsilon: 0.05,
            eval_epsilon: 0.0,
            gpi_policies: 10,
            regression_lambda: 1e-6,
            encoder_hidden: vec![32, 32],
            successor_hidden: vec![64],
            log_interval: 1_000,
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| bad(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse_num::<usize>(key, s.trim()))
        .collect()
}

fn join(widths: &[usize]) -> String {
    widths
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "mode",
        "seed",
        "map",
        "step_cap",
        "pretrain_steps",
        "finetune_steps",
        "infer_episodes",
        "infer_steps",
        "eval_episodes",
        "gamma",
        "batch_size",
        "nstep",
        "knn_k",
        "pretrain_lr",
        "finetune_lr",
        "adam_beta1",
        "adam_beta2",
        "adam_epsilon",
        "max_grad_norm",
        "target_period",
        "w_resample_period",
        "replay_capacity",
        "min_replay",
        "epsilon_start",
        "epsilon_end",
        "epsilon_decay",
        "finetune_epsilon_start",
        "finetune_epsilon",
        "infer_epsilon",
        "eval_epsilon",
        "gpi_policies",
        "regression_lambda",
        "encoder_hidden",
        "successor_hidden",
        "log_interval",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mode" => {
                self.mode = v.parse().map_err(|_| bad("mode", format!("unknown mode `{v}`")))?;
                if self.mode == RewardMode::Extrinsic {
                    return Err(bad("mode", "pretraining mode must be aps, apt or visr"));
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "map" => self.map = v.to_string(),
            "step_cap" => self.step_cap = parse_num(key, v)?,
            "pretrain_steps" => self.pretrain_steps = parse_num(key, v)?,
            "finetune_steps" => self.finetune_steps = parse_num(key, v)?,
            "infer_episodes" => self.infer_episodes = parse_num(key, v)?,
            "infer_steps" => self.infer_steps = parse_num(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "nstep" => self.nstep = parse_num(key, v)?,
            "knn_k" => self.knn_k = parse_num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, v)?,
            "finetune_lr" => self.finetune_lr = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "adam_epsilon" => self.adam_epsilon = parse_num(key, v)?,
            "max_grad_norm" => self.max_grad_norm = parse_num(key, v)?,
            "target_period" => self.target_period = parse_num(key, v)?,
            "w_resample_period" => self.w_resample_period = parse_num(key, v)?,
            "replay_capacity" => self.replay_capacity = parse_num(key, v)?,
            "min_replay" => self.min_replay = parse_num(key, v)?,
            "epsilon_start" => self.epsilon_start = parse_num(key, v)?,
            "epsilon_end" => self.epsilon_end = parse_num(key, v)?,
            "epsilon_decay" => self.epsilon_decay = parse_num(key, v)?,
            "finetune_epsilon_start" => self.finetune_epsilon_start = parse_num(key, v)?,
            "finetune_epsilon" => self.finetune_epsilon = parse_num(key, v)?,
            "infer_epsilon" => self.infer_epsilon = parse_num(key, v)?,
            "eval_epsilon" => self.eval_epsilon = parse_num(key, v)?,
            "gpi_policies" => self.gpi_policies = parse_num(key, v)?,
            "regression_lambda" => self.regression_lambda = parse_num(key, v)?,
            "encoder_hidden" => self.encoder_hidden = parse_widths(key, v)?,
            "successor_hidden" => self.successor_hidden = parse_widths(key, v)?,
            "log_interval" => self.log_interval = parse_num(key, v)?,
            other => return Err(bad(other, "unknown config key")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                bad(line, format!("line {} is not of the form key = value", lineno + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").expect("write to string");
        };
        put("mode", self.mode.to_string());
        put("seed", self.seed.to_string());
        put("map", self.map.clone());
        put("step_cap", self.step_cap.to_string());
        put("pretrain_steps", self.pretrain_steps.to_string());
        put("finetune_steps", self.finetune_steps.to_string());
        put("infer_episodes", self.infer_episodes.to_string());
        put("infer_steps", self.infer_steps.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("gamma", self.gamma.to_string());
        put("batch_size", self.batch_size.to_string());
        put("nstep", self.nstep.to_string());
        put("knn_k", self.knn_k.to_string());
        put("pretrain_lr", self.pretrain_lr.to_string());
        put("finetune_lr", self.finetune_lr.to_string());
        put("adam_beta1", self.adam_beta1.to_string());
        put("adam_beta2", self.adam_beta2.to_string());
        put("adam_epsilon", self.adam_epsilon.to_string());
        put("max_grad_norm", self.max_grad_norm.to_string());
        put("target_period", self.target_period.to_string());
        put("w_resample_period", self.w_resample_period.to_string());
        put("replay_capacity", self.replay_capacity.to_string());
        put("min_replay", self.min_replay.to_string());
        put("epsilon_start", self.epsilon_start.to_string());
        put("epsilon_end", self.epsilon_end.to_string());
        put("epsilon_decay", self.epsilon_decay.to_string());
        put("finetune_epsilon_start", self.finetune_epsilon_start.to_string());
        put("finetune_epsilon", self.finetune_epsilon.to_string());
        put("infer_epsilon", self.infer_epsilon.to_string());
        put("eval_epsilon", self.eval_epsilon.to_string());
        put("gpi_policies", self.gpi_policies.to_string());
        put("regression_lambda", self.regression_lambda.to_string());
        put("encoder_hidden", join(&self.encoder_hidden));
        put("successor_hidden", join(&self.successor_hidden));
        put("log_interval", self.log_interval.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(bad("gamma", "must lie in [0, 1)"));
        }
        let positive: [(&str, u64); 9] = [
            ("step_cap", self.step_cap as u64),
            ("batch_size", self.batch_size as u64),
            ("nstep", self.nstep as u64),
            ("knn_k", self.knn_k as u64),
            ("target_period", self.target_period),
            ("w_resample_period", self.w_resample_period as u64),
            ("replay_capacity", self.replay_capacity as u64),
            ("gpi_policies", self.gpi_policies as u64),
            ("log_interval", self.log_interval),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(bad(k, "must be at least 1"));
            }
        }
        if self.eval_episodes == 0 {
            return Err(bad("eval_episodes", "must be at least 1"));
        }
        if self.knn_k >= self.batch_size {
            return Err(bad("knn_k", "must be smaller than batch_size"));
        }
        if self.min_replay < self.batch_size {
            return Err(bad("min_replay", "must be at least batch_size"));
        }
        if self.min_replay > self.replay_capacity {
            return Err(bad("min_replay", "cannot exceed replay_capacity"));
        }
        for (k, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("finetune_epsilon_start", self.finetune_epsilon_start),
            ("finetune_epsilon", self.finetune_epsilon),
            ("infer_epsilon", self.infer_epsilon),
            ("eval_epsilon", self.eval_epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(k, "must lie in [0, 1]"));
            }
        }
        for (k, v) in [
            ("pretrain_lr", self.pretrain_lr),
            ("finetune_lr", self.finetune_lr),
            ("max_grad_norm", self.max_grad_norm),
            ("adam_epsilon", self.adam_epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(k, "must be positive"));
            }
        }
        if self.regression_lambda < 0.0 {
            return Err(bad("regression_lambda", "must be non-negative"));
        }
        for (k, hidden) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("successor_hidden", &self.successor_hidden),
        ] {
            if hidden.contains(&0) {
                return Err(bad(k, "layer widths must be positive"));
            }
        }
        if self.mode == RewardMode::Extrinsic {
            return Err(bad("mode", "pretraining mode must be aps, apt or visr"));
        }
        Ok(())
    }

    /// Loads the configured map (bundled name or file path).
    pub fn load_map(&self) -> Result<GridMap> {
        if let Some(m) = GridMap::bundled(&self.map) {
            return Ok(m);
        }
        let text = std::fs::read_to_string(Path::new(&self.map)).map_err(|e| {
            bad("map", format!("`{}` is neither easy, hard nor a readable file: {e}", self.map))
        })?;
        Ok(GridMap::parse(&text)?)
    }

    pub fn build_env(&self) -> Result<GridEnv> {
        GridEnv::new(self.load_map()?, self.step_cap)
    }

    /// Short level label for reports: the bundled name or the map file stem.
    pub fn level(&self) -> String {
        Path::new(&self.map)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.map.clone())
    }
}

/// Named configs shipped with the crate: `{easy,hard}_{aps,apt,visr}`.
pub fn bundled_config(name: &str) -> Option<RunConfig> {
    let (level, mode) = name.split_once('_')?;
    GridMap::bundled(level)?;
    let mode: RewardMode = mode.parse().ok()?;
    if mode == RewardMode::Extrinsic {
        return None;
    }
    Some(RunConfig {
        mode,
        map: level.to_string(),
        ..RunConfig::default()
    })
}
