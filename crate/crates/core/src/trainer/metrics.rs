//! Metrics rows and their CSV form.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rewards::RewardMode;

pub const CSV_HEADER: &str = "step,phase,mode,seed,intrinsic_reward_mean,extrinsic_return_mean,td_loss,vmf_loss,epsilon,success_rate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Pretrain,
    Infer,
    Finetune,
    ZeroShot,
    Finetuned,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Infer => "infer",
            Phase::Finetune => "finetune",
            Phase::ZeroShot => "zero_shot",
            Phase::Finetuned => "finetuned",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pretrain" => Phase::Pretrain,
            "infer" => Phase::Infer,
            "finetune" => Phase::Finetune,
            "zero_shot" => Phase::ZeroShot,
            "finetuned" => Phase::Finetuned,
            _ => return Err(Error::Format(format!("unknown phase `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub phase: Phase,
    pub mode: RewardMode,
    pub seed: u64,
    pub intrinsic_reward_mean: Option<f64>,
    pub extrinsic_return_mean: Option<f64>,
    pub td_loss: Option<f64>,
    pub vmf_loss: Option<f64>,
    pub epsilon: Option<f64>,
    pub success_rate: Option<f64>,
}

impl MetricsRow {
    pub fn new(step: u64, phase: Phase, mode: RewardMode, seed: u64) -> Self {
        Self {
            step,
            phase,
            mode,
            seed,
            intrinsic_reward_mean: None,
            extrinsic_return_mean: None,
            td_loss: None,
            vmf_loss: None,
            epsilon: None,
            success_rate: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.phase,
            self.mode,
            self.seed,
            f(self.intrinsic_reward_mean),
            f(self.extrinsic_return_mean),
            f(self.td_loss),
            f(self.vmf_loss),
            f(self.epsilon),
            f(self.success_rate)
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Format(format!(
                "metrics row has {} fields, expected 10",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("bad number `{s}`")))
            }
        };
        let int = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Format(format!("bad integer `{s}`")))
        };
        Ok(Self {
            step: int(fields[0])?,
            phase: fields[1].parse()?,
            mode: fields[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad mode `{}`", fields[2])))?,
            seed: int(fields[3])?,
            intrinsic_reward_mean: num(fields[4])?,
            extrinsic_return_mean: num(fields[5])?,
            td_loss: num(fields[6])?,
            vmf_loss: num(fields[7])?,
            epsilon: num(fields[8])?,
            success_rate: num(fields[9])?,
        })
    }
}

/// Parses a whole metrics file, header included.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        _ => return Err(Error::Format("missing metrics header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::parse_csv)
        .collect()
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Running mean over a logging interval.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Mean {
    pub sum: f64,
    pub count: u64,
}

impl Mean {
    pub fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn take(&mut self) -> Option<f64> {
        let v = self.get();
        *self = Self::default();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut r = MetricsRow::new(1000, Phase::ZeroShot, RewardMode::Apt, 3);
        r.success_rate = Some(0.25);
        r.td_loss = Some(1.0e-7);
        assert_eq!(r.to_csv(), "1000,zero_shot,apt,3,,,0.0000001,,,0.25");
        let text = to_csv(&[r.clone()]);
        assert_eq!(parse_csv(&text).unwrap(), vec![r]);
    }

    #[test]
    fn header_is_required() {
        assert!(parse_csv("1,pretrain,aps,0,,,,,,\n").is_err());
        assert!(MetricsRow::parse_csv("1,pretrain,aps").is_err());
    }

    #[test]
    fn running_mean() {
        let mut m = Mean::default();
        assert_eq!(m.get(), None);
        m.add(1.0);
        m.add(2.0);
        assert_eq!(m.take(), Some(1.5));
        assert_eq!(m.get(), None);
    }
}
