//! State encoder with unit-norm output, the von Mises-Fisher likelihood loss,
//! and task-vector sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{DenseNet, Tape};

/// Dimension of the feature and task space.
pub const FEATURE_DIM: usize = 5;

/// Denominator floor used when normalizing encoder outputs.
pub const NORM_FLOOR: f64 = 1e-8;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm task vector `w`, which doubles as the policy-conditioning variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector(Vec<f64>);

impl TaskVector {
    /// Normalizes `v`; fails on a (near) zero vector.
    pub fn from_unnormalized(v: Vec<f64>) -> Result<Self> {
        let n = l2(&v);
        if !n.is_finite() || n < NORM_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize task vector with norm {n}"
            )));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }

    /// Rebuilds a task vector from stored components without renormalizing,
    /// so checkpoints round-trip bit-exactly.
    pub(crate) fn from_raw(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Encoder output after L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }

    pub fn dot(&self, w: &TaskVector) -> f64 {
        dot(&self.0, w.as_slice())
    }
}

/// `v / max(|v|, 1e-8)`.
pub fn normalize(raw: &[f64]) -> FeatureVector {
    let n = l2(raw);
    if n < NORM_FLOOR {
        log::warn!("degenerate encoder output with norm {n:e}");
    }
    let denom = n.max(NORM_FLOOR);
    FeatureVector(raw.iter().map(|x| x / denom).collect())
}

pub fn encode(net: &DenseNet, obs: &[f64]) -> Result<FeatureVector> {
    Ok(normalize(&net.forward(obs)?))
}

/// Encodes and keeps the tape so the VMF loss can be backpropagated.
pub fn encode_tape(net: &DenseNet, obs: &[f64]) -> Result<(FeatureVector, Tape)> {
    let tape = net.forward_tape(obs)?;
    Ok((normalize(tape.output()), tape))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmfLoss {
    pub loss: f64,
    /// Gradient of `loss` w.r.t. each raw (pre-normalization) encoder output.
    pub raw_grads: Vec<Vec<f64>>,
}

/// `-mean_i normalize(raw_i) . w_i`, differentiated through the normalization.
pub fn vmf_nll_loss(raw: &[&[f64]], tasks: &[&TaskVector]) -> Result<VmfLoss> {
    if raw.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if raw.len() != tasks.len() {
        return Err(Error::shape("vmf loss batch", raw.len(), tasks.len()));
    }
    let scale = 1.0 / raw.len() as f64;
    let mut loss = 0.0;
    let mut raw_grads = Vec::with_capacity(raw.len());
    for (v, w) in raw.iter().zip(tasks) {
        let w = w.as_slice();
        if v.len() != w.len() {
            return Err(Error::shape("vmf loss feature", w.len(), v.len()));
        }
        let n = l2(v);
        if n >= NORM_FLOOR {
            let u: Vec<f64> = v.iter().map(|x| x / n).collect();
            let uw = dot(&u, w);
            loss -= scale * uw;
            raw_grads.push(
                u.iter()
                    .zip(w)
                    .map(|(ui, wi)| -scale * (wi - ui * uw) / n)
                    .collect(),
            );
        } else {
            loss -= scale * dot(v, w) / NORM_FLOOR;
            raw_grads.push(w.iter().map(|wi| -scale * wi / NORM_FLOOR).collect());
        }
    }
    Ok(VmfLoss { loss, raw_grads })
}

/// Draws `w` uniformly on the unit sphere by normalizing a standard normal sample.
pub fn sample_task_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<TaskVector> {
    if dim == 0 {
        return Err(Error::InvalidArgument("task dimension must be at least 1".into()));
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if l2(&v) >= NORM_FLOOR {
            return TaskVector::from_unnormalized(v);
        }
    }
}
