//! Task-conditioned successor features `psi(s, a, w)` and the value machinery
//! built on them: Q assembly, epsilon-greedy and GPI action selection,
//! n-step targets and the TD loss.

use rand::Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::features::{dot, sample_task_vector, TaskVector};
use crate::nn::{Activation, DenseNet, Gradients, Tape};

/// `|A| x d` successor features for one `(s, w)`; `Q(s, a | w) = row(a) . w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorMatrix {
    num_actions: usize,
    dim: usize,
    /// Row-major `[action][feature]`.
    data: Vec<f64>,
}

impl SuccessorMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 {
            return Err(Error::InvalidArgument("successor matrix needs rows".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::shape("successor row", dim, r.len()));
        }
        Ok(Self {
            num_actions: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    /// Reads a network output laid out as `dim` heads of width `|A|`.
    pub fn from_head_output(output: &[f64], num_actions: usize, dim: usize) -> Result<Self> {
        if output.len() != num_actions * dim {
            return Err(Error::shape("successor output", num_actions * dim, output.len()));
        }
        let mut data = vec![0.0; num_actions * dim];
        for j in 0..dim {
            for a in 0..num_actions {
                data[a * dim + j] = output[j * num_actions + a];
            }
        }
        Ok(Self {
            num_actions,
            dim,
            data,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, action: usize) -> &[f64] {
        &self.data[action * self.dim..(action + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn q_values(psi: &SuccessorMatrix, w: &TaskVector) -> Result<Vec<f64>> {
    if w.dim() != psi.dim {
        return Err(Error::shape("task vector", psi.dim, w.dim()));
    }
    Ok((0..psi.num_actions)
        .map(|a| dot(psi.row(a), w.as_slice()))
        .collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::InvalidArgument("no actions to choose from".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(argmax(q).expect("non-empty"))
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(value: f64) -> Self {
        Self {
            start: value,
            end: value,
            decay_steps: 0,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// `sum_l gamma^l r_l + gamma^n * bootstrap`; `None` means the window ended an episode.
pub fn nstep_target(rewards: &[f64], gamma: f64, bootstrap: Option<f64>) -> f64 {
    let mut acc = 0.0;
    let mut discount = 1.0;
    for &r in rewards {
        acc += discount * r;
        discount *= gamma;
    }
    match bootstrap {
        Some(b) => acc + discount * b,
        None => acc,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdLoss {
    pub loss: f64,
    /// `d loss / d Q`.
    pub grad_q: f64,
}

/// Squared error `(Q - y)^2` with the target treated as a constant.
pub fn td_loss(prediction: f64, target: f64) -> Result<TdLoss> {
    if !target.is_finite() {
        return Err(Error::NonFinite {
            tensor: "td target".into(),
        });
    }
    let diff = prediction - target;
    Ok(TdLoss {
        loss: diff * diff,
        grad_q: 2.0 * diff,
    })
}

/// Gradient of the network output for `grad_q` flowing into `Q(s, action | w)` only.
pub fn q_output_grad(action: usize, w: &TaskVector, grad_q: f64, num_actions: usize) -> Vec<f64> {
    let dim = w.dim();
    let mut g = vec![0.0; num_actions * dim];
    for (j, &wj) in w.as_slice().iter().enumerate() {
        g[j * num_actions + action] = grad_q * wj;
    }
    g
}

/// Conditioning vectors evaluated by GPI alongside the inferred task vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    members: Vec<TaskVector>,
}

impl PolicySet {
    pub fn new(members: Vec<TaskVector>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("policy set must not be empty".into()));
        }
        if let Some(w) = members.iter().find(|w| (w.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "policy vector has norm {}",
                w.norm()
            )));
        }
        Ok(Self { members })
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, size: usize, dim: usize) -> Result<Self> {
        let members = (0..size)
            .map(|_| sample_task_vector(rng, dim))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn members(&self) -> &[TaskVector] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        enc.put_usize(self.members.len());
        for w in &self.members {
            enc.put_f64s(w.as_slice());
        }
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let n = dec.usize()?;
        let members = (0..n)
            .map(|_| dec.f64s().map(TaskVector::from_raw))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }
}

/// Online/target pair of UVFA networks mapping `concat(obs, w)` to `|A| * d` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorNet {
    pub online: DenseNet,
    pub target: DenseNet,
    obs_dim: usize,
    num_actions: usize,
    dim: usize,
}

impl SuccessorNet {
    /// ReLU trunk of the given widths followed by `dim` linear heads of width `num_actions`.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut spec: Vec<(usize, Activation)> =
            hidden.iter().map(|&h| (h, Activation::Relu)).collect();
        spec.push((num_actions * dim, Activation::Identity));
        let online = DenseNet::random(obs_dim + dim, &spec, rng)?;
        let target = online.clone();
        Ok(Self {
            online,
            target,
            obs_dim,
            num_actions,
            dim,
        })
    }

    pub fn from_parts(online: DenseNet, target: DenseNet, num_actions: usize, dim: usize) -> Result<Self> {
        if !online.same_architecture(&target) {
            return Err(Error::ArchitectureMismatch("online and target successor nets".into()));
        }
        if online.output_dim() != num_actions * dim || online.input_dim() <= dim {
            return Err(Error::shape("successor output", num_actions * dim, online.output_dim()));
        }
        Ok(Self {
            obs_dim: online.input_dim() - dim,
            online,
            target,
            num_actions,
            dim,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn input(&self, obs: &[f64], w: &TaskVector) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::shape("successor observation", self.obs_dim, obs.len()));
        }
        if w.dim() != self.dim {
            return Err(Error::shape("successor task vector", self.dim, w.dim()));
        }
        let mut x = Vec::with_capacity(self.obs_dim + self.dim);
        x.extend_from_slice(obs);
        x.extend_from_slice(w.as_slice());
        Ok(x)
    }

    fn matrix(&self, output: &[f64]) -> Result<SuccessorMatrix> {
        SuccessorMatrix::from_head_output(output, self.num_actions, self.dim)
    }

    pub fn psi(&self, obs: &[f64], w: &TaskVector) -> Result<SuccessorMatrix> {
        self.matrix(&self.online.forward(&self.input(obs, w)?)?)
    }

    pub fn psi_target(&self, obs: &[f64], w: &TaskVector) -> Result<SuccessorMatrix> {
        self.matrix(&self.target.forward(&self.input(obs, w)?)?)
    }

    pub fn psi_tape(&self, obs: &[f64], w: &TaskVector) -> Result<(SuccessorMatrix, Tape)> {
        let tape = self.online.forward_tape(&self.input(obs, w)?)?;
        Ok((self.matrix(tape.output())?, tape))
    }

    /// Online `Q(obs, . | w)`.
    pub fn q(&self, obs: &[f64], w: &TaskVector) -> Result<Vec<f64>> {
        q_values(&self.psi(obs, w)?, w)
    }

    /// Double-Q bootstrap value: action chosen by the online net, valued by the target net.
    pub fn double_q_bootstrap(&self, obs: &[f64], w: &TaskVector) -> Result<f64> {
        let best = argmax(&self.q(obs, w)?).expect("at least one action");
        let target = self.psi_target(obs, w)?;
        Ok(dot(target.row(best), w.as_slice()))
    }

    /// Accumulates the TD gradient for `Q(obs, action | w)` into `grads`.
    pub fn accumulate_td_gradient(
        &self,
        tape: &Tape,
        action: usize,
        w: &TaskVector,
        grad_q: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        let g = q_output_grad(action, w, grad_q, self.num_actions);
        self.online.accumulate_gradients(tape, &g, grads, false)?;
        Ok(())
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)
    }

    /// GPI values `max_i psi(obs, a, w_i) . w_task` over `policies` plus `w_task`.
    pub fn gpi_values(
        &self,
        obs: &[f64],
        w_task: &TaskVector,
        policies: &PolicySet,
    ) -> Result<Vec<f64>> {
        let mut best = self.q(obs, w_task)?;
        for wi in policies.members() {
            let q = q_values(&self.psi(obs, wi)?, w_task)?;
            for (b, v) in best.iter_mut().zip(q) {
                if v > *b {
                    *b = v;
                }
            }
        }
        Ok(best)
    }

    pub fn gpi_action(&self, obs: &[f64], w_task: &TaskVector, policies: &PolicySet) -> Result<usize> {
        Ok(argmax(&self.gpi_values(obs, w_task, policies)?).expect("at least one action"))
    }
}
