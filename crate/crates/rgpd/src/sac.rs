//! Soft actor-critic controller: reads a pooled summary of GCRN hidden
//! states, emits a bounded scaling action applied as H·(1+a) before TAU, and
//! learns off-policy from a replay buffer with entropy regularization.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacConfig {
    pub state_dim: usize,
    /// 1 = one global scale (default); >1 scales feature channels separately.
    pub action_dim: usize,
    pub hidden: usize,
    pub a_max: f64,
    pub gamma: f64,
    pub alpha_ent: f64,
    pub soft_tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
}

impl SacConfig {
    pub fn new(state_dim: usize) -> SacConfig {
        SacConfig {
            state_dim,
            action_dim: 1,
            hidden: 32,
            a_max: 0.5,
            gamma: 0.99,
            alpha_ent: 0.2,
            soft_tau: 0.005,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 32,
            buffer_capacity: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: f64,
}

/// Bounded FIFO; oldest transitions are evicted first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            items: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Uniform without replacement within one batch.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition> {
        rand::seq::index::sample(rng, self.items.len(), n)
            .iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

pub struct SacPolicy {
    pub actor: Mlp, // state → [mean ‖ log_std], each action_dim wide
    pub q1: Mlp,
    pub q2: Mlp,
    target_q1: Mlp,
    target_q2: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub cfg: SacConfig,
}

fn copy_mlp(src: &Mlp, as_param: bool) -> Mlp {
    let dup = |t: &Tensor| {
        if as_param {
            Tensor::param(t.shape(), t.values()).expect("copy")
        } else {
            Tensor::new(t.shape(), t.values()).expect("copy")
        }
    };
    Mlp {
        weights: src.weights.iter().map(dup).collect(),
        biases: src.biases.iter().map(dup).collect(),
        hidden_act: src.hidden_act,
    }
}

/// clamp(x) = hi − relu(hi − (lo + relu(x − lo))); gradient is 1 inside the
/// range and 0 outside, matching a hard clamp.
fn clamp_op(x: &Tensor, lo: f64, hi: f64) -> Tensor {
    let raised = x.add_scalar(-lo).relu().add_scalar(lo);
    raised.neg().add_scalar(hi).relu().neg().add_scalar(hi)
}

impl SacPolicy {
    pub fn new(rng: &mut ChaCha8Rng, cfg: SacConfig) -> Result<SacPolicy> {
        if !(0.0 < cfg.a_max && cfg.a_max < 1.0) {
            return Err(Error::invalid(format!(
                "a_max = {} must lie in (0, 1) so 1 + action stays positive",
                cfg.a_max
            )));
        }
        let actor = Mlp::new(
            rng,
            &[cfg.state_dim, cfg.hidden, cfg.hidden, 2 * cfg.action_dim],
            Activation::Tanh,
        );
        let qdims = [cfg.state_dim + cfg.action_dim, cfg.hidden, cfg.hidden, 1];
        let q1 = Mlp::new(rng, &qdims, Activation::Tanh);
        let q2 = Mlp::new(rng, &qdims, Activation::Tanh);
        let target_q1 = copy_mlp(&q1, false);
        let target_q2 = copy_mlp(&q2, false);
        let actor_opt = Adam::new(actor.params(), cfg.actor_lr);
        let critic_opt = Adam::new(
            q1.params().into_iter().chain(q2.params()).collect(),
            cfg.critic_lr,
        );
        Ok(SacPolicy {
            actor,
            q1,
            q2,
            target_q1,
            target_q2,
            actor_opt,
            critic_opt,
            cfg,
        })
    }

    pub fn actor_forward(&self, s: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.actor.forward(s)?;
        let a = self.cfg.action_dim;
        let mean = out.slice_cols(0, a)?;
        let log_std = clamp_op(&out.slice_cols(a, 2 * a)?, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std))
    }

    /// Reparameterized squashed-Gaussian sample for a fixed noise tensor ε
    /// (same shape as the mean): a = a_max·tanh(mean + std·ε), with the
    /// tanh change-of-variables correction folded into log π. Returns
    /// (action B×A, log_prob B×1).
    pub fn sample_graph(&self, s: &Tensor, eps: &Tensor) -> Result<(Tensor, Tensor)> {
        let (mean, log_std) = self.actor_forward(s)?;
        let std = log_std.exp();
        let u = mean.add(&std.mul(eps)?)?;
        let t = u.tanh();
        let action = t.mul_scalar(self.cfg.a_max);
        // log N(u; mean, std) = −log_std − ε²/2 − ln(2π)/2, then subtract
        // ln|da/du| = ln a_max + ln(1 − tanh²u); the 1e-12 floor keeps the
        // correction finite when tanh saturates in f64
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let gauss = log_std
            .neg()
            .sub(&eps.square().mul_scalar(0.5))?
            .add_scalar(-half_ln_2pi);
        let jac = t
            .square()
            .neg()
            .add_scalar(1.0 + 1e-12)
            .ln()
            .add_scalar(self.cfg.a_max.ln());
        let per_dim = gauss.sub(&jac)?;
        let rows = per_dim.shape()[0];
        let ones = Tensor::ones(vec![per_dim.shape()[1], 1]);
        let log_prob = per_dim.matmul(&ones)?;
        debug_assert_eq!(log_prob.shape(), vec![rows, 1]);
        Ok((action, log_prob))
    }

    /// Numeric sampling for acting. `deterministic` returns a_max·tanh(mean).
    pub fn sample_action(
        &self,
        state: &[f64],
        rng: &mut ChaCha8Rng,
        deterministic: bool,
    ) -> Result<(Vec<f64>, f64)> {
        if state.len() != self.cfg.state_dim {
            return Err(Error::invalid(format!(
                "state length {} != state_dim {}",
                state.len(),
                self.cfg.state_dim
            )));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sac state".into()));
        }
        let s = Tensor::new(vec![1, self.cfg.state_dim], state.to_vec())?;
        let eps: Vec<f64> = (0..self.cfg.action_dim)
            .map(|_| {
                if deterministic {
                    0.0
                } else {
                    StandardNormal.sample(rng)
                }
            })
            .collect();
        let eps_t = Tensor::new(vec![1, self.cfg.action_dim], eps)?;
        let (action, log_prob) = self.sample_graph(&s, &eps_t)?;
        Ok((action.values(), log_prob.item()))
    }

    /// Regress both critics toward r + γ(1−d)(min Q'(s',a') − α·log π(a'|s'))
    /// with a' resampled from the current actor, then soft-update the target
    /// nets. Returns None (with a warning) if the buffer is undersized.
    pub fn critic_update(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<f64>> {
        let b = self.cfg.batch_size;
        if buffer.len() < b {
            eprintln!(
                "warning: replay buffer has {} transitions, batch needs {}; skipping critic update",
                buffer.len(),
                b
            );
            return Ok(None);
        }
        let batch = buffer.sample(b, rng);
        let (s, a, r, s_next, d) = batch_tensors(&batch, &self.cfg)?;

        let eps_vals: Vec<f64> = (0..b * self.cfg.action_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let eps = Tensor::new(vec![b, self.cfg.action_dim], eps_vals)?;
        let (a_next, logp_next) = self.sample_graph(&s_next, &eps)?;
        let sa_next = Tensor::concat(&[s_next, a_next], 1)?;
        let tq = min_op(
            &self.target_q1.forward(&sa_next)?,
            &self.target_q2.forward(&sa_next)?,
        )?;
        let soft_v = tq.sub(&logp_next.mul_scalar(self.cfg.alpha_ent))?;
        let not_done = d.neg().add_scalar(1.0);
        let y = r
            .add(&not_done.mul(&soft_v)?.mul_scalar(self.cfg.gamma))?
            .detach();

        let sa = Tensor::concat(&[s, a], 1)?;
        let l1 = self.q1.forward(&sa)?.sub(&y)?.square().mean();
        let l2 = self.q2.forward(&sa)?.sub(&y)?.square().mean();
        let loss = l1.add(&l2)?;
        self.critic_opt.zero_grad();
        self.actor_opt.zero_grad(); // the resampled a' leaks grads into the actor
        loss.backward()?;
        let val = loss.item();
        self.critic_opt.step()?;
        self.actor_opt.zero_grad();
        self.soft_update();
        Ok(Some(val))
    }

    /// One gradient step on E[α·log π(a|s) − min Q(s,a)] with a
    /// reparameterized action; critic parameters are left untouched.
    pub fn actor_update(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<f64>> {
        let b = self.cfg.batch_size;
        if buffer.len() < b {
            eprintln!(
                "warning: replay buffer has {} transitions, batch needs {}; skipping actor update",
                buffer.len(),
                b
            );
            return Ok(None);
        }
        let batch = buffer.sample(b, rng);
        let (s, _, _, _, _) = batch_tensors(&batch, &self.cfg)?;
        let eps_vals: Vec<f64> = (0..b * self.cfg.action_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let eps = Tensor::new(vec![b, self.cfg.action_dim], eps_vals)?;
        let (a, logp) = self.sample_graph(&s, &eps)?;
        let sa = Tensor::concat(&[s, a], 1)?;
        let q = min_op(&self.q1.forward(&sa)?, &self.q2.forward(&sa)?)?;
        let loss = logp.mul_scalar(self.cfg.alpha_ent).sub(&q)?.mean();
        self.actor_opt.zero_grad();
        self.critic_opt.zero_grad(); // Q(s,a) backward also reaches the critics
        loss.backward()?;
        let val = loss.item();
        self.actor_opt.step()?;
        self.critic_opt.zero_grad();
        Ok(Some(val))
    }

    fn soft_update(&mut self) {
        let tau = self.cfg.soft_tau;
        let pairs = [
            (&self.target_q1, &self.q1),
            (&self.target_q2, &self.q2),
        ];
        for (tgt, src) in pairs {
            for (tp, sp) in tgt
                .weights
                .iter()
                .chain(&tgt.biases)
                .zip(src.weights.iter().chain(&src.biases))
            {
                let mixed: Vec<f64> = tp
                    .values()
                    .iter()
                    .zip(sp.values())
                    .map(|(t, s)| (1.0 - tau) * t + tau * s)
                    .collect();
                tp.set_values(mixed).expect("soft update");
            }
        }
    }

    /// Copy the live critics into the target nets (after a checkpoint load).
    pub fn sync_targets(&self) {
        for (tgt, src) in [(&self.target_q1, &self.q1), (&self.target_q2, &self.q2)] {
            for (tp, sp) in tgt
                .weights
                .iter()
                .chain(&tgt.biases)
                .zip(src.weights.iter().chain(&src.biases))
            {
                tp.set_values(sp.values()).expect("target sync");
            }
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.actor
            .params()
            .into_iter()
            .chain(self.q1.params())
            .chain(self.q2.params())
            .collect()
    }
}

/// min(x, y) = x − relu(x − y), elementwise.
fn min_op(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    x.sub(&x.sub(y)?.relu())
}

fn batch_tensors(
    batch: &[&Transition],
    cfg: &SacConfig,
) -> Result<(Tensor, Tensor, Tensor, Tensor, Tensor)> {
    let b = batch.len();
    let mut s = Vec::with_capacity(b * cfg.state_dim);
    let mut a = Vec::with_capacity(b * cfg.action_dim);
    let mut r = Vec::with_capacity(b);
    let mut sn = Vec::with_capacity(b * cfg.state_dim);
    let mut d = Vec::with_capacity(b);
    for t in batch {
        if t.state.len() != cfg.state_dim
            || t.next_state.len() != cfg.state_dim
            || t.action.len() != cfg.action_dim
        {
            return Err(Error::invalid("transition dims do not match the policy"));
        }
        s.extend_from_slice(&t.state);
        a.extend_from_slice(&t.action);
        r.push(t.reward);
        sn.extend_from_slice(&t.next_state);
        d.push(t.done);
    }
    Ok((
        Tensor::new(vec![b, cfg.state_dim], s)?,
        Tensor::new(vec![b, cfg.action_dim], a)?,
        Tensor::new(vec![b, 1], r)?,
        Tensor::new(vec![b, cfg.state_dim], sn)?,
        Tensor::new(vec![b, 1], d)?,
    ))
}

/// Mean over all rows of H (time and nodes flattened into rows): the global
/// state vector for the controller. Length equals the hidden width.
pub fn summarize_state(h: &Tensor) -> Result<Vec<f64>> {
    let shape = h.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::invalid(format!(
            "summarize_state wants a nonempty 2-D tensor, got {shape:?}"
        )));
    }
    Ok(h.mean_axis(0)?.values())
}

/// H ← H·(1+action); scalar action scales everything, a vector scales each
/// feature column. action = 0 leaves H bit-identical.
pub fn modulate(h: &Tensor, action: &[f64]) -> Result<Tensor> {
    let shape = h.shape();
    match action.len() {
        1 => Ok(h.mul_scalar(1.0 + action[0])),
        n if shape.len() == 2 && n == shape[1] => {
            let mut factor = Vec::with_capacity(h.numel());
            for _ in 0..shape[0] {
                factor.extend(action.iter().map(|a| 1.0 + a));
            }
            h.mul(&Tensor::new(shape, factor)?)
        }
        n => Err(Error::invalid(format!(
            "action length {n} fits neither a scalar nor the {shape:?} feature width"
        ))),
    }
}

/// reward = −MSE(y_pred, y_true).
pub fn compute_sac_reward(y_pred: &[f64], y_true: &[f64]) -> Result<f64> {
    if y_pred.len() != y_true.len() || y_pred.is_empty() {
        return Err(Error::invalid(format!(
            "reward wants equal nonempty lengths, got {} and {}",
            y_pred.len(),
            y_true.len()
        )));
    }
    let mse = y_pred
        .iter()
        .zip(y_true)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / y_pred.len() as f64;
    Ok(-mse)
}
