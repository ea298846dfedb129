use serde::{Deserialize, Serialize};

use super::net::{entropy, AgentNet, PolicyOutput, AUX_LEN, HEAD_LEN, HEAD_OFFSETS};
use super::AgentError;
use crate::env::{Action, ActionMask, Observation};
use crate::nn::{LstmState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossCoefficients {
    pub gamma: f64,
    pub value: f64,
    pub entropy: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            value: 0.5,
            entropy: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    pub aux: Vec<f64>,
    pub mask: ActionMask,
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
    /// Reward actually optimized (environment reward plus shaping bonus).
    pub reward: f64,
    pub env_reward: f64,
    pub done: bool,
}

/// A contiguous segment of one episode, at most `T` steps long.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Recurrent state before the first step.
    pub init: LstmState,
    pub steps: Vec<Transition>,
    /// `V(s_T)` for the state after the last step, or 0 if it was terminal.
    pub bootstrap: f64,
}

/// n-step returns `R_t = r_t + γ R_{t+1}` seeded with `bootstrap`, and advantages `R_t - V_t`.
pub fn discounted_returns(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    let adv = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    (returns, adv)
}

pub fn compute_returns(rollout: &Rollout, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let rewards: Vec<f64> = rollout.steps.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = rollout.steps.iter().map(|s| s.value).collect();
    discounted_returns(&rewards, &values, rollout.bootstrap, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Per-step loss terms and the gradient with respect to the head row.
fn step_terms(
    row: &[f64],
    step: &Transition,
    ret: f64,
    adv: f64,
    c: &LossCoefficients,
    grad: Option<&mut [f64]>,
) -> (f64, f64, f64) {
    let (xo, yo, vo) = HEAD_OFFSETS;
    let mask = step.mask.to_bools();
    let p = PolicyOutput::from_logits(row, step.mask);
    let spatial = step.action.target();
    let log_prob = p.log_prob(&step.action);
    let h = p.entropy_for(&step.action);
    let v = row[vo];
    let policy = -log_prob * adv;
    let value = (ret - v) * (ret - v);
    if let Some(g) = grad {
        // d(-A log p_a - c_e H)/dz_j = A (p_j - 1[j=a]) + c_e p_j (log p_j + H_head)
        let mut head = |range: std::ops::Range<usize>, probs: &[f64], chosen: usize, allowed: Option<&[bool]>| {
            let hh = entropy(probs);
            for (k, j) in range.enumerate() {
                if allowed.is_none_or(|m| m[k]) && probs[k] > 0.0 {
                    let onehot = if k == chosen { 1.0 } else { 0.0 };
                    g[j] = adv * (probs[k] - onehot) + c.entropy * probs[k] * (probs[k].ln() + hh);
                }
            }
        };
        head(0..xo, &p.id_probs, step.action.id(), Some(&mask));
        if let Some((x, y)) = spatial {
            head(xo..yo, &p.x_probs, x, None);
            head(yo..vo, &p.y_probs, y, None);
        }
        g[vo] = -2.0 * c.value * (ret - v);
    }
    (policy, value, h)
}

fn check_step(t: usize, vals: &[f64]) -> Result<(), AgentError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AgentError::NonFinite { timestep: t })
    }
}

/// Runs the batched forward pass, accumulates gradients of
/// `Σ_t [-log π(a_t) A_t + c_v (R_t - V_t)² - c_e H_t]` into `net`, and
/// returns the loss. Advantages are treated as constants.
pub fn a3c_loss(
    net: &mut AgentNet,
    rollout: &Rollout,
    returns: &[f64],
    advantages: &[f64],
    c: &LossCoefficients,
) -> Result<LossStats, AgentError> {
    use crate::nn::Parameterized;
    net.zero_grads();
    let obs: Vec<&Observation> = rollout.steps.iter().map(|s| &s.observation).collect();
    let aux: Vec<f64> = rollout.steps.iter().flat_map(|s| s.aux.iter().copied()).collect();
    let out = net.forward_sequence(&obs, &aux, &rollout.init)?;
    let mut grad = vec![0.0; out.len()];
    let mut stats = LossStats::default();
    for (t, step) in rollout.steps.iter().enumerate() {
        let row = &out.data()[t * HEAD_LEN..(t + 1) * HEAD_LEN];
        let (p, v, h) = step_terms(
            row,
            step,
            returns[t],
            advantages[t],
            c,
            Some(&mut grad[t * HEAD_LEN..(t + 1) * HEAD_LEN]),
        );
        check_step(t, &[p, v, h])?;
        check_step(t, &grad[t * HEAD_LEN..(t + 1) * HEAD_LEN])?;
        stats.policy += p;
        stats.value += v;
        stats.entropy += h;
    }
    stats.loss = stats.policy + c.value * stats.value - c.entropy * stats.entropy;
    net.backward_sequence(&Tensor::new(out.shape().to_vec(), grad)?)?;
    Ok(stats)
}

/// The same loss recomputed step by step through the inference path.
pub fn a3c_loss_value(
    net: &AgentNet,
    rollout: &Rollout,
    returns: &[f64],
    advantages: &[f64],
    c: &LossCoefficients,
) -> Result<f64, AgentError> {
    let mut state = rollout.init.clone();
    let mut total = 0.0;
    for (t, step) in rollout.steps.iter().enumerate() {
        debug_assert_eq!(step.aux.len(), AUX_LEN);
        let (row, next) = net.step(&step.observation, &step.aux, &state)?;
        let (p, v, h) = step_terms(&row, step, returns[t], advantages[t], c, None);
        total += p + c.value * v - c.entropy * h;
        state = next;
    }
    Ok(total)
}

/// Upper bound on the per-step entropy: all three heads uniform.
pub fn max_step_entropy() -> f64 {
    (crate::env::NUM_ACTIONS as f64).ln() + 2.0 * (crate::env::GRID as f64).ln()
}

#[cfg(test)]
fn masked_uniform(mask: ActionMask) -> Vec<f64> {
    super::net::softmax(&[0.0; crate::env::NUM_ACTIONS], Some(&mask.to_bools()))
}
