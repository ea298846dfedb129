use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{StateTrunk, TRUNK_OUT};
use crate::env::{Action, ActionKind, ActionMask, Observation, GRID, NUM_ACTIONS};
use crate::mem::EMBED_DIM;
use crate::nn::{
    concat_columns, split_columns, Dense, Layer, LayerSpec, Lstm, LstmState, Param, Parameterized, Sequential, Tensor,
};

/// Width of the auxiliary input (`X_s ⊕ X_c`, zeros when unused).
pub const AUX_LEN: usize = 2 * EMBED_DIM;
pub const HIDDEN: usize = 128;
/// Output layout: action-id logits, x logits, y logits, value.
pub const HEAD_LEN: usize = NUM_ACTIONS + 2 * GRID + 1;
const X_OFF: usize = NUM_ACTIONS;
const Y_OFF: usize = NUM_ACTIONS + GRID;
const V_OFF: usize = NUM_ACTIONS + 2 * GRID;

/// Actor-critic network: state trunk ⊕ aux → dense → LSTM → policy and value heads.
#[derive(Debug, Clone)]
pub struct AgentNet {
    pub trunk: StateTrunk,
    pub fc: Sequential,
    pub lstm: Lstm,
    pub heads: Sequential,
}

/// Distribution parameters for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Action-id probabilities after masking; zero on illegal ids.
    pub id_probs: Vec<f64>,
    pub x_probs: Vec<f64>,
    pub y_probs: Vec<f64>,
    pub value: f64,
}

/// A sampled action with its joint log-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub action: Action,
    pub log_prob: f64,
}

pub(crate) fn softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if allowed(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Entropy of a distribution, ignoring zero-probability entries.
pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn sample_index(p: &[f64], rng: &mut impl Rng) -> usize {
    let r = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last = i;
            if r < acc {
                return i;
            }
        }
    }
    last
}

impl PolicyOutput {
    pub fn from_logits(row: &[f64], mask: ActionMask) -> Self {
        let m = mask.to_bools();
        Self {
            id_probs: softmax(&row[..X_OFF], Some(&m)),
            x_probs: softmax(&row[X_OFF..Y_OFF], None),
            y_probs: softmax(&row[Y_OFF..V_OFF], None),
            value: row[V_OFF],
        }
    }

    /// Samples an action id, then x and y for spatial actions. The joint
    /// log-probability only includes heads that were used.
    pub fn sample(&self, rng: &mut impl Rng) -> Sampled {
        let id = sample_index(&self.id_probs, rng);
        let kind = ActionKind::ALL[id];
        let mut log_prob = self.id_probs[id].ln();
        let (mut x, mut y) = (0, 0);
        if kind.is_spatial() {
            x = sample_index(&self.x_probs, rng);
            y = sample_index(&self.y_probs, rng);
            log_prob += self.x_probs[x].ln() + self.y_probs[y].ln();
        }
        Sampled {
            action: Action::from_parts(kind, x, y).expect("sampled inside the grid"),
            log_prob,
        }
    }

    pub fn log_prob(&self, action: &Action) -> f64 {
        let mut lp = self.id_probs[action.id()].ln();
        if let Some((x, y)) = action.target() {
            lp += self.x_probs[x].ln() + self.y_probs[y].ln();
        }
        lp
    }

    /// Summed entropy of the heads an action of this kind would use.
    pub fn entropy_for(&self, action: &Action) -> f64 {
        let mut h = entropy(&self.id_probs);
        if action.target().is_some() {
            h += entropy(&self.x_probs) + entropy(&self.y_probs);
        }
        h
    }
}

impl AgentNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = StateTrunk::new(&mut rng);
        let fc = Sequential::new(
            vec![TRUNK_OUT + AUX_LEN],
            vec![Layer::Dense(Dense::new(TRUNK_OUT + AUX_LEN, HIDDEN, &mut rng)), Layer::relu()],
        )
        .expect("fixed architecture");
        let lstm = Lstm::new(HIDDEN, HIDDEN, &mut rng);
        let mut head = Dense::new(HIDDEN, HEAD_LEN, &mut rng);
        // Zero logits give uniform heads and a zero value at initialization.
        head.weight.value.iter_mut().for_each(|w| *w = 0.0);
        let heads = Sequential::new(vec![HIDDEN], vec![Layer::Dense(head)]).expect("fixed architecture");
        Self { trunk, fc, lstm, heads }
    }

    pub fn initial_state() -> LstmState {
        LstmState::zeros(1, HIDDEN)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut v = self.trunk.spatial.specs();
        v.extend(self.trunk.nonspatial.specs());
        v.extend(self.fc.specs());
        v.push(LayerSpec::Lstm {
            inputs: HIDDEN,
            hidden: HIDDEN,
        });
        v.extend(self.heads.specs());
        v
    }

    /// One inference step: returns the raw head row and the next hidden state.
    pub fn step(&self, obs: &Observation, aux: &[f64], state: &LstmState) -> crate::nn::Result<(Vec<f64>, LstmState)> {
        let t = self.trunk.infer(&[obs])?;
        let a = Tensor::new(vec![1, AUX_LEN], aux.to_vec())?;
        let h = self.fc.infer(&concat_columns(&[&t, &a])?)?;
        let next = self.lstm.step(h.data(), state)?;
        let out = self.heads.infer(&Tensor::new(vec![1, HIDDEN], next.h.clone())?)?;
        Ok((out.into_data(), next))
    }

    /// Caching forward pass over a whole rollout from `init`; returns `[T, HEAD_LEN]`.
    pub fn forward_sequence(
        &mut self,
        obs: &[&Observation],
        aux: &[f64],
        init: &LstmState,
    ) -> crate::nn::Result<Tensor> {
        let t = obs.len();
        let trunk = self.trunk.forward(obs)?;
        let a = Tensor::new(vec![t, AUX_LEN], aux.to_vec())?;
        let h = self.fc.forward(&concat_columns(&[&trunk, &a])?)?;
        let (hs, _) = self.lstm.forward(&h.reshape(vec![t, 1, HIDDEN])?, init)?;
        self.heads.forward(&hs.reshape(vec![t, HIDDEN])?)
    }

    /// Accumulates parameter gradients from a `[T, HEAD_LEN]` output gradient.
    pub fn backward_sequence(&mut self, d_out: &Tensor) -> crate::nn::Result<()> {
        let t = d_out.dim(0);
        let dhs = self.heads.backward(d_out)?;
        let (dx, _) = self.lstm.backward(&dhs.reshape(vec![t, 1, HIDDEN])?, None)?;
        let dfc = self.fc.backward(&dx.reshape(vec![t, HIDDEN])?)?;
        let parts = split_columns(&dfc, &[TRUNK_OUT, AUX_LEN])?;
        self.trunk.backward(&parts[0])
    }
}

impl Parameterized for AgentNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.trunk.visit_params(f);
        self.fc.visit_params(f);
        self.lstm.visit_params(f);
        self.heads.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.trunk.visit_params_mut(f);
        self.fc.visit_params_mut(f);
        self.lstm.visit_params_mut(f);
        self.heads.visit_params_mut(f);
    }
}

pub(crate) const HEAD_OFFSETS: (usize, usize, usize) = (X_OFF, Y_OFF, V_OFF);
