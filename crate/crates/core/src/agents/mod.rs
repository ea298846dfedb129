//! Asynchronous advantage actor-critic with pluggable reward shaping.
//!
//! Shaping strategies implement [`Shaper`] and are looked up by name in a
//! [`ShaperRegistry`]: `none` (environment reward only), `subtask`
//! (hand-coded detectors) and `narration` (the embedding model).

mod envs;
mod net;
mod rollout;
mod shaping;
mod shared;
mod train;

pub use envs::{AgentEnv, ConstantRewardEnv, MicroBuildEnv};
pub use net::{AgentNet, PolicyOutput, Sampled, AUX_LEN, HEAD_LEN, HIDDEN};
pub use rollout::{
    a3c_loss, a3c_loss_value, compute_returns, discounted_returns, max_step_entropy, LossCoefficients, LossStats,
    Rollout, Transition,
};
pub use shaping::{
    InstructionTracker, NarrationShaper, NoShaping, ShapeStep, Shaper, ShaperContext, ShaperFactory, ShaperRegistry,
    SubtaskShaper,
};
pub use shared::{clip_grad_norm, SharedParams};
pub use train::{evaluate, run_episode, train, train_with_env, A3cConfig, EpisodeStats, Policy, RunRecord, TrainOutput};

use std::path::Path;

use thiserror::Error;

use crate::env::EnvError;
use crate::mem::MemError;
use crate::nn::{load_params, save_params, ModelHeader, NnError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite loss or gradient at rollout timestep {timestep}")]
    NonFinite { timestep: usize },
    #[error("no shaping strategy named {0:?}")]
    UnknownShaper(String),
    #[error("narration shaping needs a trained embedding model")]
    MissingMem,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("worker failed: {0}")]
    Worker(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

const CHECKPOINT_KIND: &str = "agent-net";

impl AgentNet {
    fn checkpoint_header(&self, meta: serde_json::Value) -> ModelHeader {
        ModelHeader {
            kind: CHECKPOINT_KIND.into(),
            layers: self.layer_specs(),
            meta,
        }
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<(), AgentError> {
        Ok(save_params(path, &self.checkpoint_header(meta), self)?)
    }

    /// Loads a checkpoint; returns the network and the header metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), AgentError> {
        let mut net = AgentNet::new(0);
        let expected = net.checkpoint_header(serde_json::Value::Null);
        let header = load_params(path, &expected, &mut net)?;
        Ok((net, header.meta))
    }
}
