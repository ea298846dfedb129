use crate::env::{Action, ActionKind, ActionMask, EnvError, GameState};

/// The environment interface an agent worker drives.
pub trait AgentEnv: Send {
    fn reset(&mut self, seed: u64);
    fn state(&self) -> &GameState;
    fn legal(&self) -> ActionMask;
    /// Applies one action and returns the environment reward and the done flag.
    fn step(&mut self, action: Action) -> Result<(f64, bool), EnvError>;
}

/// The MicroBuild game itself.
#[derive(Debug, Clone)]
pub struct MicroBuildEnv {
    state: GameState,
    horizon: u32,
}

impl MicroBuildEnv {
    pub fn new(horizon: u32) -> Self {
        Self {
            state: GameState::reset_with_horizon(0, horizon),
            horizon,
        }
    }
}

impl AgentEnv for MicroBuildEnv {
    fn reset(&mut self, seed: u64) {
        self.state = GameState::reset_with_horizon(seed, self.horizon);
    }

    fn state(&self) -> &GameState {
        &self.state
    }

    fn legal(&self) -> ActionMask {
        self.state.legal_actions()
    }

    fn step(&mut self, action: Action) -> Result<(f64, bool), EnvError> {
        let out = self.state.step(action)?;
        Ok((out.reward, out.done))
    }
}

/// Degenerate variant: only NoOp is legal, every step pays `reward`, and
/// episodes never end. Used to check value learning against `r / (1 - γ)`.
#[derive(Debug, Clone)]
pub struct ConstantRewardEnv {
    state: GameState,
    reward: f64,
}

impl ConstantRewardEnv {
    pub fn new(reward: f64) -> Self {
        Self {
            state: GameState::reset_with_horizon(0, u32::MAX),
            reward,
        }
    }
}

impl AgentEnv for ConstantRewardEnv {
    fn reset(&mut self, seed: u64) {
        self.state = GameState::reset_with_horizon(seed, u32::MAX);
    }

    fn state(&self) -> &GameState {
        &self.state
    }

    fn legal(&self) -> ActionMask {
        let mut m = ActionMask::default();
        m.set(ActionKind::NoOp);
        m
    }

    fn step(&mut self, _action: Action) -> Result<(f64, bool), EnvError> {
        self.state.step(Action::NoOp)?;
        Ok((self.reward, false))
    }
}
