//! MicroBuild: a deterministic, seedable build-order mini-game.
//!
//! Workers mine automatically; the player selects a worker to place supply
//! depots (supply cap) and barracks, then selects a barracks to train
//! marines. The only environment reward is +1 per completed marine.

mod action;
mod detect;
mod expert;
mod observation;
mod state;
mod trace;

pub use action::{Action, ActionKind, ActionMask, NUM_ACTIONS};
pub use detect::{detect, CommandId, EventSet, NUM_COMMANDS};
pub use expert::{random_legal_action, scripted_expert};
pub use observation::{Observation, CHANNELS, LAYERS_PER_FRAME, NONSPATIAL_LEN};
pub use state::{Cell, Construction, Counts, GameState, Pos, Selection, StepOutcome, Structure, Training};
pub use trace::{write_trajectory, TrajectoryRecord};

use thiserror::Error;

pub const GRID: usize = 16;
pub const DEFAULT_HORIZON: u32 = 720;
pub const START_MINERALS: u32 = 50;
pub const START_WORKERS: usize = 5;
pub const DEPOT_COST: u32 = 100;
pub const BARRACKS_COST: u32 = 150;
pub const MARINE_COST: u32 = 50;
pub const DEPOT_TIME: u32 = 20;
pub const BARRACKS_TIME: u32 = 30;
pub const MARINE_TIME: u32 = 15;
pub const SUPPLY_PER_DEPOT: u32 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("step called on a finished episode (step {step} of {horizon})")]
    EpisodeOver { step: u32, horizon: u32 },
    #[error("spatial argument ({x}, {y}) outside the {GRID}x{GRID} grid")]
    OutOfBounds { x: usize, y: usize },
    #[error("unknown action id {0}")]
    UnknownAction(usize),
}

/// Functional form of [`GameState::step`]: returns the successor state.
pub fn step(state: &GameState, action: Action) -> Result<(GameState, f64, bool), EnvError> {
    let mut next = state.clone();
    let out = next.step(action)?;
    Ok((next, out.reward, out.done))
}
