use serde::{Deserialize, Serialize};

use super::{EnvError, GRID};

pub const NUM_ACTIONS: usize = 6;

/// Action identifier, the discrete head of the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    NoOp = 0,
    SelectWorker = 1,
    BuildDepot = 2,
    BuildBarracks = 3,
    SelectBarracks = 4,
    TrainMarine = 5,
}

impl ActionKind {
    pub const ALL: [ActionKind; NUM_ACTIONS] = [
        ActionKind::NoOp,
        ActionKind::SelectWorker,
        ActionKind::BuildDepot,
        ActionKind::BuildBarracks,
        ActionKind::SelectBarracks,
        ActionKind::TrainMarine,
    ];

    pub fn from_id(id: usize) -> Result<Self, EnvError> {
        Self::ALL.get(id).copied().ok_or(EnvError::UnknownAction(id))
    }

    pub fn id(self) -> usize {
        self as usize
    }

    /// Whether this kind carries `(x, y)` arguments.
    pub fn is_spatial(self) -> bool {
        matches!(self, ActionKind::BuildDepot | ActionKind::BuildBarracks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    NoOp,
    SelectWorker,
    BuildDepot { x: u8, y: u8 },
    BuildBarracks { x: u8, y: u8 },
    SelectBarracks,
    TrainMarine,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::NoOp => ActionKind::NoOp,
            Action::SelectWorker => ActionKind::SelectWorker,
            Action::BuildDepot { .. } => ActionKind::BuildDepot,
            Action::BuildBarracks { .. } => ActionKind::BuildBarracks,
            Action::SelectBarracks => ActionKind::SelectBarracks,
            Action::TrainMarine => ActionKind::TrainMarine,
        }
    }

    pub fn id(&self) -> usize {
        self.kind().id()
    }

    /// Assembles an action from the three policy heads; the spatial pair is
    /// ignored for non-spatial kinds.
    pub fn from_parts(kind: ActionKind, x: usize, y: usize) -> Result<Self, EnvError> {
        if kind.is_spatial() && (x >= GRID || y >= GRID) {
            return Err(EnvError::OutOfBounds { x, y });
        }
        Ok(match kind {
            ActionKind::NoOp => Action::NoOp,
            ActionKind::SelectWorker => Action::SelectWorker,
            ActionKind::BuildDepot => Action::BuildDepot { x: x as u8, y: y as u8 },
            ActionKind::BuildBarracks => Action::BuildBarracks { x: x as u8, y: y as u8 },
            ActionKind::SelectBarracks => Action::SelectBarracks,
            ActionKind::TrainMarine => Action::TrainMarine,
        })
    }

    pub fn target(&self) -> Option<(usize, usize)> {
        match *self {
            Action::BuildDepot { x, y } | Action::BuildBarracks { x, y } => Some((x as usize, y as usize)),
            _ => None,
        }
    }
}

/// Bit `i` set iff some instantiation of action id `i` is legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActionMask(pub u8);

impl ActionMask {
    pub fn set(&mut self, kind: ActionKind) {
        self.0 |= 1 << kind.id();
    }

    pub fn contains(self, kind: ActionKind) -> bool {
        self.0 & (1 << kind.id()) != 0
    }

    pub fn kinds(self) -> impl Iterator<Item = ActionKind> {
        ActionKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn to_bools(self) -> [bool; super::NUM_ACTIONS] {
        let mut out = [false; super::NUM_ACTIONS];
        for k in self.kinds() {
            out[k.id()] = true;
        }
        out
    }
}
