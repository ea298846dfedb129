use serde::{Deserialize, Serialize};

use super::{GameState, Selection};

pub const NUM_COMMANDS: usize = 5;

/// Interim goals, one per narration command and detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandId {
    SelectWorker = 0,
    BuildDepot = 1,
    BuildBarracks = 2,
    SelectBarracks = 3,
    TrainMarine = 4,
}

impl CommandId {
    pub const ALL: [CommandId; NUM_COMMANDS] = [
        CommandId::SelectWorker,
        CommandId::BuildDepot,
        CommandId::BuildBarracks,
        CommandId::SelectBarracks,
        CommandId::TrainMarine,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CommandId::SelectWorker => "select-worker",
            CommandId::BuildDepot => "build-depot",
            CommandId::BuildBarracks => "build-barracks",
            CommandId::SelectBarracks => "select-barracks",
            CommandId::TrainMarine => "train-marine",
        }
    }
}

/// Set of detector events fired by one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct EventSet(pub u8);

impl EventSet {
    pub fn insert(&mut self, c: CommandId) {
        self.0 |= 1 << c.index();
    }

    pub fn contains(self, c: CommandId) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = CommandId> {
        CommandId::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    /// The single event, if exactly one fired.
    pub fn single(self) -> Option<CommandId> {
        if self.len() == 1 {
            self.iter().next()
        } else {
            None
        }
    }
}

/// Rule-based goal detectors over a transition. Structure events fire on
/// completion (the count increasing), selection events when the selection
/// changes to a unit of that type.
pub fn detect(prev: &GameState, next: &GameState) -> EventSet {
    let mut events = EventSet::default();
    let (a, b) = (&prev.counts, &next.counts);
    if b.depots > a.depots {
        events.insert(CommandId::BuildDepot);
    }
    if b.barracks > a.barracks {
        events.insert(CommandId::BuildBarracks);
    }
    if b.marines > a.marines {
        events.insert(CommandId::TrainMarine);
    }
    if prev.selection != next.selection {
        match next.selection {
            Selection::Worker(_) => events.insert(CommandId::SelectWorker),
            Selection::Barracks(_) => events.insert(CommandId::SelectBarracks),
            Selection::None => {}
        }
    }
    events
}
