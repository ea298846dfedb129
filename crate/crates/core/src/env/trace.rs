use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Action, CommandId, Counts, EventSet};

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u32,
    pub action: Action,
    pub reward: f64,
    pub counts: Counts,
    pub events: Vec<CommandId>,
}

impl TrajectoryRecord {
    pub fn new(step: u32, action: Action, reward: f64, counts: Counts, events: EventSet) -> Self {
        Self {
            step,
            action,
            reward,
            counts,
            events: events.iter().collect(),
        }
    }
}

/// Writes one JSON object per line.
pub fn write_trajectory(w: &mut impl Write, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
