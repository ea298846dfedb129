use sha2::{Digest, Sha256};

use super::{Cell, CommandId, EventSet, GameState, Selection, GRID};

/// Unit-type layers (base, mineral, worker, depot, barracks, marine) plus one selection layer.
pub const LAYERS_PER_FRAME: usize = 7;
pub const FRAMES: usize = 2;
pub const CHANNELS: usize = LAYERS_PER_FRAME * FRAMES;
pub const NONSPATIAL_LEN: usize = 10;
const PLANE: usize = GRID * GRID;

/// Encoder input: two stacked frames `(t-1, t)` of binary feature layers plus
/// a normalized non-spatial vector for frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    spatial: Vec<u8>,
    nonspatial: [f64; NONSPATIAL_LEN],
}

fn layer_of(cell: Cell) -> Option<usize> {
    match cell {
        Cell::Empty => None,
        Cell::Base => Some(0),
        Cell::Mineral => Some(1),
        Cell::Worker => Some(2),
        Cell::Depot => Some(3),
        Cell::Barracks => Some(4),
        Cell::Marine => Some(5),
    }
}

fn write_frame(state: &GameState, out: &mut [u8]) {
    for (i, &cell) in state.grid.iter().enumerate() {
        if let Some(l) = layer_of(cell) {
            out[l * PLANE + i] = 1;
        }
    }
    match state.selection {
        Selection::Worker(p) | Selection::Barracks(p) => out[6 * PLANE + p.index()] = 1,
        Selection::None => {}
    }
}

impl Observation {
    /// At an episode start pass the same state twice.
    pub fn encode(prev: &GameState, state: &GameState) -> Self {
        let mut spatial = vec![0u8; CHANNELS * PLANE];
        let (older, newer) = spatial.split_at_mut(LAYERS_PER_FRAME * PLANE);
        write_frame(prev, older);
        write_frame(state, newer);
        let c = &state.counts;
        let sel = match state.selection {
            Selection::None => [1.0, 0.0, 0.0],
            Selection::Worker(_) => [0.0, 1.0, 0.0],
            Selection::Barracks(_) => [0.0, 0.0, 1.0],
        };
        let raw = [
            f64::from(state.minerals) / 1000.0,
            f64::from(state.supply_used) / 64.0,
            f64::from(state.supply_cap) / 64.0,
            f64::from(c.workers) / 32.0,
            f64::from(c.depots) / 32.0,
            f64::from(c.barracks) / 32.0,
            f64::from(c.marines) / 32.0,
            sel[0],
            sel[1],
            sel[2],
        ];
        Self {
            spatial,
            nonspatial: raw.map(|v| v.clamp(0.0, 1.0)),
        }
    }

    pub fn initial(state: &GameState) -> Self {
        Self::encode(state, state)
    }

    /// Rebuilds an observation from stored parts (dataset files).
    pub fn from_parts(spatial: Vec<u8>, nonspatial: [f64; NONSPATIAL_LEN]) -> Option<Self> {
        (spatial.len() == CHANNELS * PLANE && spatial.iter().all(|&b| b <= 1)).then_some(Self { spatial, nonspatial })
    }

    /// `[CHANNELS, GRID, GRID]` in channel-major order, entries 0 or 1.
    pub fn spatial(&self) -> &[u8] {
        &self.spatial
    }

    pub fn nonspatial(&self) -> &[f64; NONSPATIAL_LEN] {
        &self.nonspatial
    }

    pub fn at(&self, channel: usize, x: usize, y: usize) -> u8 {
        self.spatial[channel * PLANE + y * GRID + x]
    }

    pub fn write_spatial(&self, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(&self.spatial) {
            *o = f64::from(b);
        }
    }

    /// Re-derives detector events from the two stacked frames alone: unit
    /// layers that gained cells, and a selection that moved onto a worker or
    /// barracks.
    pub fn frame_events(&self) -> EventSet {
        let count = |frame: usize, layer: usize| {
            let off = (frame * LAYERS_PER_FRAME + layer) * PLANE;
            self.spatial[off..off + PLANE].iter().filter(|&&b| b == 1).count()
        };
        let mut events = EventSet::default();
        for (layer, cmd) in [(3, CommandId::BuildDepot), (4, CommandId::BuildBarracks), (5, CommandId::TrainMarine)] {
            if count(1, layer) > count(0, layer) {
                events.insert(cmd);
            }
        }
        let sel_old = &self.spatial[6 * PLANE..7 * PLANE];
        let sel_new = &self.spatial[(LAYERS_PER_FRAME + 6) * PLANE..(LAYERS_PER_FRAME + 7) * PLANE];
        if sel_old != sel_new {
            if let Some(i) = sel_new.iter().position(|&b| b == 1) {
                let newer = LAYERS_PER_FRAME * PLANE;
                if self.spatial[newer + 2 * PLANE + i] == 1 {
                    events.insert(CommandId::SelectWorker);
                } else if self.spatial[newer + 4 * PLANE + i] == 1 {
                    events.insert(CommandId::SelectBarracks);
                }
            }
        }
        events
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(&self.spatial);
        for v in self.nonspatial {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;

    #[test]
    fn initial_observation() {
        let s = GameState::reset(0);
        let o = Observation::initial(&s);
        let worker_layer = LAYERS_PER_FRAME + 2;
        let count = |c: usize| (0..PLANE).filter(|&i| o.spatial()[c * PLANE + i] == 1).count();
        assert_eq!(count(worker_layer), 5);
        assert_eq!(count(2), 5);
        assert_eq!(count(6), 0);
        assert_eq!(count(LAYERS_PER_FRAME + 6), 0);
        assert_eq!(o.nonspatial()[0], 0.05);
        assert_eq!(&o.nonspatial()[7..], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn selection_layer_after_select_worker() {
        let prev = GameState::reset(0);
        let mut s = prev.clone();
        s.step(Action::SelectWorker).unwrap();
        let o = Observation::encode(&prev, &s);
        let sel_now: Vec<usize> = (0..PLANE).filter(|&i| o.spatial()[(LAYERS_PER_FRAME + 6) * PLANE + i] == 1).collect();
        let Selection::Worker(p) = s.selection else { panic!() };
        assert_eq!(sel_now, vec![p.index()]);
        assert!((0..PLANE).all(|i| o.spatial()[6 * PLANE + i] == 0));
    }

    #[test]
    fn mineral_feature_saturates() {
        let mut s = GameState::reset(0);
        s.minerals = 1500;
        let o = Observation::initial(&s);
        assert_eq!(o.nonspatial()[0], 1.0);
        s.minerals = 370;
        assert_eq!(Observation::initial(&s).nonspatial()[0], 0.37);
    }
}
