use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{Action, ActionKind, ActionMask};
use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Base,
    Mineral,
    Worker,
    Depot,
    Barracks,
    Marine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: u8,
    pub y: u8,
}

impl Pos {
    pub fn new(x: usize, y: usize) -> Self {
        debug_assert!(x < GRID && y < GRID);
        Self { x: x as u8, y: y as u8 }
    }

    pub fn index(self) -> usize {
        self.y as usize * GRID + self.x as usize
    }

    fn from_index(i: usize) -> Self {
        Self::new(i % GRID, i / GRID)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selection {
    None,
    Worker(Pos),
    Barracks(Pos),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Structure {
    Depot,
    Barracks,
}

/// A structure being built; the cell is reserved but shows as empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Construction {
    pub pos: Pos,
    pub kind: Structure,
    pub remaining: u32,
    pub worker: Pos,
}

/// A marine in production at one barracks. `remaining == 0` means it is
/// finished but waiting for a free cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Training {
    pub barracks: Pos,
    pub remaining: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Counts {
    pub workers: u32,
    pub depots: u32,
    pub barracks: u32,
    pub marines: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// Minerals actually spent this step (0 when the action degraded to a no-op).
    pub spent: u32,
    /// Whether the requested action was applied.
    pub applied: bool,
}

/// Full simulator state. Supply counts marines completed or in production.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GameState {
    pub grid: [Cell; GRID * GRID],
    pub minerals: u32,
    pub supply_used: u32,
    pub supply_cap: u32,
    pub selection: Selection,
    pub constructions: Vec<Construction>,
    pub training: Vec<Training>,
    pub counts: Counts,
    pub step: u32,
    pub horizon: u32,
}

const BASE: Pos = Pos { x: 3, y: 3 };

impl GameState {
    pub fn reset(seed: u64) -> Self {
        Self::reset_with_horizon(seed, DEFAULT_HORIZON)
    }

    /// One base, a column of mineral patches and five workers scattered
    /// (by `seed`) in the mining area next to the base.
    pub fn reset_with_horizon(seed: u64, horizon: u32) -> Self {
        let mut grid = [Cell::Empty; GRID * GRID];
        grid[BASE.index()] = Cell::Base;
        for y in 0..8 {
            grid[Pos::new(0, y).index()] = Cell::Mineral;
        }
        let mut candidates: Vec<Pos> = (0..7)
            .flat_map(|y| (1..7).map(move |x| Pos::new(x, y)))
            .filter(|p| grid[p.index()] == Cell::Empty)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        candidates.shuffle(&mut rng);
        for p in candidates.into_iter().take(START_WORKERS) {
            grid[p.index()] = Cell::Worker;
        }
        Self {
            grid,
            minerals: START_MINERALS,
            supply_used: 0,
            supply_cap: 0,
            selection: Selection::None,
            constructions: Vec::new(),
            training: Vec::new(),
            counts: Counts {
                workers: START_WORKERS as u32,
                ..Counts::default()
            },
            step: 0,
            horizon,
        }
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.grid[y * GRID + x]
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.horizon
    }

    /// Empty and not reserved by a construction site.
    pub fn is_free(&self, pos: Pos) -> bool {
        self.grid[pos.index()] == Cell::Empty && !self.constructions.iter().any(|c| c.pos == pos)
    }

    fn any_free(&self) -> bool {
        (0..GRID * GRID).any(|i| self.is_free(Pos::from_index(i)))
    }

    pub fn worker_busy(&self, pos: Pos) -> bool {
        self.constructions.iter().any(|c| c.worker == pos)
    }

    /// First idle worker in row-major order.
    pub fn first_idle_worker(&self) -> Option<Pos> {
        (0..GRID * GRID)
            .map(Pos::from_index)
            .find(|&p| self.grid[p.index()] == Cell::Worker && !self.worker_busy(p))
    }

    pub fn queue_at(&self, barracks: Pos) -> Option<&Training> {
        self.training.iter().find(|t| t.barracks == barracks)
    }

    /// First barracks with an empty queue, else the first barracks.
    pub fn preferred_barracks(&self) -> Option<Pos> {
        let all: Vec<Pos> = (0..GRID * GRID)
            .map(Pos::from_index)
            .filter(|&p| self.grid[p.index()] == Cell::Barracks)
            .collect();
        all.iter()
            .copied()
            .find(|&p| self.queue_at(p).is_none())
            .or_else(|| all.first().copied())
    }

    fn selected_idle_worker(&self) -> Option<Pos> {
        match self.selection {
            Selection::Worker(p) if !self.worker_busy(p) => Some(p),
            _ => None,
        }
    }

    pub fn pending(&self, kind: Structure) -> u32 {
        self.constructions.iter().filter(|c| c.kind == kind).count() as u32
    }

    pub fn legal_actions(&self) -> ActionMask {
        let mut mask = ActionMask::default();
        mask.set(ActionKind::NoOp);
        if self.first_idle_worker().is_some() {
            mask.set(ActionKind::SelectWorker);
        }
        if self.selected_idle_worker().is_some() && self.any_free() {
            if self.minerals >= DEPOT_COST {
                mask.set(ActionKind::BuildDepot);
            }
            if self.minerals >= BARRACKS_COST && self.counts.depots >= 1 {
                mask.set(ActionKind::BuildBarracks);
            }
        }
        if self.counts.barracks >= 1 {
            mask.set(ActionKind::SelectBarracks);
        }
        if let Selection::Barracks(p) = self.selection {
            if self.queue_at(p).is_none() && self.supply_used < self.supply_cap && self.minerals >= MARINE_COST {
                mask.set(ActionKind::TrainMarine);
            }
        }
        mask
    }

    /// Whether this exact instantiation (including target cell) would apply.
    pub fn is_legal(&self, action: Action) -> bool {
        if !self.legal_actions().contains(action.kind()) {
            return false;
        }
        match action.target() {
            Some((x, y)) => x < GRID && y < GRID && self.is_free(Pos::new(x, y)),
            None => true,
        }
    }

    /// Advances one tick. Illegal or unaffordable actions act as `NoOp`.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeOver {
                step: self.step,
                horizon: self.horizon,
            });
        }
        let marines_before = self.counts.marines;
        let income = self.counts.workers;
        let applied = self.is_legal(action);
        let mut spent = 0;
        if applied {
            spent = self.apply(action);
        }
        self.tick_constructions();
        self.tick_training();
        self.minerals += income;
        self.step += 1;
        Ok(StepOutcome {
            reward: f64::from(self.counts.marines - marines_before),
            done: self.step == self.horizon,
            spent,
            applied,
        })
    }

    fn apply(&mut self, action: Action) -> u32 {
        match action {
            Action::NoOp => 0,
            Action::SelectWorker => {
                if let Some(p) = self.first_idle_worker() {
                    self.selection = Selection::Worker(p);
                }
                0
            }
            Action::SelectBarracks => {
                if let Some(p) = self.preferred_barracks() {
                    self.selection = Selection::Barracks(p);
                }
                0
            }
            Action::BuildDepot { x, y } | Action::BuildBarracks { x, y } => {
                let worker = self.selected_idle_worker().expect("checked by is_legal");
                let (kind, cost, time) = if matches!(action, Action::BuildDepot { .. }) {
                    (Structure::Depot, DEPOT_COST, DEPOT_TIME)
                } else {
                    (Structure::Barracks, BARRACKS_COST, BARRACKS_TIME)
                };
                self.minerals -= cost;
                self.constructions.push(Construction {
                    pos: Pos::new(x as usize, y as usize),
                    kind,
                    remaining: time,
                    worker,
                });
                cost
            }
            Action::TrainMarine => {
                let Selection::Barracks(p) = self.selection else {
                    unreachable!("checked by is_legal")
                };
                self.minerals -= MARINE_COST;
                self.supply_used += 1;
                self.training.push(Training {
                    barracks: p,
                    remaining: MARINE_TIME,
                });
                self.training.sort_by_key(|t| t.barracks);
                MARINE_COST
            }
        }
    }

    fn tick_constructions(&mut self) {
        let mut finished = Vec::new();
        self.constructions.retain_mut(|c| {
            c.remaining -= 1;
            if c.remaining == 0 {
                finished.push(*c);
                false
            } else {
                true
            }
        });
        for c in finished {
            match c.kind {
                Structure::Depot => {
                    self.grid[c.pos.index()] = Cell::Depot;
                    self.counts.depots += 1;
                    self.supply_cap += SUPPLY_PER_DEPOT;
                }
                Structure::Barracks => {
                    self.grid[c.pos.index()] = Cell::Barracks;
                    self.counts.barracks += 1;
                }
            }
        }
    }

    fn tick_training(&mut self) {
        let mut i = 0;
        while i < self.training.len() {
            let t = &mut self.training[i];
            t.remaining = t.remaining.saturating_sub(1);
            if t.remaining == 0 {
                let home = t.barracks;
                if let Some(cell) = self.spawn_cell(home) {
                    self.grid[cell.index()] = Cell::Marine;
                    self.counts.marines += 1;
                    self.training.remove(i);
                    continue;
                }
            }
            i += 1;
        }
    }

    /// Nearest free cell to `home` by Chebyshev ring, row-major within a ring.
    fn spawn_cell(&self, home: Pos) -> Option<Pos> {
        let (hx, hy) = (home.x as isize, home.y as isize);
        for r in 1..GRID as isize {
            for y in hy - r..=hy + r {
                for x in hx - r..=hx + r {
                    if (x - hx).abs().max((y - hy).abs()) != r {
                        continue;
                    }
                    if x < 0 || y < 0 || x >= GRID as isize || y >= GRID as isize {
                        continue;
                    }
                    let p = Pos::new(x as usize, y as usize);
                    if self.is_free(p) {
                        return Some(p);
                    }
                }
            }
        }
        None
    }

    /// Recounts completed units from the grid.
    pub fn grid_counts(&self) -> Counts {
        let count = |c: Cell| self.grid.iter().filter(|&&g| g == c).count() as u32;
        Counts {
            workers: count(Cell::Worker),
            depots: count(Cell::Depot),
            barracks: count(Cell::Barracks),
            marines: count(Cell::Marine),
        }
    }
}
