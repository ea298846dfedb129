use rand::Rng;

use super::{Action, ActionKind, GameState, Pos, Selection, Structure, BARRACKS_COST, DEPOT_COST, GRID, MARINE_COST};

/// Supply headroom (including depots under construction) below which the
/// expert builds another depot.
const HEADROOM: u32 = 3;

/// Free cell for a new structure, scanning backwards from the far corner.
fn build_site(s: &GameState) -> Option<(u8, u8)> {
    (0..GRID * GRID)
        .rev()
        .map(|i| Pos::new(i % GRID, i / GRID))
        .find(|&p| s.is_free(p))
        .map(|p| (p.x, p.y))
}

fn worker_ready(s: &GameState) -> bool {
    matches!(s.selection, Selection::Worker(p) if !s.worker_busy(p))
}

/// Walks toward a build order: select an idle worker, then place the structure
/// once affordable.
fn build(s: &GameState, kind: Structure) -> Action {
    if !worker_ready(s) {
        return if s.first_idle_worker().is_some() { Action::SelectWorker } else { Action::NoOp };
    }
    let cost = match kind {
        Structure::Depot => DEPOT_COST,
        Structure::Barracks => BARRACKS_COST,
    };
    match (s.minerals >= cost, build_site(s)) {
        (true, Some((x, y))) => match kind {
            Structure::Depot => Action::BuildDepot { x, y },
            Structure::Barracks => Action::BuildBarracks { x, y },
        },
        _ => Action::NoOp,
    }
}

/// Hand-coded build order: first depot, one barracks, then keep the barracks
/// busy and add depots whenever supply headroom runs low.
pub fn scripted_expert(s: &GameState) -> Action {
    let depots_pending = s.pending(Structure::Depot);
    let barracks_total = s.counts.barracks + s.pending(Structure::Barracks);
    if s.counts.depots + depots_pending == 0 {
        return build(s, Structure::Depot);
    }
    if barracks_total == 0 {
        if s.counts.depots == 0 {
            return if worker_ready(s) || s.first_idle_worker().is_none() { Action::NoOp } else { Action::SelectWorker };
        }
        return build(s, Structure::Barracks);
    }
    let headroom = s.supply_cap + depots_pending * super::SUPPLY_PER_DEPOT - s.supply_used;
    if headroom < HEADROOM && depots_pending == 0 {
        return build(s, Structure::Depot);
    }
    if s.counts.barracks == 0 {
        return Action::NoOp;
    }
    let barracks_idle = s.preferred_barracks().is_some_and(|p| s.queue_at(p).is_none());
    if barracks_idle && s.supply_used < s.supply_cap && s.minerals >= MARINE_COST {
        return match s.selection {
            Selection::Barracks(p) if s.queue_at(p).is_none() => Action::TrainMarine,
            _ => Action::SelectBarracks,
        };
    }
    Action::NoOp
}

/// Uniform over legal action ids; spatial arguments uniform over the grid.
pub fn random_legal_action(s: &GameState, rng: &mut impl Rng) -> Action {
    let mask = s.legal_actions();
    let kinds: Vec<ActionKind> = mask.kinds().collect();
    let kind = kinds[rng.gen_range(0..kinds.len())];
    let (x, y) = if kind.is_spatial() {
        (rng.gen_range(0..GRID), rng.gen_range(0..GRID))
    } else {
        (0, 0)
    };
    Action::from_parts(kind, x, y).expect("coordinates drawn inside the grid")
}
