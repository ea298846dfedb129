use std::collections::BTreeMap;
use std::sync::Arc;

use super::net::AUX_LEN;
use super::AgentError;
use crate::env::{detect, CommandId, GameState, Observation};
use crate::mem::{mem_distance, CommandSet, MemModel};

/// Pointer over an ordered instruction list. Advances (cyclically) only when
/// the current instruction is satisfied, paying `bonus` each time.
#[derive(Debug, Clone, PartialEq)]
pub struct InstructionTracker {
    len: usize,
    pointer: usize,
    completions: Vec<u32>,
    pub bonus: f64,
}

impl InstructionTracker {
    pub fn new(len: usize, bonus: f64) -> Self {
        assert!(len > 0, "instruction list must be non-empty");
        Self {
            len,
            pointer: 0,
            completions: vec![0; len],
            bonus,
        }
    }

    pub fn pointer(&self) -> usize {
        self.pointer
    }

    pub fn completions(&self) -> &[u32] {
        &self.completions
    }

    pub fn total_completions(&self) -> u32 {
        self.completions.iter().sum()
    }

    pub fn reset(&mut self) {
        self.pointer = 0;
        self.completions.iter_mut().for_each(|c| *c = 0);
    }

    /// Pure transition: returns the bonus paid for this step.
    pub fn advance_if(&mut self, satisfied: bool) -> f64 {
        if !satisfied {
            return 0.0;
        }
        self.completions[self.pointer] += 1;
        self.pointer = (self.pointer + 1) % self.len;
        self.bonus
    }
}

/// Outcome of shaping one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeStep {
    pub bonus: f64,
    pub completed: bool,
}

/// A reward-shaping strategy. Each worker owns one instance.
pub trait Shaper: Send {
    fn name(&self) -> &'static str;

    /// Starts an episode at `state` with observation `obs`.
    fn reset(&mut self, state: &GameState, obs: &Observation) -> Result<(), AgentError>;

    /// Scores the transition `prev -> next` whose encoded observation is `obs`.
    fn shape(&mut self, prev: &GameState, next: &GameState, obs: &Observation) -> Result<ShapeStep, AgentError>;

    /// Extra features for the current observation (length [`AUX_LEN`]).
    fn aux(&self) -> &[f64];

    fn tracker(&self) -> Option<&InstructionTracker> {
        None
    }
}

/// Unshaped baseline: no bonus and zero auxiliary features.
#[derive(Debug, Clone)]
pub struct NoShaping {
    aux: Vec<f64>,
}

impl Default for NoShaping {
    fn default() -> Self {
        Self { aux: vec![0.0; AUX_LEN] }
    }
}

impl Shaper for NoShaping {
    fn name(&self) -> &'static str {
        "none"
    }

    fn reset(&mut self, _: &GameState, _: &Observation) -> Result<(), AgentError> {
        Ok(())
    }

    fn shape(&mut self, _: &GameState, _: &GameState, _: &Observation) -> Result<ShapeStep, AgentError> {
        Ok(ShapeStep {
            bonus: 0.0,
            completed: false,
        })
    }

    fn aux(&self) -> &[f64] {
        &self.aux
    }
}

/// Hand-coded detectors decide satisfaction; the agent sees no features for them.
#[derive(Debug, Clone)]
pub struct SubtaskShaper {
    order: Vec<CommandId>,
    tracker: InstructionTracker,
    aux: Vec<f64>,
}

impl SubtaskShaper {
    pub fn new(commands: &CommandSet, bonus: f64) -> Self {
        let order = commands
            .commands()
            .iter()
            .map(|c| CommandId::from_index(c.id).expect("validated command id"))
            .collect::<Vec<_>>();
        Self {
            tracker: InstructionTracker::new(order.len(), bonus),
            order,
            aux: vec![0.0; AUX_LEN],
        }
    }
}

impl Shaper for SubtaskShaper {
    fn name(&self) -> &'static str {
        "subtask"
    }

    fn reset(&mut self, _: &GameState, _: &Observation) -> Result<(), AgentError> {
        self.tracker.reset();
        Ok(())
    }

    fn shape(&mut self, prev: &GameState, next: &GameState, _: &Observation) -> Result<ShapeStep, AgentError> {
        let hit = detect(prev, next).contains(self.order[self.tracker.pointer()]);
        let bonus = self.tracker.advance_if(hit);
        Ok(ShapeStep { bonus, completed: hit })
    }

    fn aux(&self) -> &[f64] {
        &self.aux
    }

    fn tracker(&self) -> Option<&InstructionTracker> {
        Some(&self.tracker)
    }
}

/// The frozen embedding model decides satisfaction, and the agent sees
/// `X_s ⊕ X_c` for the current command.
#[derive(Debug, Clone)]
pub struct NarrationShaper {
    mem: Arc<MemModel>,
    commands: Vec<Vec<f64>>,
    tau: f64,
    tracker: InstructionTracker,
    aux: Vec<f64>,
}

impl NarrationShaper {
    pub fn new(mem: Arc<MemModel>, commands: &CommandSet, tau: f64, bonus: f64) -> Result<Self, AgentError> {
        let embedded = commands
            .commands()
            .iter()
            .map(|c| mem.encode_command(&c.text))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            tracker: InstructionTracker::new(embedded.len(), bonus),
            commands: embedded,
            mem,
            tau,
            aux: vec![0.0; AUX_LEN],
        })
    }

    fn set_aux(&mut self, x_s: &[f64]) {
        let half = AUX_LEN / 2;
        self.aux[..half].copy_from_slice(x_s);
        self.aux[half..].copy_from_slice(&self.commands[self.tracker.pointer()]);
    }

    pub fn current_distance(&self, obs: &Observation) -> Result<f64, AgentError> {
        Ok(mem_distance(&self.mem.encode_state(obs)?, &self.commands[self.tracker.pointer()]))
    }
}

impl Shaper for NarrationShaper {
    fn name(&self) -> &'static str {
        "narration"
    }

    fn reset(&mut self, _: &GameState, obs: &Observation) -> Result<(), AgentError> {
        self.tracker.reset();
        let x_s = self.mem.encode_state(obs)?;
        self.set_aux(&x_s);
        Ok(())
    }

    fn shape(&mut self, _: &GameState, _: &GameState, obs: &Observation) -> Result<ShapeStep, AgentError> {
        let x_s = self.mem.encode_state(obs)?;
        let hit = mem_distance(&x_s, &self.commands[self.tracker.pointer()]) < self.tau;
        let bonus = self.tracker.advance_if(hit);
        self.set_aux(&x_s);
        Ok(ShapeStep { bonus, completed: hit })
    }

    fn aux(&self) -> &[f64] {
        &self.aux
    }

    fn tracker(&self) -> Option<&InstructionTracker> {
        Some(&self.tracker)
    }
}

/// Everything a shaper factory may need.
#[derive(Debug, Clone)]
pub struct ShaperContext {
    pub mem: Option<Arc<MemModel>>,
    pub commands: CommandSet,
    pub tau: f64,
    pub bonus: f64,
}

pub type ShaperFactory = Box<dyn Fn(&ShaperContext) -> Result<Box<dyn Shaper>, AgentError> + Send + Sync>;

/// Shaping strategies registered by name and selected at runtime.
pub struct ShaperRegistry {
    factories: BTreeMap<String, ShaperFactory>,
}

impl ShaperRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// The built-in strategies: `none`, `subtask` and `narration`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("none", Box::new(|_| Ok(Box::new(NoShaping::default()) as Box<dyn Shaper>)));
        r.register(
            "subtask",
            Box::new(|ctx| Ok(Box::new(SubtaskShaper::new(&ctx.commands, ctx.bonus)) as Box<dyn Shaper>)),
        );
        r.register(
            "narration",
            Box::new(|ctx| {
                let mem = ctx.mem.clone().ok_or(AgentError::MissingMem)?;
                Ok(Box::new(NarrationShaper::new(mem, &ctx.commands, ctx.tau, ctx.bonus)?) as Box<dyn Shaper>)
            }),
        );
        r
    }

    pub fn register(&mut self, name: &str, factory: ShaperFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, name: &str, ctx: &ShaperContext) -> Result<Box<dyn Shaper>, AgentError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| AgentError::UnknownShaper(name.to_string()))?;
        f(ctx)
    }
}
