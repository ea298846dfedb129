use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::A3cConfig;
use crate::lexicon::SkipGramConfig;
use crate::mem::{DatasetConfig, MemTrainConfig, DEFAULT_TAU};

/// Which agent an experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Shaping from the embedding model.
    Narration,
    /// Shaping from the hand-coded goal detectors.
    Subtask,
    /// Environment reward only.
    None,
    /// No learning: uniform over legal actions.
    Random,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Narration, Variant::Subtask, Variant::None, Variant::Random];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Narration => "narration",
            Variant::Subtask => "subtask",
            Variant::None => "none",
            Variant::Random => "random",
        }
    }

    /// Registry name of the shaping strategy, if the variant learns.
    pub fn shaper(self) -> Option<&'static str> {
        match self {
            Variant::Random => None,
            v => Some(v.name()),
        }
    }

    pub fn needs_mem(self) -> bool {
        self == Variant::Narration
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown variant {s:?}")))
    }
}

/// Complete description of one experiment. Every hyperparameter of every
/// stage lives here so that `config.json` alone reproduces a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Command-set JSON used for shaping; the bundled originals when unset.
    pub commands: Option<PathBuf>,
    /// One independent training run per seed.
    pub seeds: Vec<u64>,
    pub tau: f64,
    /// Bonus paid per completed instruction.
    pub bonus: f64,
    /// Reuse a trained embedding model instead of training one.
    pub mem_path: Option<PathBuf>,
    /// Word-vector corpus; the bundled corpus when unset.
    pub corpus: Option<PathBuf>,
    pub dataset_seed: u64,
    pub mem_seed: u64,
    /// Word-vector training; `lexicon.seed` seeds it.
    pub lexicon: SkipGramConfig,
    pub dataset: DatasetConfig,
    pub mem: MemTrainConfig,
    pub agent: A3cConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Narration,
            commands: None,
            seeds: vec![1],
            tau: DEFAULT_TAU,
            bonus: 1.0,
            mem_path: None,
            corpus: None,
            dataset_seed: 1,
            mem_seed: 1,
            lexicon: SkipGramConfig::default(),
            dataset: DatasetConfig::default(),
            mem: MemTrainConfig::default(),
            agent: A3cConfig::default(),
            output: PathBuf::from("runs/experiment"),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Config(msg.to_string()))
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Rejects configurations that would fail or produce meaningless output
    /// partway through a run.
    pub fn validate(&self) -> Result<(), HarnessError> {
        check(!self.seeds.is_empty(), "at least one seed is required")?;
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        check(sorted.len() == self.seeds.len(), "seeds must be distinct")?;
        check(positive(self.tau), "tau must be positive")?;
        check(self.bonus.is_finite() && self.bonus >= 0.0, "bonus must be finite and non-negative")?;

        let l = &self.lexicon;
        check(l.dim > 0 && l.window > 0 && l.epochs > 0, "lexicon dim, window and epochs must be positive")?;
        check(positive(l.lr), "lexicon lr must be positive")?;

        let d = &self.dataset;
        check(d.per_command > 0 && d.nulls > 0, "dataset quotas must be positive")?;
        check((0.0..=1.0).contains(&d.expert_mix), "expert_mix must lie in [0, 1]")?;
        check(d.null_rate > 0.0 && d.null_rate <= 1.0, "null_rate must lie in (0, 1]")?;
        check(
            d.capture_rates.iter().all(|r| *r > 0.0 && *r <= 1.0),
            "capture_rates must lie in (0, 1]",
        )?;
        check(d.horizon > 0 && d.max_steps > 0, "dataset horizon and max_steps must be positive")?;

        let m = &self.mem;
        check(positive(m.lr) && m.batch > 0 && m.epochs > 0, "mem lr, batch and epochs must be positive")?;
        check(m.lambda.is_finite() && m.lambda >= 0.0, "mem lambda must be non-negative")?;
        check(positive(m.threshold), "mem threshold must be positive")?;

        let a = &self.agent;
        check(a.workers > 0 && a.rollout > 0, "workers and rollout must be positive")?;
        check(a.total_steps > 0, "total_steps must be positive")?;
        check(a.eval_every > 0 && a.eval_episodes > 0, "evaluation cadence and episode count must be positive")?;
        check(positive(a.lr) && positive(a.grad_clip), "agent lr and grad_clip must be positive")?;
        check(a.horizon > 0, "horizon must be positive")?;
        check(
            a.loss.gamma > 0.0 && a.loss.gamma < 1.0,
            "discount must lie strictly between 0 and 1",
        )?;
        check(a.loss.value >= 0.0 && a.loss.entropy >= 0.0, "loss coefficients must be non-negative")?;
        Ok(())
    }

    /// Eval steps the run will record: every `eval_every` plus the final step.
    pub fn eval_steps(&self) -> Vec<u64> {
        let a = &self.agent;
        let mut steps: Vec<u64> = (0..a.total_steps).step_by(a.eval_every as usize).collect();
        steps.push(a.total_steps);
        steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"variant": "none", "sedes": [1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"agent": {"wrokers": 2}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"variant": "subtask", "seeds": [3, 4]}"#).unwrap();
        assert_eq!(c.variant, Variant::Subtask);
        assert_eq!(c.agent, A3cConfig::default());
    }

    #[test]
    fn round_trip_preserves_everything() {
        let c = ExperimentConfig {
            variant: Variant::Random,
            tau: 0.25,
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { seeds: vec![], ..Default::default() },
            ExperimentConfig { seeds: vec![2, 2], ..Default::default() },
            ExperimentConfig { tau: 0.0, ..Default::default() },
            ExperimentConfig { bonus: f64::NAN, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let mut c = ExperimentConfig::default();
        c.agent.eval_every = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn eval_cadence_includes_start_and_end() {
        let mut c = ExperimentConfig::default();
        c.agent.total_steps = 120;
        c.agent.eval_every = 50;
        assert_eq!(c.eval_steps(), vec![0, 50, 100, 120]);
        c.agent.total_steps = 100;
        assert_eq!(c.eval_steps(), vec![0, 50, 100]);
    }

    #[test]
    fn variants_parse_by_name() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("hogwild".parse::<Variant>().is_err());
        assert_eq!(Variant::Random.shaper(), None);
    }
}
