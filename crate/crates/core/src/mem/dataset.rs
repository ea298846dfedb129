use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MemError;
use crate::env::{
    detect, random_legal_action, scripted_expert, CommandId, GameState, Observation, CHANNELS, GRID, NONSPATIAL_LEN,
    NUM_COMMANDS,
};

const DATASET_MAGIC: [u8; 4] = *b"NRDS";
const DATASET_VERSION: u32 = 1;
const NULL_LABEL: u8 = u8::MAX;

/// Quotas and behavior-policy settings for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Matched observations collected per command.
    pub per_command: usize,
    pub nulls: usize,
    /// A null observation has no detector fire in this many trailing steps.
    pub null_window: u32,
    /// Probability of keeping an eligible null observation.
    pub null_rate: f64,
    /// Probability of keeping a detector-fire observation, per command id.
    /// Frequent events are thinned so every quota fills over the same span
    /// of episodes instead of the first handful.
    pub capture_rates: [f64; NUM_COMMANDS],
    /// Per-step probability of taking the scripted expert's action instead of
    /// a uniformly random legal one. Zero gives a pure random agent.
    pub expert_mix: f64,
    pub horizon: u32,
    /// Generation fails once this many env steps pass without meeting quotas.
    pub max_steps: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_command: 1000,
            nulls: 5000,
            null_window: 10,
            null_rate: 0.05,
            capture_rates: [0.02, 0.1, 1.0, 0.03, 0.08],
            expert_mix: 0.3,
            horizon: crate::env::DEFAULT_HORIZON,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        [Split::Train, Split::Val, Split::Test].get(c as usize).copied()
    }
}

/// A stored observation with the single command it satisfies, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObservation {
    pub observation: Observation,
    pub label: Option<usize>,
    pub split: Split,
}

/// A (state, command, target) triple referring to an observation by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemSample {
    pub observation: usize,
    pub command: usize,
    /// 0 when the command matches the observation, 1 otherwise.
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config: DatasetConfig,
    pub seed: u64,
    pub observations: usize,
    pub matched: usize,
    pub mismatched: usize,
    pub nulls: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub env_steps: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemDataset {
    pub observations: Vec<LabeledObservation>,
    pub samples: Vec<MemSample>,
    pub config: DatasetConfig,
    pub seed: u64,
    pub env_steps: u64,
}

/// Runs the behavior policy until every quota is met, then pairs
/// observations with commands and assigns stratified 4:1:1 splits.
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<MemDataset, MemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matched: Vec<Vec<Observation>> = vec![Vec::new(); NUM_COMMANDS];
    let mut nulls: Vec<Observation> = Vec::new();
    let mut seen: HashSet<[u8; 32]> = HashSet::new();
    let mut steps = 0u64;
    let full = |m: &Vec<Vec<Observation>>, n: &Vec<Observation>| {
        m.iter().all(|v| v.len() >= config.per_command) && n.len() >= config.nulls
    };

    'episodes: while !full(&matched, &nulls) {
        let mut state = GameState::reset_with_horizon(rng.gen(), config.horizon);
        let mut last_fire: Option<u32> = None;
        while !state.is_done() {
            if steps >= config.max_steps {
                break 'episodes;
            }
            let action = if rng.gen::<f64>() < config.expert_mix {
                scripted_expert(&state)
            } else {
                random_legal_action(&state, &mut rng)
            };
            let prev = state.clone();
            state.step(action)?;
            steps += 1;
            let events = detect(&prev, &state);
            if !events.is_empty() {
                last_fire = Some(state.step);
            }
            if let Some(cmd) = events.single() {
                let bucket = &mut matched[cmd.index()];
                if bucket.len() < config.per_command && rng.gen::<f64>() < config.capture_rates[cmd.index()] {
                    let obs = Observation::encode(&prev, &state);
                    if seen.insert(obs.digest()) {
                        bucket.push(obs);
                    }
                }
            } else if events.is_empty()
                && last_fire.is_none_or(|t| state.step - t >= config.null_window)
                && nulls.len() < config.nulls
                && rng.gen::<f64>() < config.null_rate
            {
                let obs = Observation::encode(&prev, &state);
                if seen.insert(obs.digest()) {
                    nulls.push(obs);
                }
            }
            if full(&matched, &nulls) {
                break 'episodes;
            }
        }
    }

    if let Some((i, v)) = matched.iter().enumerate().find(|(_, v)| v.len() < config.per_command) {
        return Err(MemError::QuotaUnreachable {
            command: CommandId::ALL[i].name().to_string(),
            have: v.len(),
            need: config.per_command,
            steps,
        });
    }
    if nulls.len() < config.nulls {
        return Err(MemError::QuotaUnreachable {
            command: "null".into(),
            have: nulls.len(),
            need: config.nulls,
            steps,
        });
    }

    let mut observations = Vec::new();
    let mut samples = Vec::new();
    let groups = matched
        .into_iter()
        .enumerate()
        .map(|(c, v)| (Some(c), v))
        .chain(std::iter::once((None, nulls)));
    for (label, group) in groups {
        let splits = stratified_splits(group.len(), &mut rng);
        for (obs, split) in group.into_iter().zip(splits) {
            let idx = observations.len();
            observations.push(LabeledObservation {
                observation: obs,
                label,
                split,
            });
            match label {
                Some(c) => {
                    samples.push(MemSample { observation: idx, command: c, y: 0 });
                    let other = (c + rng.gen_range(1..NUM_COMMANDS)) % NUM_COMMANDS;
                    samples.push(MemSample { observation: idx, command: other, y: 1 });
                }
                None => samples.push(MemSample {
                    observation: idx,
                    command: rng.gen_range(0..NUM_COMMANDS),
                    y: 1,
                }),
            }
        }
    }
    Ok(MemDataset {
        observations,
        samples,
        config: *config,
        seed,
        env_steps: steps,
    })
}

/// Shuffled assignment of `n` items: `n/6` test, `n/6` validation, the rest train.
fn stratified_splits(n: usize, rng: &mut impl Rng) -> Vec<Split> {
    let k = n / 6;
    let mut s: Vec<Split> = (0..n)
        .map(|i| match i {
            i if i < k => Split::Test,
            i if i < 2 * k => Split::Val,
            _ => Split::Train,
        })
        .collect();
    s.shuffle(rng);
    s
}

const SPATIAL_LEN: usize = CHANNELS * GRID * GRID;

impl MemDataset {
    pub fn split_of(&self, sample: &MemSample) -> Split {
        self.observations[sample.observation].split
    }

    pub fn samples_in(&self, split: Split) -> Vec<MemSample> {
        self.samples.iter().copied().filter(|s| self.split_of(s) == split).collect()
    }

    pub fn observation(&self, sample: &MemSample) -> &Observation {
        &self.observations[sample.observation].observation
    }

    pub fn count_where(&self, f: impl Fn(&MemSample) -> bool) -> usize {
        self.samples.iter().filter(|s| f(s)).count()
    }

    /// Same observations and commands with the targets permuted across all samples.
    pub fn with_shuffled_labels(&self, seed: u64) -> Self {
        let mut ys: Vec<u8> = self.samples.iter().map(|s| s.y).collect();
        ys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = self.clone();
        for (s, y) in out.samples.iter_mut().zip(ys) {
            s.y = y;
        }
        out
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), MemError> {
        w.write_all(&DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.observations.len() as u32).to_le_bytes())?;
        w.write_all(&(self.samples.len() as u32).to_le_bytes())?;
        for o in &self.observations {
            w.write_all(o.observation.spatial())?;
            for v in o.observation.nonspatial() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[o.label.map_or(NULL_LABEL, |c| c as u8), o.split.code()])?;
        }
        for s in &self.samples {
            w.write_all(&(s.observation as u32).to_le_bytes())?;
            w.write_all(&[s.command as u8, s.y])?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    /// Hex sha256 of the binary encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Parses the binary container; quotas and seed come from the sidecar.
    pub fn read(r: &mut impl Read, sidecar: &DatasetSidecar) -> Result<Self, MemError> {
        let bad = |m: &str| MemError::Format(m.to_string());
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32, MemError> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != DATASET_MAGIC {
            return Err(bad("not a dataset file"));
        }
        if read_u32(r)? != DATASET_VERSION {
            return Err(bad("unsupported dataset version"));
        }
        let n_obs = read_u32(r)? as usize;
        let n_samples = read_u32(r)? as usize;
        let mut observations = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            let mut spatial = vec![0u8; SPATIAL_LEN];
            r.read_exact(&mut spatial)?;
            let mut ns = [0.0; NONSPATIAL_LEN];
            for v in ns.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
            let mut tail = [0u8; 2];
            r.read_exact(&mut tail)?;
            let observation = Observation::from_parts(spatial, ns).ok_or_else(|| bad("malformed observation"))?;
            let label = match tail[0] {
                NULL_LABEL => None,
                c if (c as usize) < NUM_COMMANDS => Some(c as usize),
                _ => return Err(bad("bad label")),
            };
            let split = Split::from_code(tail[1]).ok_or_else(|| bad("bad split"))?;
            observations.push(LabeledObservation { observation, label, split });
        }
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let obs = read_u32(r)? as usize;
            let mut tail = [0u8; 2];
            r.read_exact(&mut tail)?;
            if obs >= n_obs || tail[0] as usize >= NUM_COMMANDS || tail[1] > 1 {
                return Err(bad("bad sample record"));
            }
            samples.push(MemSample {
                observation: obs,
                command: tail[0] as usize,
                y: tail[1],
            });
        }
        let ds = Self {
            observations,
            samples,
            config: sidecar.config,
            seed: sidecar.seed,
            env_steps: sidecar.env_steps,
        };
        if ds.hash() != sidecar.sha256 {
            return Err(bad("dataset hash does not match its sidecar"));
        }
        Ok(ds)
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            config: self.config,
            seed: self.seed,
            observations: self.observations.len(),
            matched: self.count_where(|s| s.y == 0),
            mismatched: self.count_where(|s| s.y == 1 && self.observations[s.observation].label.is_some()),
            nulls: self.count_where(|s| self.observations[s.observation].label.is_none()),
            train: self.count_where(|s| self.split_of(s) == Split::Train),
            val: self.count_where(|s| self.split_of(s) == Split::Val),
            test: self.count_where(|s| self.split_of(s) == Split::Test),
            env_steps: self.env_steps,
            sha256: self.hash(),
        }
    }

    /// Writes `path` and a JSON sidecar next to it (`path` + `.json`).
    pub fn save(&self, path: &Path) -> Result<(), MemError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        let side = serde_json::to_string_pretty(&self.sidecar()).map_err(|e| MemError::Format(e.to_string()))?;
        std::fs::write(sidecar_path(path), side)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemError> {
        let side: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)
            .map_err(|e| MemError::Format(e.to_string()))?;
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?), &side)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            per_command: 12,
            nulls: 30,
            null_rate: 0.2,
            ..Default::default()
        }
    }

    #[test]
    fn counts_follow_construction() {
        let ds = generate_dataset(&small(), 5).unwrap();
        assert_eq!(ds.samples.len(), 5 * 12 * 2 + 30);
        assert_eq!(ds.count_where(|s| s.y == 0), 60);
        for c in 0..NUM_COMMANDS {
            assert_eq!(ds.count_where(|s| s.y == 0 && s.command == c), 12);
        }
    }

    #[test]
    fn mismatched_command_differs_and_nulls_are_negative() {
        let ds = generate_dataset(&small(), 6).unwrap();
        for s in &ds.samples {
            match ds.observations[s.observation].label {
                Some(c) => assert_eq!(s.y == 0, s.command == c),
                None => assert_eq!(s.y, 1),
            }
        }
    }

    #[test]
    fn binary_round_trip_and_tamper_detection() {
        let ds = generate_dataset(&small(), 7).unwrap();
        let side = ds.sidecar();
        let mut bytes = ds.to_bytes();
        assert_eq!(MemDataset::read(&mut bytes.as_slice(), &side).unwrap(), ds);
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(MemDataset::read(&mut bytes.as_slice(), &side).is_err());
    }

    #[test]
    fn starving_quota_names_the_command() {
        let cfg = DatasetConfig {
            max_steps: 50,
            ..small()
        };
        match generate_dataset(&cfg, 1) {
            Err(MemError::QuotaUnreachable { command, .. }) => assert!(!command.is_empty()),
            other => panic!("expected quota failure, got {other:?}"),
        }
    }

    #[test]
    fn split_sizes_are_one_sixth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = stratified_splits(1000, &mut rng);
        let n = |x| s.iter().filter(|&&v| v == x).count();
        assert_eq!((n(Split::Train), n(Split::Val), n(Split::Test)), (668, 166, 166));
    }
}
