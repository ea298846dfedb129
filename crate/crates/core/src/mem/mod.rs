//! The mutual-embedding model: a state encoder and a command encoder trained
//! so that a state and the command it satisfies land close together.

mod commands;
mod dataset;
mod model;
mod train;

pub use commands::{CommandSet, CommandSpec, ALTERNATE_COMMANDS_JSON, ORIGINAL_COMMANDS_JSON};
pub use dataset::{
    generate_dataset, sidecar_path, DatasetConfig, DatasetSidecar, LabeledObservation, MemDataset, MemSample, Split,
};
pub use model::{MemModel, PairRef, COMMAND_HIDDEN, DEFAULT_TAU, EMBED_DIM};
pub use train::{
    command_inputs, evaluate_split, sample_distances, train_mem, EpochMetrics, MemMetrics, MemTrainConfig,
    SplitMetrics,
};

use thiserror::Error;

use crate::env::EnvError;
use crate::lexicon::LexiconError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum MemError {
    #[error("command {0:?} is empty after tokenization")]
    EmptyCommand(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("command set: {0}")]
    Commands(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("quota for {command} unreachable: {have}/{need} after {steps} env steps")]
    QuotaUnreachable {
        command: String,
        have: usize,
        need: usize,
        steps: u64,
    },
    #[error("dataset split: {0}")]
    Split(String),
    #[error("file format: {0}")]
    Format(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Euclidean distance between two embeddings.
pub fn mem_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::mem_distance;

    #[test]
    fn distance_examples() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        assert_eq!(mem_distance(&a, &a), 0.0);
        assert!((mem_distance(&a, &b) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mem_distance(&a, &b), mem_distance(&b, &a));
    }
}
