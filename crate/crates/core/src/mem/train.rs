use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mem_distance, CommandSet, MemDataset, MemError, MemModel, MemSample, PairRef, Split, EMBED_DIM};
use crate::env::Observation;
use crate::nn::{Adam, AdamConfig, Parameterized, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lambda: f64,
    /// Distance below which a pair is classified as matched.
    pub threshold: f64,
}

impl Default for MemTrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch: 32,
            epochs: 40,
            lambda: 2.5e-5,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitMetrics {
    /// Mean squared distance error, without the weight penalty.
    pub loss: f64,
    pub accuracy: f64,
    pub matched_accuracy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemMetrics {
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (minimum validation loss).
    pub best_epoch: usize,
}

impl MemMetrics {
    pub fn best(&self) -> &EpochMetrics {
        &self.history[self.best_epoch]
    }
}

/// Per-command encoder inputs indexed by command id.
pub fn command_inputs(model: &MemModel, commands: &CommandSet) -> Result<Vec<Tensor>, MemError> {
    commands.commands().iter().map(|c| model.command_input(&c.text)).collect()
}

/// Distance between each sample's observation and its command.
pub fn sample_distances(
    model: &MemModel,
    dataset: &MemDataset,
    samples: &[MemSample],
    commands: &CommandSet,
) -> Result<Vec<f64>, MemError> {
    let xc: Vec<Vec<f64>> = commands.commands().iter().map(|c| model.encode_command(&c.text)).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let obs: Vec<&Observation> = chunk.iter().map(|s| dataset.observation(s)).collect();
        let xs = model.encode_states(&obs)?;
        for (i, s) in chunk.iter().enumerate() {
            out.push(mem_distance(&xs.data()[i * EMBED_DIM..(i + 1) * EMBED_DIM], &xc[s.command]));
        }
    }
    Ok(out)
}

pub fn evaluate_split(
    model: &MemModel,
    dataset: &MemDataset,
    samples: &[MemSample],
    commands: &CommandSet,
    threshold: f64,
) -> Result<SplitMetrics, MemError> {
    let d = sample_distances(model, dataset, samples, commands)?;
    let n = samples.len().max(1) as f64;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let (mut matched, mut matched_ok) = (0usize, 0usize);
    for (s, &d) in samples.iter().zip(&d) {
        loss += (d - f64::from(s.y)).powi(2);
        let ok = (d < threshold) == (s.y == 0);
        correct += usize::from(ok);
        if s.y == 0 {
            matched += 1;
            matched_ok += usize::from(ok);
        }
    }
    Ok(SplitMetrics {
        loss: loss / n,
        accuracy: correct as f64 / n,
        matched_accuracy: matched_ok as f64 / matched.max(1) as f64,
        samples: samples.len(),
    })
}

/// Trains with Adam and returns the parameters from the epoch of minimum
/// validation loss together with the full per-epoch history.
pub fn train_mem(
    mut model: MemModel,
    dataset: &MemDataset,
    commands: &CommandSet,
    config: &MemTrainConfig,
    seed: u64,
) -> Result<(MemModel, MemMetrics), MemError> {
    let train = dataset.samples_in(Split::Train);
    let val = dataset.samples_in(Split::Val);
    let test = dataset.samples_in(Split::Test);
    if train.is_empty() || val.is_empty() {
        return Err(MemError::Split("train and validation splits must be non-empty".into()));
    }
    let inputs = command_inputs(&model, commands)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), model.num_params());
    let mut order = train.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch.max(1)).enumerate() {
            let batch: Vec<PairRef> = chunk
                .iter()
                .map(|s| PairRef {
                    observation: dataset.observation(s),
                    command: s.command,
                    y: f64::from(s.y),
                })
                .collect();
            model
                .loss_and_grad(&batch, &inputs, config.lambda)
                .map_err(|e| MemError::Diverged(format!("epoch {epoch} batch {b}: {e}")))?;
            let mut params = model.flat_params();
            adam.step(&mut params, &model.flat_grads())
                .map_err(|e| MemError::Diverged(format!("epoch {epoch} batch {b}: {e}")))?;
            model.set_flat_params(&params)?;
        }
        let m = EpochMetrics {
            epoch,
            train: evaluate_split(&model, dataset, &train, commands, config.threshold)?,
            val: evaluate_split(&model, dataset, &val, commands, config.threshold)?,
            test: evaluate_split(&model, dataset, &test, commands, config.threshold)?,
        };
        if !m.train.loss.is_finite() || !m.val.loss.is_finite() {
            return Err(MemError::Diverged(format!("epoch {epoch}: non-finite loss {m:?}")));
        }
        if best.as_ref().is_none_or(|(l, _, _)| m.val.loss < *l) {
            best = Some((m.val.loss, epoch, model.flat_params()));
        }
        history.push(m);
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.set_flat_params(&params)?;
            epoch
        }
        None => 0,
    };
    Ok((model, MemMetrics { history, best_epoch }))
}
