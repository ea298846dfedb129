use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{mem_distance, MemError};
use crate::encoder::{StateTrunk, TRUNK_OUT};
use crate::env::Observation;
use crate::lexicon::{tokenize, Vocab, WordEmbeddings};
use crate::nn::{read_raw, write_raw, Dense, Layer, LayerSpec, Lstm, LstmState, ModelHeader, Param, Parameterized, Sequential, Tensor};

/// Width of both embeddings.
pub const EMBED_DIM: usize = 64;
pub const COMMAND_HIDDEN: usize = 64;
pub const DEFAULT_TAU: f64 = 0.5;
const MODEL_KIND: &str = "mutual-embedding";

/// One training pair: an observation, a command index and its target
/// distance (0 for a matching command, 1 otherwise).
#[derive(Debug, Clone, Copy)]
pub struct PairRef<'a> {
    pub observation: &'a Observation,
    pub command: usize,
    pub y: f64,
}

/// Paired state and command encoders mapping into one shared space.
#[derive(Debug, Clone)]
pub struct MemModel {
    pub trunk: StateTrunk,
    pub state_proj: Sequential,
    pub command_lstm: Lstm,
    pub command_proj: Sequential,
    words: WordEmbeddings,
}

impl MemModel {
    pub fn new(words: WordEmbeddings, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = StateTrunk::new(&mut rng);
        let state_proj = Sequential::new(vec![TRUNK_OUT], vec![Layer::Dense(Dense::new(TRUNK_OUT, EMBED_DIM, &mut rng))])
            .expect("fixed architecture");
        let command_lstm = Lstm::new(words.dim(), COMMAND_HIDDEN, &mut rng);
        let command_proj =
            Sequential::new(vec![COMMAND_HIDDEN], vec![Layer::Dense(Dense::new(COMMAND_HIDDEN, EMBED_DIM, &mut rng))])
                .expect("fixed architecture");
        Self {
            trunk,
            state_proj,
            command_lstm,
            command_proj,
            words,
        }
    }

    pub fn words(&self) -> &WordEmbeddings {
        &self.words
    }

    /// Word vectors of `text` as a `[T, 1, d_w]` sequence.
    pub fn command_input(&self, text: &str) -> Result<Tensor, MemError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(MemError::EmptyCommand(text.to_string()));
        }
        let t = tokens.len();
        Ok(self.words.embed_tokens(&tokens).reshape(vec![t, 1, self.words.dim()])?)
    }

    fn encode_command_input(&self, input: &Tensor) -> Result<Vec<f64>, MemError> {
        let (_, last) = self.command_lstm.infer(input, &LstmState::zeros(1, COMMAND_HIDDEN))?;
        let h = Tensor::new(vec![1, COMMAND_HIDDEN], last.h)?;
        Ok(self.command_proj.infer(&h)?.into_data())
    }

    /// `X_c` for a command text.
    pub fn encode_command(&self, text: &str) -> Result<Vec<f64>, MemError> {
        self.encode_command_input(&self.command_input(text)?)
    }

    /// `X_s` for a batch of observations, `[N, EMBED_DIM]`.
    pub fn encode_states(&self, obs: &[&Observation]) -> Result<Tensor, MemError> {
        Ok(self.state_proj.infer(&self.trunk.infer(obs)?)?)
    }

    pub fn encode_state(&self, obs: &Observation) -> Result<Vec<f64>, MemError> {
        Ok(self.encode_states(&[obs])?.into_data())
    }

    /// Whether the observation lies within `tau` of the command embedding.
    pub fn is_satisfied(&self, obs: &Observation, x_c: &[f64], tau: f64) -> Result<bool, MemError> {
        Ok(mem_distance(&self.encode_state(obs)?, x_c) < tau)
    }

    /// Mean squared distance error plus `lambda * ||θ||²`, inference only.
    pub fn loss(&self, batch: &[PairRef], commands: &[Tensor], lambda: f64) -> Result<f64, MemError> {
        if batch.is_empty() {
            return Err(MemError::EmptyBatch);
        }
        let obs: Vec<&Observation> = batch.iter().map(|p| p.observation).collect();
        let xs = self.encode_states(&obs)?;
        let mut cache = BTreeMap::new();
        let mut total = 0.0;
        for (i, p) in batch.iter().enumerate() {
            if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(p.command) {
                e.insert(self.encode_command_input(&commands[p.command])?);
            }
            let d = mem_distance(&xs.data()[i * EMBED_DIM..(i + 1) * EMBED_DIM], &cache[&p.command]);
            total += (d - p.y).powi(2);
        }
        Ok(total / batch.len() as f64 + lambda * self.sq_norm())
    }

    /// Computes the loss and leaves its gradient in every parameter's `grad`.
    /// `commands[id]` holds the `[T, 1, d_w]` input of command `id`.
    pub fn loss_and_grad(&mut self, batch: &[PairRef], commands: &[Tensor], lambda: f64) -> Result<f64, MemError> {
        if batch.is_empty() {
            return Err(MemError::EmptyBatch);
        }
        self.zero_grads();
        let n = batch.len() as f64;
        let obs: Vec<&Observation> = batch.iter().map(|p| p.observation).collect();
        let xs = self.state_proj.forward(&self.trunk.forward(&obs)?)?;

        let mut xc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for p in batch {
            if let std::collections::btree_map::Entry::Vacant(e) = xc.entry(p.command) {
                e.insert(self.encode_command_input(&commands[p.command])?);
            }
        }
        let mut dxs = vec![0.0; xs.len()];
        let mut dxc: BTreeMap<usize, Vec<f64>> = xc.keys().map(|&k| (k, vec![0.0; EMBED_DIM])).collect();
        let mut total = 0.0;
        for (i, p) in batch.iter().enumerate() {
            let s = &xs.data()[i * EMBED_DIM..(i + 1) * EMBED_DIM];
            let c = &xc[&p.command];
            let d = mem_distance(s, c);
            total += (d - p.y).powi(2);
            if d > 0.0 {
                let scale = 2.0 * (d - p.y) / (n * d);
                let gc = dxc.get_mut(&p.command).expect("inserted above");
                for j in 0..EMBED_DIM {
                    let g = scale * (s[j] - c[j]);
                    dxs[i * EMBED_DIM + j] += g;
                    gc[j] -= g;
                }
            }
        }
        let dh = self.state_proj.backward(&Tensor::new(xs.shape().to_vec(), dxs)?)?;
        self.trunk.backward(&dh)?;

        for (cmd, g) in dxc {
            let input = &commands[cmd];
            let (hs, last) = self.command_lstm.forward(input, &LstmState::zeros(1, COMMAND_HIDDEN))?;
            self.command_proj.forward(&Tensor::new(vec![1, COMMAND_HIDDEN], last.h)?)?;
            let dlast = self.command_proj.backward(&Tensor::new(vec![1, EMBED_DIM], g)?)?;
            let d_final = LstmState {
                h: dlast.into_data(),
                c: vec![0.0; COMMAND_HIDDEN],
            };
            self.command_lstm.backward(&Tensor::zeros(hs.shape()), Some(&d_final))?;
        }

        self.add_weight_decay_grad(2.0 * lambda);
        let loss = total / n + lambda * self.sq_norm();
        if !loss.is_finite() {
            return Err(MemError::Diverged(format!("loss {loss}")));
        }
        Ok(loss)
    }

    fn header(&self) -> ModelHeader {
        let mut layers = self.trunk.spatial.specs();
        layers.extend(self.trunk.nonspatial.specs());
        layers.extend(self.state_proj.specs());
        layers.push(LayerSpec::Lstm {
            inputs: self.command_lstm.inputs,
            hidden: self.command_lstm.hidden,
        });
        layers.extend(self.command_proj.specs());
        layers.push(LayerSpec::Embedding {
            vocab: self.words.vocab().len(),
            dim: self.words.dim(),
        });
        ModelHeader {
            kind: MODEL_KIND.into(),
            layers,
            meta: serde_json::json!({
                "embed_dim": EMBED_DIM,
                "tokens": self.words.vocab().tokens(),
                "counts": self.words.vocab().counts(),
            }),
        }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), MemError> {
        let mut blocks: Vec<Vec<f64>> = Vec::new();
        self.visit_params(&mut |p| blocks.push(p.value.clone()));
        let mut refs: Vec<&[f64]> = blocks.iter().map(Vec::as_slice).collect();
        refs.push(self.words.matrix());
        Ok(write_raw(w, &self.header(), &refs)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    /// Hex sha256 of the serialized model.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn read(r: &mut impl Read) -> Result<Self, MemError> {
        let (header, mut blocks) = read_raw(r)?;
        let bad = |m: String| MemError::Format(m);
        if header.kind != MODEL_KIND {
            return Err(bad(format!("unexpected model kind {:?}", header.kind)));
        }
        let Some(LayerSpec::Embedding { vocab, dim }) = header.layers.last().cloned() else {
            return Err(bad("missing embedding table".into()));
        };
        let tokens: Vec<String> =
            serde_json::from_value(header.meta["tokens"].clone()).map_err(|e| bad(e.to_string()))?;
        let counts: Vec<u64> = serde_json::from_value(header.meta["counts"].clone()).map_err(|e| bad(e.to_string()))?;
        let table = blocks.pop().ok_or_else(|| bad("no blocks".into()))?;
        if tokens.len() != vocab || counts.len() != vocab || table.len() != vocab * dim {
            return Err(bad("embedding table does not match its header".into()));
        }
        let words = WordEmbeddings::from_parts(Vocab::from_parts(tokens, counts), dim, table);
        let mut model = Self::new(words, 0);
        if model.header().layers != header.layers {
            return Err(bad(format!("layer spec mismatch: {:?}", header.layers)));
        }
        let mut lens = Vec::new();
        model.visit_params(&mut |p| lens.push(p.len()));
        if lens != blocks.iter().map(Vec::len).collect::<Vec<_>>() {
            return Err(bad("parameter blocks do not match the architecture".into()));
        }
        let flat: Vec<f64> = blocks.concat();
        if flat.iter().chain(model.words.matrix()).any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        model.set_flat_params(&flat)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), MemError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemError> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl Parameterized for MemModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.trunk.visit_params(f);
        self.state_proj.visit_params(f);
        self.command_lstm.visit_params(f);
        self.command_proj.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.trunk.visit_params_mut(f);
        self.state_proj.visit_params_mut(f);
        self.command_lstm.visit_params_mut(f);
        self.command_proj.visit_params_mut(f);
    }
}
