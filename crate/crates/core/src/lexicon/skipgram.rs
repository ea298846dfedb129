use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, LexiconError, Vocab, UNK};
use crate::nn::{read_raw, write_raw, LayerSpec, ModelHeader, Tensor};

const MODEL_KIND: &str = "word-embeddings";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 2,
            negatives: 5,
            epochs: 30,
            lr: 0.025,
            min_count: 2,
            seed: 7,
        }
    }
}

/// Unit-normalized word vectors. The unknown-word row is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddings {
    vocab: Vocab,
    dim: usize,
    vectors: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cumulative unigram^0.75 table over known words.
fn noise_table(vocab: &Vocab) -> Vec<f64> {
    let mut acc = 0.0;
    vocab
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if i != UNK {
                acc += (c as f64).powf(0.75);
            }
            acc
        })
        .collect()
}

fn sample_noise(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cdf.last().expect("non-empty table");
    let r = rng.gen::<f64>() * total;
    cdf.partition_point(|&c| c <= r).min(cdf.len() - 1)
}

/// Trains skip-gram with negative sampling. Returns the embeddings and the
/// mean loss per positive pair for every epoch.
pub fn train_skipgram(
    corpus: &Corpus,
    vocab: &Vocab,
    config: &SkipGramConfig,
) -> Result<(WordEmbeddings, Vec<f64>), LexiconError> {
    if corpus.is_empty() || vocab.is_empty() {
        return Err(LexiconError::EmptyCorpus);
    }
    let d = config.dim;
    let n = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w_in: Vec<f64> = (0..n * d).map(|_| (rng.gen::<f64>() - 0.5) / d as f64).collect();
    let mut w_out = vec![0.0; n * d];
    let cdf = noise_table(vocab);
    let encoded: Vec<Vec<usize>> = corpus.sentences().iter().map(|s| vocab.encode(s)).collect();
    let total_pairs: usize = encoded.len() * config.epochs.max(1);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut grad_in = vec![0.0; d];
    let mut losses = Vec::with_capacity(config.epochs);
    let mut seen = 0usize;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for &si in &order {
            let lr = config.lr * (1.0 - seen as f64 / total_pairs as f64).max(1e-4);
            seen += 1;
            let sent = &encoded[si];
            for (ci, &center) in sent.iter().enumerate() {
                if center == UNK {
                    continue;
                }
                let lo = ci.saturating_sub(config.window);
                let hi = (ci + config.window + 1).min(sent.len());
                for (oi, &ctx) in sent.iter().enumerate().take(hi).skip(lo) {
                    if oi == ci || ctx == UNK {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let v = center * d..(center + 1) * d;
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (ctx, 1.0)
                        } else {
                            let t = sample_noise(&cdf, &mut rng);
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = target * d..(target + 1) * d;
                        let dot: f64 = w_in[v.clone()].iter().zip(&w_out[u.clone()]).map(|(a, b)| a * b).sum();
                        let p = sigmoid(dot);
                        loss -= if label > 0.0 { p.max(1e-12).ln() } else { (1.0 - p).max(1e-12).ln() };
                        let g = lr * (label - p);
                        for j in 0..d {
                            grad_in[j] += g * w_out[u.start + j];
                            w_out[u.start + j] += g * w_in[v.start + j];
                        }
                    }
                    for j in 0..d {
                        w_in[v.start + j] += grad_in[j];
                    }
                    pairs += 1;
                }
            }
        }
        losses.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
    }

    Ok((WordEmbeddings::from_raw(vocab.clone(), d, w_in), losses))
}

impl WordEmbeddings {
    /// Normalizes every row to unit length and zeroes the unknown-word row.
    pub fn from_raw(vocab: Vocab, dim: usize, mut vectors: Vec<f64>) -> Self {
        for (i, row) in vectors.chunks_exact_mut(dim).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if i == UNK || norm == 0.0 {
                row.iter_mut().for_each(|x| *x = 0.0);
            } else {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Self { vocab, dim, vectors }
    }

    /// Wraps an already normalized table without touching it.
    pub(crate) fn from_parts(vocab: Vocab, dim: usize, vectors: Vec<f64>) -> Self {
        Self { vocab, dim, vectors }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Row-major `[|V|, dim]` table.
    pub fn matrix(&self) -> &[f64] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn vector(&self, word: &str) -> Result<&[f64], LexiconError> {
        match self.vocab.id(word) {
            UNK => Err(LexiconError::UnknownWord(word.to_string())),
            id => Ok(self.row(id)),
        }
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64, LexiconError> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        Ok(va.iter().zip(vb).map(|(x, y)| x * y).sum())
    }

    /// The `k` most similar known words to `word`, excluding itself.
    pub fn nearest_words(&self, word: &str, k: usize) -> Result<Vec<(String, f64)>, LexiconError> {
        let id = self.vocab.id(word);
        let v = self.vector(word)?;
        let mut scored: Vec<(usize, f64)> = (1..self.vocab.len())
            .filter(|&j| j != id)
            .map(|j| (j, v.iter().zip(self.row(j)).map(|(x, y)| x * y).sum()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(k).map(|(j, s)| (self.vocab.token(j).to_string(), s)).collect())
    }

    /// Stacks the word vectors of `tokens` into a `[T, dim]` tensor. Unknown
    /// words map to the zero row.
    pub fn embed_tokens(&self, tokens: &[String]) -> Tensor {
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            data.extend_from_slice(self.row(self.vocab.id(t)));
        }
        Tensor::new(vec![tokens.len(), self.dim], data).expect("consistent shape")
    }

    fn header(&self) -> ModelHeader {
        ModelHeader {
            kind: MODEL_KIND.into(),
            layers: vec![LayerSpec::Embedding {
                vocab: self.vocab.len(),
                dim: self.dim,
            }],
            meta: serde_json::json!({ "tokens": self.vocab.tokens(), "counts": self.vocab.counts() }),
        }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), LexiconError> {
        Ok(write_raw(w, &self.header(), &[&self.vectors])?)
    }

    pub fn read(r: &mut impl Read) -> Result<Self, LexiconError> {
        let (header, blocks) = read_raw(r)?;
        if header.kind != MODEL_KIND {
            return Err(LexiconError::Format(format!("unexpected model kind {:?}", header.kind)));
        }
        let (vocab_len, dim) = match header.layers.as_slice() {
            [LayerSpec::Embedding { vocab, dim }] => (*vocab, *dim),
            other => return Err(LexiconError::Format(format!("unexpected layers {other:?}"))),
        };
        let tokens: Vec<String> = serde_json::from_value(header.meta["tokens"].clone())
            .map_err(|e| LexiconError::Format(e.to_string()))?;
        let counts: Vec<u64> = serde_json::from_value(header.meta["counts"].clone())
            .map_err(|e| LexiconError::Format(e.to_string()))?;
        if tokens.len() != vocab_len || counts.len() != vocab_len || blocks.len() != 1 || blocks[0].len() != vocab_len * dim {
            return Err(LexiconError::Format("embedding table does not match its header".into()));
        }
        if blocks[0].iter().any(|x| !x.is_finite()) {
            return Err(LexiconError::Format("non-finite embedding value".into()));
        }
        let vectors = blocks.into_iter().next().expect("one block");
        Ok(Self {
            vocab: Vocab::from_parts(tokens, counts),
            dim,
            vectors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LexiconError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
