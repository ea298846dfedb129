//! Tokenization, vocabulary and skip-gram word vectors trained on the bundled corpus.

mod corpus;
mod skipgram;
mod vocab;

pub use corpus::{Corpus, CorpusReport, BUNDLED_CORPUS};
pub use skipgram::{train_skipgram, SkipGramConfig, WordEmbeddings};
pub use vocab::{Vocab, UNK, UNK_TOKEN};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("corpus has no usable sentences")]
    EmptyCorpus,
    #[error("corpus check failed: {0}")]
    CorpusCheck(String),
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases, splits on whitespace and strips punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty() && w.chars().any(char::is_alphanumeric))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::tokenize;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Build a supply depot"), ["build", "a", "supply", "depot"]);
        assert_eq!(tokenize("click on the barracks."), ["click", "on", "the", "barracks"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ?! ... ").is_empty());
        assert_eq!(tokenize("Left-click  THE\tBarracks!"), ["leftclick", "the", "barracks"]);
    }
}
