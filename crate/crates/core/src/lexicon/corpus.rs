use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use super::{tokenize, LexiconError};

/// Authored corpus of game sentences covering both command phrasings.
pub const BUNDLED_CORPUS: &str = include_str!("../../data/corpus.txt");

/// One lowercase sentence per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sentences: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusReport {
    pub sentences: usize,
    pub token_counts: Vec<(String, usize)>,
    pub passed: bool,
    pub failures: Vec<String>,
}

impl Corpus {
    pub fn parse(text: &str) -> Self {
        Self {
            sentences: text.lines().map(tokenize).filter(|s| !s.is_empty()).collect(),
        }
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_CORPUS)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn occurrences(&self) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for t in self.sentences.iter().flatten() {
            *m.entry(t.as_str()).or_default() += 1;
        }
        m
    }

    /// Verifies the corpus size and that every required token occurs often enough.
    pub fn check(&self, required: &[String], min_sentences: usize, min_occurrences: usize) -> CorpusReport {
        let occ = self.occurrences();
        let mut failures = Vec::new();
        if self.len() < min_sentences {
            failures.push(format!("{} sentences, need {min_sentences}", self.len()));
        }
        let mut token_counts = Vec::new();
        for t in required {
            let n = occ.get(t.as_str()).copied().unwrap_or(0);
            if n < min_occurrences {
                failures.push(format!("token {t:?} occurs {n} times, need {min_occurrences}"));
            }
            token_counts.push((t.clone(), n));
        }
        CorpusReport {
            sentences: self.len(),
            token_counts,
            passed: failures.is_empty(),
            failures,
        }
    }
}
