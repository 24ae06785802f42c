//! Reference systems: majority class, question-word rule, and a word-level
//! BiLSTM classifier.

pub mod bilstm;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledQuery;
use crate::error::{Error, Result};

pub use bilstm::{BiLstmConfig, BiLstmModel};

/// Predicts the majority training label for every input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub label: u8,
}

impl MajorityBaseline {
    /// Ties go to label 0.
    pub fn fit(train: &[LabeledQuery]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("majority baseline training data"));
        }
        let positives = train.iter().filter(|q| q.label == 1).count();
        Ok(MajorityBaseline { label: u8::from(positives * 2 > train.len()) })
    }

    pub fn predict(&self) -> u8 {
        self.label
    }
}

const DEFAULT_QUESTION_WORDS: &str = include_str!("../../data/question_words.txt");

/// Lowercased words that mark a query as a question when they come first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionWordList {
    words: BTreeSet<String>,
}

impl Default for QuestionWordList {
    fn default() -> Self {
        Self::parse(DEFAULT_QUESTION_WORDS).expect("bundled question word list is valid")
    }
}

impl QuestionWordList {
    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let words: BTreeSet<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        if words.is_empty() {
            return Err(Error::Empty("question word list"));
        }
        Ok(QuestionWordList { words })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// 1 iff the first token is a question word; empty input is 0.
    pub fn classify<S: AsRef<str>>(&self, tokens: &[S]) -> u8 {
        tokens.first().map_or(0, |t| u8::from(self.contains(t.as_ref())))
    }
}
