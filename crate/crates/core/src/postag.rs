//! Part-of-speech tagging for queries.
//!
//! A greedy left-to-right averaged perceptron, trained from CoNLL-style
//! column files. Queries can also come with tags produced elsewhere, through
//! the pre-tagged TSV reader.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    tokens: Vec<String>,
    tags: Vec<String>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        Ok(TaggedSentence { tokens, tags })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<String>) {
        (self.tokens, self.tags)
    }
}

/// Zero-based column indices of the token and the POS tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConllColumns {
    pub token: usize,
    pub pos: usize,
}

impl ConllColumns {
    /// Two-column `token tag` files.
    pub const PLAIN: ConllColumns = ConllColumns { token: 0, pos: 1 };
    /// CoNLL-U with Penn tags in XPOS.
    pub const CONLLU_XPOS: ConllColumns = ConllColumns { token: 1, pos: 4 };
}

impl Default for ConllColumns {
    fn default() -> Self {
        ConllColumns::PLAIN
    }
}

/// Reads blank-line separated sentences. Lines starting with `#` are comments;
/// rows whose first column is a CoNLL-U range or empty node id (`3-4`, `5.1`)
/// are skipped. Columns split on tabs when the line has one, on whitespace
/// otherwise.
pub fn parse_conll<R: BufRead>(reader: R, columns: ConllColumns) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut width: Option<usize> = None;
    let needed = columns.token.max(columns.pos) + 1;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(TaggedSentence::new(
                    std::mem::take(&mut tokens),
                    std::mem::take(&mut tags),
                )?);
            }
            width = None;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if is_multiword_id(cols[0]) {
            continue;
        }
        if cols.len() < needed {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected at least {needed} columns, found {}", cols.len()),
            });
        }
        match width {
            Some(w) if w != cols.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("ragged row: {} columns after {w}", cols.len()),
                })
            }
            _ => width = Some(cols.len()),
        }
        let token = cols[columns.token].trim();
        let tag = cols[columns.pos].trim();
        if token.is_empty() || tag.is_empty() || tag == "_" {
            return Err(Error::Parse { line: lineno, message: "empty token or tag".into() });
        }
        tokens.push(token.to_string());
        tags.push(tag.to_string());
    }
    if !tokens.is_empty() {
        sentences.push(TaggedSentence::new(tokens, tags)?);
    }
    Ok(sentences)
}

fn is_multiword_id(col: &str) -> bool {
    let mut parts = col.splitn(2, ['-', '.']);
    let (a, b) = (parts.next(), parts.next());
    matches!((a, b), (Some(a), Some(b))
        if !a.is_empty() && !b.is_empty()
            && a.bytes().all(|c| c.is_ascii_digit())
            && b.bytes().all(|c| c.is_ascii_digit()))
}

pub fn load_conll(path: impl AsRef<Path>, columns: ConllColumns) -> Result<Vec<TaggedSentence>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_conll(std::io::BufReader::new(file), columns)
}

const START: [&str; 2] = ["-START-", "-START2-"];
const END: &str = "-END-";

/// Feature strings for token `i` given the two previously predicted tags.
pub fn tagger_features(tokens: &[String], i: usize, prev: &str, prev2: &str) -> Vec<String> {
    let word = tokens[i].as_str();
    let lower = word.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let suffix = |n: usize| -> String { chars[chars.len().saturating_sub(n)..].iter().collect() };

    let mut f = Vec::with_capacity(16);
    f.push("bias".to_string());
    f.push(format!("w={word}"));
    f.push(format!("lw={lower}"));
    f.push(format!("s1={}", suffix(1)));
    f.push(format!("s2={}", suffix(2)));
    f.push(format!("s3={}", suffix(3)));
    f.push(format!("p1={}", chars.first().map(|c| c.to_string()).unwrap_or_default()));
    if word.chars().any(|c| c.is_ascii_digit()) {
        f.push("has-digit".to_string());
    }
    if word.contains('-') {
        f.push("has-hyphen".to_string());
    }
    if word.chars().next().is_some_and(char::is_uppercase) {
        f.push("is-cap".to_string());
    }
    let pw = if i == 0 { START[0].to_string() } else { tokens[i - 1].to_lowercase() };
    let nw = tokens.get(i + 1).map(|w| w.to_lowercase()).unwrap_or_else(|| END.to_string());
    f.push(format!("pw={pw}"));
    f.push(format!("nw={nw}"));
    f.push(format!("pt={prev}"));
    f.push(format!("pt2={prev2} {prev}"));
    f
}

#[derive(Debug, Clone, Copy)]
struct Param {
    class: u16,
    weight: f64,
    total: f64,
    stamp: u64,
}

/// Multiclass perceptron with lazily accumulated weight averages.
///
/// After `n` calls to [`update`](Self::update), [`average`](Self::average)
/// returns the mean of the `n` weight vectors observed after each call.
#[derive(Debug, Clone, Default)]
pub struct AveragedPerceptron {
    classes: usize,
    steps: u64,
    params: HashMap<String, Vec<Param>>,
}

impl AveragedPerceptron {
    pub fn new(classes: usize) -> Self {
        AveragedPerceptron { classes, steps: 0, params: HashMap::new() }
    }

    pub fn scores<S: AsRef<str>>(&self, features: &[S]) -> Vec<f64> {
        let mut scores = vec![0.0; self.classes];
        for f in features {
            if let Some(ps) = self.params.get(f.as_ref()) {
                for p in ps {
                    scores[p.class as usize] += p.weight;
                }
            }
        }
        scores
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict<S: AsRef<str>>(&self, features: &[S]) -> usize {
        argmax(&self.scores(features))
    }

    /// Current (not averaged) weight of `feature` for `class`.
    pub fn weight(&self, feature: &str, class: usize) -> f64 {
        self.params
            .get(feature)
            .and_then(|ps| ps.iter().find(|p| p.class as usize == class))
            .map_or(0.0, |p| p.weight)
    }

    /// One training instance: counts a step, and moves weight from `guess`
    /// to `truth` on every feature when they differ.
    pub fn update<S: AsRef<str>>(&mut self, truth: usize, guess: usize, features: &[S]) {
        self.steps += 1;
        if truth == guess {
            return;
        }
        let step = self.steps;
        for f in features {
            let ps = match self.params.get_mut(f.as_ref()) {
                Some(ps) => ps,
                None => self.params.entry(f.as_ref().to_string()).or_default(),
            };
            for (class, delta) in [(truth, 1.0), (guess, -1.0)] {
                let idx = match ps.iter().position(|p| p.class as usize == class) {
                    Some(i) => i,
                    None => {
                        ps.push(Param { class: class as u16, weight: 0.0, total: 0.0, stamp: step });
                        ps.len() - 1
                    }
                };
                let p = &mut ps[idx];
                // The old weight was in force for snapshots stamp..step-1.
                p.total += (step - p.stamp) as f64 * p.weight;
                p.stamp = step;
                p.weight += delta;
            }
        }
    }

    /// Averaged weights, sparse per feature and sorted by class; zero
    /// averages are dropped.
    pub fn average(&self) -> HashMap<String, Vec<(u16, f64)>> {
        let n = self.steps.max(1) as f64;
        self.params
            .iter()
            .filter_map(|(f, ps)| {
                let mut avg: Vec<(u16, f64)> = ps
                    .iter()
                    .map(|p| {
                        let total = p.total + (self.steps - p.stamp + 1) as f64 * p.weight;
                        (p.class, total / n)
                    })
                    .filter(|&(_, w)| w != 0.0)
                    .collect();
                avg.sort_by_key(|&(c, _)| c);
                (!avg.is_empty()).then(|| (f.clone(), avg))
            })
            .collect()
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub const TAGGER_FORMAT_VERSION: u32 = 1;

/// A trained, frozen tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptronTagger {
    format_version: u32,
    tagset: Vec<String>,
    /// Lowercase tokens before feature extraction (set when trained on a
    /// lowercased corpus).
    lowercase: bool,
    epochs: usize,
    seed: u64,
    weights: BTreeMap<String, Vec<(u16, f64)>>,
}

/// Training options for [`PerceptronTagger`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaggerTrainer {
    pub epochs: usize,
    pub seed: u64,
    pub lowercase: bool,
}

impl Default for TaggerTrainer {
    fn default() -> Self {
        TaggerTrainer { epochs: 5, seed: 0, lowercase: false }
    }
}

impl TaggerTrainer {
    pub fn train(&self, corpus: &[TaggedSentence]) -> Result<PerceptronTagger> {
        if corpus.is_empty() {
            return Err(Error::Empty("tagger training corpus"));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        let mut tagset: Vec<String> = corpus.iter().flat_map(|s| s.tags.iter().cloned()).collect();
        tagset.sort();
        tagset.dedup();
        if tagset.len() > usize::from(u16::MAX) {
            return Err(Error::InvalidArgument("tagset too large".into()));
        }
        let tag_index: HashMap<&str, usize> =
            tagset.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

        let sentences: Vec<(Vec<String>, Vec<usize>)> = corpus
            .iter()
            .map(|s| {
                let tokens = if self.lowercase {
                    s.tokens.iter().map(|t| t.to_lowercase()).collect()
                } else {
                    s.tokens.clone()
                };
                (tokens, s.tags.iter().map(|t| tag_index[t.as_str()]).collect())
            })
            .collect();

        let mut model = AveragedPerceptron::new(tagset.len());
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        let mut rng = seed::rng(self.seed, "tagger-shuffle");
        for epoch in 0..self.epochs {
            order.shuffle(&mut rng);
            let mut correct = 0usize;
            let mut total = 0usize;
            for &si in &order {
                let (tokens, gold) = &sentences[si];
                let (mut prev, mut prev2) = (START[0], START[1]);
                for (i, &g) in gold.iter().enumerate() {
                    let feats = tagger_features(tokens, i, prev, prev2);
                    let guess = model.predict(&feats);
                    model.update(g, guess, &feats);
                    correct += usize::from(guess == g);
                    total += 1;
                    prev2 = prev;
                    prev = &tagset[guess];
                }
            }
            log::debug!("tagger epoch {}: train accuracy {:.4}", epoch + 1, correct as f64 / total.max(1) as f64);
        }

        Ok(PerceptronTagger {
            format_version: TAGGER_FORMAT_VERSION,
            tagset,
            lowercase: self.lowercase,
            epochs: self.epochs,
            seed: self.seed,
            weights: model.average().into_iter().collect(),
        })
    }
}

/// Trains with default options except `epochs` and `seed`.
pub fn train_tagger(corpus: &[TaggedSentence], epochs: usize, seed: u64) -> Result<PerceptronTagger> {
    TaggerTrainer { epochs, seed, ..Default::default() }.train(corpus)
}

impl PerceptronTagger {
    pub fn tagset(&self) -> &[String] {
        &self.tagset
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    fn scores(&self, features: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.tagset.len()];
        for f in features {
            if let Some(ws) = self.weights.get(f) {
                for &(c, w) in ws {
                    scores[c as usize] += w;
                }
            }
        }
        scores
    }

    /// Greedy left-to-right tagging; one tag per token.
    pub fn tag<S: AsRef<str>>(&self, tokens: &[S]) -> TaggedSentence {
        let original: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let normalized: Vec<String> = if self.lowercase {
            original.iter().map(|t| t.to_lowercase()).collect()
        } else {
            original.clone()
        };
        let mut tags: Vec<String> = Vec::with_capacity(tokens.len());
        for i in 0..normalized.len() {
            let prev = if i >= 1 { tags[i - 1].as_str() } else { START[0] };
            let prev2 = match i {
                0 => START[1],
                1 => START[0],
                _ => tags[i - 2].as_str(),
            };
            let feats = tagger_features(&normalized, i, prev, prev2);
            let best = argmax(&self.scores(&feats));
            tags.push(self.tagset[best].clone());
        }
        TaggedSentence { tokens: original, tags }
    }

    /// Token accuracy against gold sentences.
    pub fn accuracy(&self, gold: &[TaggedSentence]) -> f64 {
        let (mut correct, mut total) = (0usize, 0usize);
        for s in gold {
            let out = self.tag(&s.tokens);
            correct += out.tags.iter().zip(&s.tags).filter(|(a, b)| a == b).count();
            total += s.len();
        }
        if total == 0 {
            return 0.0;
        }
        correct as f64 / total as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let tagger: PerceptronTagger = serde_json::from_str(s)?;
        if tagger.format_version != TAGGER_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "tagger version {} (expected {TAGGER_FORMAT_VERSION})",
                tagger.format_version
            )));
        }
        if tagger.tagset.is_empty() {
            return Err(Error::Format("tagger has an empty tagset".into()));
        }
        let n = tagger.tagset.len();
        if tagger.weights.values().flatten().any(|&(c, _)| usize::from(c) >= n) {
            return Err(Error::Format("tagger weight refers to an unknown tag".into()));
        }
        Ok(tagger)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Reads `query<TAB>tokens<TAB>tags` rows (tokens and tags space separated).
/// Later duplicates replace earlier ones with a warning.
pub fn parse_pretagged<R: BufRead>(reader: R) -> Result<HashMap<String, TaggedSentence>> {
    let mut out = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let tokens: Vec<String> = cols[1].split_whitespace().map(String::from).collect();
        let tags: Vec<String> = cols[2].split_whitespace().map(String::from).collect();
        let sentence = TaggedSentence::new(tokens, tags)
            .map_err(|e| Error::Validation { line: lineno, message: e.to_string() })?;
        if out.insert(cols[0].to_string(), sentence).is_some() {
            log::warn!("line {lineno}: duplicate pre-tagged query {:?}, keeping the later one", cols[0]);
        }
    }
    Ok(out)
}

pub fn load_pretagged(path: impl AsRef<Path>) -> Result<HashMap<String, TaggedSentence>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pretagged(std::io::BufReader::new(file))
}
