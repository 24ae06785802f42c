//! Classification accuracy and BLEU.
//!
//! BLEU is single-reference over pre-tokenized text. Corpus BLEU sums clipped
//! n-gram statistics over all sentences before taking precisions; the
//! sentence variant adds one to numerator and denominator of every order
//! above 1 so that a per-sentence score exists for oracle selection.

use std::collections::HashMap;
use std::hash::Hash;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub n: usize,
}

pub fn accuracy(predictions: &[u8], gold: &[u8]) -> Result<EvalResult> {
    if predictions.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Empty("accuracy needs at least one example"));
    }
    let mut r = EvalResult { n: gold.len(), ..Default::default() };
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p != 0, g != 0) {
            (true, true) => r.tp += 1,
            (true, false) => r.fp += 1,
            (false, false) => r.tn += 1,
            (false, true) => r.fn_ += 1,
        }
    }
    r.accuracy = (r.tp + r.tn) as f64 / r.n as f64;
    Ok(r)
}

/// Sufficient statistics for BLEU up to order 4. Additive over sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_BLEU_ORDER],
    pub totals: [u64; MAX_BLEU_ORDER],
    pub candidate_len: u64,
    pub reference_len: u64,
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

impl BleuStats {
    pub fn from_pair<T: Hash + Eq>(candidate: &[T], reference: &[T]) -> Self {
        let mut s = BleuStats {
            candidate_len: candidate.len() as u64,
            reference_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_BLEU_ORDER {
            let cand = ngram_counts(candidate, n);
            let refs = ngram_counts(reference, n);
            s.totals[n - 1] = candidate.len().saturating_sub(n - 1) as u64;
            s.matches[n - 1] =
                cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
        }
        s
    }

    fn brevity_penalty(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let ratio = self.reference_len as f64 / self.candidate_len as f64;
        (1.0 - ratio).min(0.0).exp()
    }

    /// Unsmoothed BLEU over orders `1..=max_order`; 0 if any order has no
    /// match.
    pub fn bleu(&self, max_order: usize) -> f64 {
        let mut log_sum = 0.0;
        for k in 0..max_order {
            if self.matches[k] == 0 || self.totals[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
        }
        self.brevity_penalty() * (log_sum / max_order as f64).exp()
    }

    /// Unigram precision as is, add-one on both counts for higher orders.
    pub fn smoothed_bleu(&self, max_order: usize) -> f64 {
        if self.candidate_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = (self.matches[0] as f64 / self.totals[0] as f64).ln();
        for k in 1..max_order {
            log_sum += ((self.matches[k] + 1) as f64 / (self.totals[k] + 1) as f64).ln();
        }
        self.brevity_penalty() * (log_sum / max_order as f64).exp()
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, o: BleuStats) {
        for k in 0..MAX_BLEU_ORDER {
            self.matches[k] += o.matches[k];
            self.totals[k] += o.totals[k];
        }
        self.candidate_len += o.candidate_len;
        self.reference_len += o.reference_len;
    }
}

impl Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, o: BleuStats) -> BleuStats {
        self += o;
        self
    }
}

impl std::iter::Sum for BleuStats {
    fn sum<I: Iterator<Item = BleuStats>>(iter: I) -> BleuStats {
        iter.fold(BleuStats::default(), Add::add)
    }
}

fn check_order(max_order: usize) -> Result<()> {
    if !(1..=MAX_BLEU_ORDER).contains(&max_order) {
        return Err(Error::InvalidArgument(format!("BLEU order {max_order} outside 1..=4")));
    }
    Ok(())
}

/// Summed statistics over aligned candidate/reference pairs.
pub fn corpus_stats<T: Hash + Eq, C: AsRef<[T]>, R: AsRef<[T]>>(
    candidates: &[C],
    references: &[R],
) -> Result<BleuStats> {
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    Ok(candidates
        .iter()
        .zip(references)
        .map(|(c, r)| BleuStats::from_pair(c.as_ref(), r.as_ref()))
        .sum())
}

pub fn bleu_corpus<T: Hash + Eq, C: AsRef<[T]>, R: AsRef<[T]>>(
    candidates: &[C],
    references: &[R],
    max_order: usize,
) -> Result<f64> {
    check_order(max_order)?;
    Ok(corpus_stats(candidates, references)?.bleu(max_order))
}

pub fn bleu_sentence_smoothed<T: Hash + Eq>(
    candidate: &[T],
    reference: &[T],
    max_order: usize,
) -> Result<f64> {
    check_order(max_order)?;
    Ok(BleuStats::from_pair(candidate, reference).smoothed_bleu(max_order))
}
