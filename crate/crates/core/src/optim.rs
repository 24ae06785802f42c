//! Shared training machinery: momentum SGD over a flat parameter vector,
//! seeded mini-batch sampling, and best-on-dev bookkeeping.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Classic momentum: `v <- mu * v - lr * g`, `theta <- theta + v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(n_params: usize, learning_rate: f64, momentum: f64) -> Self {
        Momentum { learning_rate, momentum, velocity: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.velocity.len());
        debug_assert_eq!(grads.len(), self.velocity.len());
        let (mu, lr) = (self.momentum, self.learning_rate);
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
    }
}

/// Draws fixed-size batches from a permutation that is reshuffled every
/// time it is exhausted. Batches may straddle an epoch boundary.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut s = BatchSampler { order: (0..n).collect(), pos: n, rng };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        if self.order.is_empty() {
            return batch;
        }
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean training batch loss since the previous evaluation.
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub evals: Vec<EvalPoint>,
    pub final_step: usize,
    pub best_dev_accuracy: f64,
    pub best_step: usize,
}

impl TrainReport {
    /// `step<TAB>train_loss<TAB>dev_acc` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\ttrain_loss\tdev_acc\n");
        for e in &self.evals {
            s.push_str(&format!("{}\t{:.6}\t{:.6}\n", e.step, e.train_loss, e.dev_accuracy));
        }
        s
    }
}

/// Best grid value and every `(value, score)` pair evaluated.
pub type GridResult = Option<(f64, Vec<(f64, f64)>)>;

/// Picks the grid value with the best score; ties go to the smaller value.
pub fn argmax_grid<E>(
    grid: &[f64],
    mut score: impl FnMut(f64) -> Result<f64, E>,
) -> Result<GridResult, E> {
    let mut results = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &value in grid {
        let s = score(value)?;
        results.push((value, s));
        best = match best {
            None => Some((value, s)),
            Some((bv, bs)) if s > bs || (s == bs && value < bv) => Some((value, s)),
            keep => keep,
        };
    }
    Ok(best.map(|(v, _)| (v, results)))
}
