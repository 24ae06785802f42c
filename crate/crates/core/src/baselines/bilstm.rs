//! Single-layer word-level bidirectional LSTM classifier.
//!
//! The forward LSTM reads the query left to right, the backward LSTM right to
//! left; their final hidden states are concatenated and fed to an affine
//! layer with a two-way softmax. Gradients are exact (backpropagation
//! through time) and the optimizer is the same momentum SGD as the
//! feed-forward classifier.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::ffnet::{cross_entropy, glorot, softmax2, Block, TargetMode};
use crate::optim::{BatchSampler, EvalPoint, Momentum, TrainReport};
use crate::seed;

pub const MODEL_KIND: &str = "bilstm";
pub const UNK: &str = "<unk>";
pub const PAD: &str = "<s>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub min_count: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
    pub threshold: f64,
}

impl Default for BiLstmConfig {
    fn default() -> Self {
        BiLstmConfig {
            embed_dim: 50,
            hidden: 50,
            min_count: 2,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 32,
            train_steps: 10_000,
            eval_every: 1_000,
            seed: 1,
            target_mode: TargetMode::Hard,
            threshold: 0.8,
        }
    }
}

impl BiLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("embed_dim and hidden must be positive".into()));
        }
        if self.batch_size == 0 || self.train_steps == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, train_steps and eval_every must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::InvalidArgument("learning_rate must be in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn target(&self, p_wf: f64) -> f64 {
        match self.target_mode {
            TargetMode::Soft => p_wf,
            TargetMode::Hard => f64::from(u8::from(p_wf >= self.threshold - 1e-9)),
        }
    }
}

/// Word vocabulary; id 0 is the unknown word, id 1 the padding token used
/// for empty queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Words with at least `min_count` occurrences, in first-seen order.
    pub fn build<'a, I, S>(sentences: I, min_count: usize) -> Vocab
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for s in sentences {
            for w in s {
                let c = counts.entry(w.as_ref()).or_insert_with(|| {
                    order.push(w.as_ref());
                    0
                });
                *c += 1;
            }
        }
        let mut words = vec![UNK.to_string(), PAD.to_string()];
        words.extend(
            order
                .into_iter()
                .filter(|w| counts[w] >= min_count && *w != UNK && *w != PAD)
                .map(String::from),
        );
        Self::from_words(words)
    }

    fn from_words(words: Vec<String>) -> Vocab {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Ids for a token sequence; OOV maps to UNK, empty input to `[<s>]`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        if tokens.is_empty() {
            return vec![1];
        }
        tokens.iter().map(|t| self.index.get(t.as_ref()).copied().unwrap_or(0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmLayout {
    pub embedding: Block,
    /// Gate weights, rows ordered input, forget, candidate, output; columns
    /// are `[x; h_prev]`.
    pub fwd_w: Block,
    pub fwd_b: Block,
    pub bwd_w: Block,
    pub bwd_b: Block,
    pub out_w: Block,
    pub out_b: Block,
    pub total: usize,
}

impl LstmLayout {
    fn new(vocab: usize, embed: usize, hidden: usize) -> LstmLayout {
        let mut offset = 0;
        let mut alloc = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let embedding = alloc(vocab, embed);
        let fwd_w = alloc(4 * hidden, embed + hidden);
        let fwd_b = alloc(4 * hidden, 1);
        let bwd_w = alloc(4 * hidden, embed + hidden);
        let bwd_b = alloc(4 * hidden, 1);
        let out_w = alloc(2, 2 * hidden);
        let out_b = alloc(2, 1);
        LstmLayout { embedding, fwd_w, fwd_b, bwd_w, bwd_b, out_w, out_b, total: offset }
    }

    pub fn blocks(&self) -> Vec<(&'static str, Block)> {
        vec![
            ("embedding", self.embedding),
            ("fwd_w", self.fwd_w),
            ("fwd_b", self.fwd_b),
            ("bwd_w", self.bwd_w),
            ("bwd_b", self.bwd_b),
            ("out_w", self.out_w),
            ("out_b", self.out_b),
        ]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-step values kept for backpropagation.
#[derive(Debug, Clone)]
struct Step {
    input: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Runs one direction over `ids` (already in processing order); returns the
/// final hidden state and the per-step cache.
fn run_direction(
    params: &[f64],
    emb: Block,
    w: Block,
    b: Block,
    hidden: usize,
    ids: &[u32],
) -> (Vec<f64>, Vec<Step>) {
    let e = emb.cols;
    let weights = &params[w.range()];
    let bias = &params[b.range()];
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut steps = Vec::with_capacity(ids.len());
    for &id in ids {
        let row = emb.offset + id as usize * e;
        let mut input = Vec::with_capacity(e + hidden);
        input.extend_from_slice(&params[row..row + e]);
        input.extend_from_slice(&h);
        let z: Vec<f64> = weights
            .chunks_exact(e + hidden)
            .zip(bias)
            .map(|(r, &bb)| bb + r.iter().zip(&input).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        let i: Vec<f64> = z[..hidden].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hidden..3 * hidden].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hidden..].iter().map(|&v| sigmoid(v)).collect();
        let c_prev = c.clone();
        for k in 0..hidden {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
        }
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        for k in 0..hidden {
            h[k] = o[k] * tanh_c[k];
        }
        steps.push(Step { input, i, f, g, o, c_prev, tanh_c });
    }
    (h, steps)
}

/// Backpropagates `dh_final` through one direction, accumulating into `grad`.
#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    params: &[f64],
    emb: Block,
    w: Block,
    b: Block,
    hidden: usize,
    ids: &[u32],
    steps: &[Step],
    dh_final: &[f64],
    grad: &mut [f64],
) {
    let e = emb.cols;
    let cols = e + hidden;
    let weights = &params[w.range()];
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; hidden];
    let mut dz = vec![0.0; 4 * hidden];
    for (t, s) in steps.iter().enumerate().rev() {
        for k in 0..hidden {
            let d_o = dh[k] * s.tanh_c[k];
            let dck = dc[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let di = dck * s.g[k];
            let dg = dck * s.i[k];
            let df = dck * s.c_prev[k];
            dc[k] = dck * s.f[k];
            dz[k] = di * s.i[k] * (1.0 - s.i[k]);
            dz[hidden + k] = df * s.f[k] * (1.0 - s.f[k]);
            dz[2 * hidden + k] = dg * (1.0 - s.g[k] * s.g[k]);
            dz[3 * hidden + k] = d_o * s.o[k] * (1.0 - s.o[k]);
        }
        let mut dinput = vec![0.0; cols];
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[b.offset + r] += d;
            let row = w.offset + r * cols;
            let wrow = &weights[r * cols..(r + 1) * cols];
            for j in 0..cols {
                grad[row + j] += d * s.input[j];
                dinput[j] += d * wrow[j];
            }
        }
        let erow = emb.offset + ids[t] as usize * e;
        for j in 0..e {
            grad[erow + j] += dinput[j];
        }
        dh.copy_from_slice(&dinput[e..]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BiLstmHeader {
    config: BiLstmConfig,
    vocab: Vec<String>,
    layout: LstmLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmModel {
    config: BiLstmConfig,
    vocab: Vocab,
    layout: LstmLayout,
    params: Vec<f64>,
}

impl BiLstmModel {
    /// Embeddings uniform(-0.1, 0.1), Glorot-uniform gate and output weights,
    /// zero biases except the forget gate at 1.
    pub fn init(config: BiLstmConfig, vocab: Vocab) -> Result<BiLstmModel> {
        config.validate()?;
        let (e, h) = (config.embed_dim, config.hidden);
        let layout = LstmLayout::new(vocab.len(), e, h);
        let mut params = vec![0.0; layout.total];
        let mut rng = seed::rng(config.seed, "bilstm-init");
        for p in &mut params[layout.embedding.range()] {
            *p = rng.random_range(-0.1..0.1);
        }
        for (w, b) in [(layout.fwd_w, layout.fwd_b), (layout.bwd_w, layout.bwd_b)] {
            glorot(&mut rng, &mut params[w.range()], e + h, 4 * h);
            for p in &mut params[b.offset + h..b.offset + 2 * h] {
                *p = 1.0;
            }
        }
        glorot(&mut rng, &mut params[layout.out_w.range()], 2 * h, 2);
        Ok(BiLstmModel { config, vocab, layout, params })
    }

    pub fn config(&self) -> &BiLstmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn layout(&self) -> &LstmLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Concatenated `[h_forward_final; h_backward_final]`.
    pub fn encode_with(&self, params: &[f64], ids: &[u32]) -> Result<Vec<f64>> {
        self.check_ids(ids)?;
        let l = &self.layout;
        let h = self.config.hidden;
        let (hf, _) = run_direction(params, l.embedding, l.fwd_w, l.fwd_b, h, ids);
        let rev: Vec<u32> = ids.iter().rev().copied().collect();
        let (hb, _) = run_direction(params, l.embedding, l.bwd_w, l.bwd_b, h, &rev);
        Ok([hf, hb].concat())
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty id sequence".into()));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
            return Err(Error::FeatureOutOfRange { family: "bilstm-vocab", id, size: self.vocab.len() });
        }
        Ok(())
    }

    fn logits_from(&self, params: &[f64], rep: &[f64]) -> [f64; 2] {
        let l = &self.layout;
        let w = &params[l.out_w.range()];
        let b = &params[l.out_b.range()];
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            *o = b[k] + w[k * rep.len()..(k + 1) * rep.len()].iter().zip(rep).map(|(a, x)| a * x).sum::<f64>();
        }
        out
    }

    pub fn forward_ids_with(&self, params: &[f64], ids: &[u32]) -> Result<f64> {
        let rep = self.encode_with(params, ids)?;
        Ok(softmax2(self.logits_from(params, &rep))[1])
    }

    /// Well-formedness probability of a token sequence.
    pub fn forward<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64> {
        self.forward_ids_with(&self.params, &self.vocab.encode(tokens))
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<u8> {
        Ok(u8::from(self.forward(tokens)? > 0.5))
    }

    /// Mean cross-entropy over `batch`, adding its gradient into `grad`.
    pub fn accumulate_gradients(
        &self,
        params: &[f64],
        batch: &[(&[u32], f64)],
        grad: &mut [f64],
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        let l = &self.layout;
        let h = self.config.hidden;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(ids, t) in batch {
            self.check_ids(ids)?;
            let (hf, steps_f) = run_direction(params, l.embedding, l.fwd_w, l.fwd_b, h, ids);
            let rev: Vec<u32> = ids.iter().rev().copied().collect();
            let (hb, steps_b) = run_direction(params, l.embedding, l.bwd_w, l.bwd_b, h, &rev);
            let rep = [hf, hb].concat();
            let probs = softmax2(self.logits_from(params, &rep));
            loss += cross_entropy(probs, t);

            let dz = [(probs[0] - (1.0 - t)) * scale, (probs[1] - t) * scale];
            let w = &params[l.out_w.range()];
            let mut drep = vec![0.0; 2 * h];
            for (k, &d) in dz.iter().enumerate() {
                grad[l.out_b.offset + k] += d;
                for j in 0..2 * h {
                    grad[l.out_w.offset + k * 2 * h + j] += d * rep[j];
                    drep[j] += d * w[k * 2 * h + j];
                }
            }
            backprop_direction(params, l.embedding, l.fwd_w, l.fwd_b, h, ids, &steps_f, &drep[..h], grad);
            backprop_direction(params, l.embedding, l.bwd_w, l.bwd_b, h, &rev, &steps_b, &drep[h..], grad);
        }
        Ok(loss * scale)
    }

    pub fn loss_with(&self, params: &[f64], batch: &[(Vec<u32>, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (ids, t) in batch {
            let p = self.forward_ids_with(params, ids)?;
            total += cross_entropy([1.0 - p, p], *t);
        }
        Ok(total / batch.len() as f64)
    }

    pub fn loss_and_gradients(&self, batch: &[(Vec<u32>, f64)]) -> Result<(f64, Vec<f64>)> {
        let refs: Vec<(&[u32], f64)> = batch.iter().map(|(ids, t)| (ids.as_slice(), *t)).collect();
        let mut grad = vec![0.0; self.layout.total];
        let loss = self.accumulate_gradients(&self.params, &refs, &mut grad)?;
        Ok((loss, grad))
    }

    fn accuracy_ids(&self, params: &[f64], data: &[(Vec<u32>, u8)]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for (ids, label) in data {
            let p = self.forward_ids_with(params, ids)?;
            correct += usize::from(u8::from(p > 0.5) == *label);
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = BiLstmHeader {
            config: self.config.clone(),
            vocab: self.vocab.words.clone(),
            layout: self.layout.clone(),
        };
        container::encode(MODEL_KIND, &header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<BiLstmModel> {
        let (header, params): (BiLstmHeader, Vec<f64>) = container::decode(bytes, MODEL_KIND)?;
        let vocab = Vocab::from_words(header.vocab);
        let layout = LstmLayout::new(vocab.len(), header.config.embed_dim, header.config.hidden);
        if layout != header.layout || params.len() != layout.total {
            return Err(Error::Format("vocabulary does not match the stored parameter shapes".into()));
        }
        Ok(BiLstmModel { config: header.config, vocab, layout, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BiLstmModel> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Trains with momentum SGD and returns the best-on-dev snapshot.
/// `train_data` holds `(tokens, target)`, `dev_data` holds `(tokens, label)`.
pub fn train(
    mut model: BiLstmModel,
    train_data: &[(Vec<String>, f64)],
    dev_data: &[(Vec<String>, u8)],
) -> Result<(BiLstmModel, TrainReport)> {
    let config = model.config.clone();
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if dev_data.is_empty() {
        return Err(Error::Empty("dev data"));
    }
    let train_ids: Vec<(Vec<u32>, f64)> =
        train_data.iter().map(|(t, y)| (model.vocab.encode(t), *y)).collect();
    let dev_ids: Vec<(Vec<u32>, u8)> =
        dev_data.iter().map(|(t, y)| (model.vocab.encode(t), *y)).collect();

    let mut sampler = BatchSampler::new(train_ids.len(), seed::rng(config.seed, "bilstm-batches"));
    let mut opt = Momentum::new(model.layout.total, config.learning_rate, config.momentum);
    let mut grad = vec![0.0; model.layout.total];
    let mut params = std::mem::take(&mut model.params);
    let mut best_params = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut report = TrainReport::default();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);

    for step in 1..=config.train_steps {
        let batch: Vec<(&[u32], f64)> = sampler
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| (train_ids[i].0.as_slice(), train_ids[i].1))
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = model.accumulate_gradients(&params, &batch, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        opt.step(&mut params, &grad);
        loss_sum += loss;
        loss_n += 1;
        if step % config.eval_every == 0 || step == config.train_steps {
            let acc = model.accuracy_ids(&params, &dev_ids)?;
            report.evals.push(EvalPoint { step, train_loss: loss_sum / loss_n as f64, dev_accuracy: acc });
            (loss_sum, loss_n) = (0.0, 0);
            if acc > best_acc {
                best_acc = acc;
                best_params.copy_from_slice(&params);
                report.best_step = step;
                report.best_dev_accuracy = acc;
            }
        }
    }
    report.final_step = config.train_steps;
    model.params = best_params;
    Ok((model, report))
}
