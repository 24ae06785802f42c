//! The well-formedness classifier: summed n-gram embeddings per feature
//! family, concatenated, then two ReLU layers and a two-way softmax.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] records where each
//! tensor sits. Gradients and optimizer state use the same layout.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::featurize::{FamilySet, FeatureFamily, FeatureSpace, FeatureVector};
use crate::optim::{argmax_grid, BatchSampler, EvalPoint, Momentum, TrainReport};
use crate::seed;

pub const MODEL_KIND: &str = "ffnet";

/// Learning rates tried by [`tune_learning_rate`] when none are given.
pub const DEFAULT_LR_GRID: [f64; 6] = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3];

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Train against `p_wf >= threshold` as a 0/1 label.
    Hard,
    /// Train against `p_wf` itself.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnConfig {
    pub families: FamilySet,
    pub char_embed_dim: usize,
    pub embed_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
    pub threshold: f64,
}

impl Default for FfnConfig {
    fn default() -> Self {
        FfnConfig {
            families: FamilySet::parse("word-1,2 POS-1,2,3").unwrap(),
            char_embed_dim: 16,
            embed_dim: 25,
            hidden1: 128,
            hidden2: 64,
            learning_rate: 0.03,
            momentum: 0.9,
            batch_size: 32,
            train_steps: 50_000,
            eval_every: 1_000,
            seed: 1,
            target_mode: TargetMode::Hard,
            threshold: 0.8,
        }
    }
}

impl FfnConfig {
    pub fn embed_dim_for(&self, family: FeatureFamily) -> usize {
        if family.is_char() {
            self.char_embed_dim
        } else {
            self.embed_dim
        }
    }

    pub fn input_dim(&self) -> usize {
        self.families.iter().map(|f| self.embed_dim_for(f)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.families.is_empty() {
            return bad("families: at least one feature family is required");
        }
        if self.char_embed_dim == 0 || self.embed_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("embedding and hidden dimensions must be positive");
        }
        if self.batch_size == 0 || self.train_steps == 0 || self.eval_every == 0 {
            return bad("batch_size, train_steps and eval_every must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad("learning_rate must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must be in (0, 1]");
        }
        Ok(())
    }

    /// Training target for a query with probability `p_wf`.
    pub fn target(&self, p_wf: f64) -> f64 {
        match self.target_mode {
            TargetMode::Soft => p_wf,
            TargetMode::Hard => f64::from(u8::from(p_wf >= self.threshold - 1e-9)),
        }
    }
}

/// A dense matrix (`rows` x `cols`, row major) inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Embedding table per family (canonical order), `None` if inactive.
    pub embeddings: [Option<Block>; 7],
    pub w1: Block,
    pub b1: Block,
    pub w2: Block,
    pub b2: Block,
    pub w3: Block,
    pub b3: Block,
    pub total: usize,
}

impl Layout {
    fn new(config: &FfnConfig, space: &FeatureSpace) -> Result<Layout> {
        let mut offset = 0;
        let mut alloc = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let mut embeddings = [None; 7];
        for family in config.families.iter() {
            let vocab = space.vocab_size(family);
            if vocab == 0 {
                return Err(Error::InvalidArgument(format!(
                    "feature family {family} is active but its vocabulary is empty"
                )));
            }
            embeddings[family.index()] = Some(alloc(vocab, config.embed_dim_for(family)));
        }
        let input = config.input_dim();
        let w1 = alloc(config.hidden1, input);
        let b1 = alloc(config.hidden1, 1);
        let w2 = alloc(config.hidden2, config.hidden1);
        let b2 = alloc(config.hidden2, 1);
        let w3 = alloc(2, config.hidden2);
        let b3 = alloc(2, 1);
        Ok(Layout { embeddings, w1, b1, w2, b2, w3, b3, total: offset })
    }

    /// Named tensors in storage order.
    pub fn blocks(&self) -> Vec<(String, Block)> {
        let mut v: Vec<(String, Block)> = FeatureFamily::ALL
            .iter()
            .filter_map(|f| self.embeddings[f.index()].map(|b| (format!("emb.{f}"), b)))
            .collect();
        for (name, b) in [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2), ("w3", self.w3), ("b3", self.b3)] {
            v.push((name.to_string(), b));
        }
        v
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub h1: Vec<f64>,
    pub z2: Vec<f64>,
    pub h2: Vec<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FfnHeader {
    config: FfnConfig,
    space: String,
    layout: Layout,
    tagger_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnModel {
    config: FfnConfig,
    space: FeatureSpace,
    layout: Layout,
    params: Vec<f64>,
    tagger_fingerprint: Option<String>,
}

pub(crate) fn glorot(rng: &mut impl Rng, params: &mut [f64], fan_in: usize, fan_out: usize) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for p in params {
        *p = rng.random_range(-a..a);
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `out = W x + b` for `W` stored row major.
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(w.chunks_exact(cols).zip(b).map(|(row, &bias)| {
        bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

/// Numerically stable two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let p1 = 1.0 / (1.0 + (logits[0] - logits[1]).exp());
    let p0 = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
    [p0, p1]
}

/// Cross-entropy of a two-way distribution against target probability `t`
/// for class 1.
pub fn cross_entropy(probs: [f64; 2], t: f64) -> f64 {
    -(t * probs[1].max(LOG_FLOOR).ln() + (1.0 - t) * probs[0].max(LOG_FLOOR).ln())
}

impl FfnModel {
    /// Glorot-uniform dense weights, uniform(-0.1, 0.1) embeddings, zero biases.
    pub fn init(config: FfnConfig, space: FeatureSpace, seed: u64) -> Result<FfnModel> {
        config.validate()?;
        for f in config.families.iter() {
            if !space.families().contains(f) {
                return Err(Error::InvalidArgument(format!(
                    "feature family {f} is not in the feature space"
                )));
            }
        }
        let layout = Layout::new(&config, &space)?;
        let mut params = vec![0.0; layout.total];
        let mut rng = seed::rng(seed, "ffnet-init");
        for b in layout.embeddings.iter().flatten() {
            for p in &mut params[b.range()] {
                *p = rng.random_range(-0.1..0.1);
            }
        }
        for w in [layout.w1, layout.w2, layout.w3] {
            glorot(&mut rng, &mut params[w.range()], w.cols, w.rows);
        }
        Ok(FfnModel { config, space, layout, params, tagger_fingerprint: None })
    }

    pub fn config(&self) -> &FfnConfig {
        &self.config
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tagger_fingerprint(&self) -> Option<&str> {
        self.tagger_fingerprint.as_deref()
    }

    pub fn set_tagger_fingerprint(&mut self, fp: Option<String>) {
        self.tagger_fingerprint = fp;
    }

    fn check_ids(&self, fv: &FeatureVector) -> Result<()> {
        for family in self.config.families.iter() {
            let block = self.layout.embeddings[family.index()].unwrap();
            if let Some(&id) = fv.ids(family).iter().find(|&&id| id as usize >= block.rows) {
                return Err(Error::FeatureOutOfRange { family: family.name(), id, size: block.rows });
            }
        }
        Ok(())
    }

    /// Full forward pass with intermediates, using `params` in this model's
    /// layout.
    pub fn activations_with(&self, params: &[f64], fv: &FeatureVector) -> Result<Activations> {
        self.check_ids(fv)?;
        let l = &self.layout;
        let mut input = Vec::with_capacity(self.config.input_dim());
        for family in self.config.families.iter() {
            let block = l.embeddings[family.index()].unwrap();
            let table = &params[block.range()];
            let start = input.len();
            input.resize(start + block.cols, 0.0);
            // Ids are sorted, so the summation order is canonical.
            for &id in fv.ids(family) {
                let row = &table[id as usize * block.cols..(id as usize + 1) * block.cols];
                for (x, r) in input[start..].iter_mut().zip(row) {
                    *x += r;
                }
            }
        }
        let mut z1 = Vec::new();
        affine(&params[l.w1.range()], &params[l.b1.range()], &input, &mut z1);
        let h1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();
        let mut z2 = Vec::new();
        affine(&params[l.w2.range()], &params[l.b2.range()], &h1, &mut z2);
        let h2: Vec<f64> = z2.iter().map(|&z| relu(z)).collect();
        let mut out = Vec::new();
        affine(&params[l.w3.range()], &params[l.b3.range()], &h2, &mut out);
        let logits = [out[0], out[1]];
        Ok(Activations { input, z1, h1, z2, h2, logits, probs: softmax2(logits) })
    }

    pub fn activations(&self, fv: &FeatureVector) -> Result<Activations> {
        self.activations_with(&self.params, fv)
    }

    /// `(p_wf, logits)` for one feature vector.
    pub fn forward(&self, fv: &FeatureVector) -> Result<(f64, [f64; 2])> {
        let a = self.activations(fv)?;
        Ok((a.probs[1], a.logits))
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<u8> {
        Ok(u8::from(self.forward(fv)?.0 > 0.5))
    }

    /// Mean cross-entropy over `batch` with `params`, adding the gradient of
    /// that mean into `grad`.
    pub fn accumulate_gradients(
        &self,
        params: &[f64],
        batch: &[(&FeatureVector, f64)],
        grad: &mut [f64],
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        let l = &self.layout;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut dh2 = vec![0.0; self.config.hidden2];
        let mut dh1 = vec![0.0; self.config.hidden1];
        let mut dx = vec![0.0; self.config.input_dim()];
        for &(fv, t) in batch {
            let a = self.activations_with(params, fv)?;
            loss += cross_entropy(a.probs, t);

            // dL/dlogits for softmax + cross-entropy.
            let dz3 = [(a.probs[0] - (1.0 - t)) * scale, (a.probs[1] - t) * scale];
            let w3 = &params[l.w3.range()];
            dh2.iter_mut().for_each(|v| *v = 0.0);
            for (k, &d) in dz3.iter().enumerate() {
                grad[l.b3.offset + k] += d;
                let row = l.w3.offset + k * l.w3.cols;
                for j in 0..l.w3.cols {
                    grad[row + j] += d * a.h2[j];
                    dh2[j] += d * w3[k * l.w3.cols + j];
                }
            }

            let w2 = &params[l.w2.range()];
            dh1.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..l.w2.rows {
                if a.z2[k] <= 0.0 {
                    continue;
                }
                let d = dh2[k];
                grad[l.b2.offset + k] += d;
                let row = l.w2.offset + k * l.w2.cols;
                for j in 0..l.w2.cols {
                    grad[row + j] += d * a.h1[j];
                    dh1[j] += d * w2[k * l.w2.cols + j];
                }
            }

            let w1 = &params[l.w1.range()];
            dx.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..l.w1.rows {
                if a.z1[k] <= 0.0 {
                    continue;
                }
                let d = dh1[k];
                grad[l.b1.offset + k] += d;
                let row = l.w1.offset + k * l.w1.cols;
                for j in 0..l.w1.cols {
                    grad[row + j] += d * a.input[j];
                    dx[j] += d * w1[k * l.w1.cols + j];
                }
            }

            let mut start = 0;
            for family in self.config.families.iter() {
                let block = l.embeddings[family.index()].unwrap();
                let seg = &dx[start..start + block.cols];
                for &id in fv.ids(family) {
                    let row = block.offset + id as usize * block.cols;
                    for (g, d) in grad[row..row + block.cols].iter_mut().zip(seg) {
                        *g += d;
                    }
                }
                start += block.cols;
            }
        }
        Ok(loss * scale)
    }

    /// Mean cross-entropy over the batch and its exact gradient (same layout
    /// as the parameters).
    pub fn loss_and_gradients(&self, batch: &[(FeatureVector, f64)]) -> Result<(f64, Vec<f64>)> {
        let refs: Vec<(&FeatureVector, f64)> = batch.iter().map(|(f, t)| (f, *t)).collect();
        let mut grad = vec![0.0; self.layout.total];
        let loss = self.accumulate_gradients(&self.params, &refs, &mut grad)?;
        Ok((loss, grad))
    }

    /// Mean loss only.
    pub fn loss_with(&self, params: &[f64], batch: &[(FeatureVector, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (fv, t) in batch {
            total += cross_entropy(self.activations_with(params, fv)?.probs, *t);
        }
        Ok(total / batch.len() as f64)
    }

    /// Accuracy of `p_wf > 0.5` against 0/1 labels.
    pub fn accuracy(&self, data: &[(FeatureVector, u8)]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for (fv, label) in data {
            correct += usize::from(self.predict(fv)? == *label);
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = FfnHeader {
            config: self.config.clone(),
            space: self.space.to_json()?,
            layout: self.layout.clone(),
            tagger_fingerprint: self.tagger_fingerprint.clone(),
        };
        container::encode(MODEL_KIND, &header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FfnModel> {
        let (header, params): (FfnHeader, Vec<f64>) = container::decode(bytes, MODEL_KIND)?;
        let space = FeatureSpace::from_json(&header.space)?;
        let layout = Layout::new(&header.config, &space)?;
        if layout != header.layout || params.len() != layout.total {
            return Err(Error::Format(
                "feature space does not match the stored parameter shapes".into(),
            ));
        }
        Ok(FfnModel {
            config: header.config,
            space,
            layout,
            params,
            tagger_fingerprint: header.tagger_fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FfnModel> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Mini-batch SGD with momentum for `config.train_steps` steps. Dev accuracy
/// is measured every `eval_every` steps and at the last step; the returned
/// model holds the parameters of the best evaluation (earliest on ties).
pub fn train(
    mut model: FfnModel,
    train_data: &[(FeatureVector, f64)],
    dev_data: &[(FeatureVector, u8)],
    config: &FfnConfig,
) -> Result<(FfnModel, TrainReport)> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if dev_data.is_empty() {
        return Err(Error::Empty("dev data"));
    }
    let mut sampler = BatchSampler::new(train_data.len(), seed::rng(config.seed, "ffnet-batches"));
    let mut opt = Momentum::new(model.layout.total, config.learning_rate, config.momentum);
    let mut grad = vec![0.0; model.layout.total];
    let mut params = std::mem::take(&mut model.params);
    let mut report = TrainReport::default();
    let mut best_params = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);

    for step in 1..=config.train_steps {
        let batch: Vec<(&FeatureVector, f64)> = sampler
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| (&train_data[i].0, train_data[i].1))
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
            model.params = params;
            let acc = model.accuracy(dev_data)?;
            params = std::mem::take(&mut model.params);
            report.evals.push(EvalPoint { step, train_loss: loss_sum / loss_n as f64, dev_accuracy: acc });
            log::debug!("step {step}: train loss {:.4}, dev acc {acc:.4}", loss_sum / loss_n as f64);
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

/// Trains one model per learning rate (same seed) and returns the rate with
/// the best dev accuracy, ties to the smaller rate, along with every
/// `(lr, dev accuracy)` pair.
pub fn tune_learning_rate(
    grid: &[f64],
    mut train_at: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if let Some(bad) = grid.iter().find(|&&lr| !(lr > 0.0 && lr < 1.0)) {
        return Err(Error::InvalidArgument(format!("learning rate {bad} outside (0, 1)")));
    }
    argmax_grid(grid, &mut train_at)?.ok_or(Error::Empty("learning rate grid"))
}
