//! Text to feature vector: tokenize, tag, extract. The same pipeline is used
//! to train a classifier and later to score new text with it.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::corpus::{label_for, AnnotatedQuery, DatasetSplit};
use crate::error::{Error, Result};
use crate::featurize::{build_feature_space, tokenize, FeatureSpace, FeatureVector, QueryAnalysis};
use crate::ffnet::{self, FfnConfig, FfnModel};
use crate::optim::TrainReport;
use crate::postag::{PerceptronTagger, TaggedSentence};

#[derive(Debug, Clone)]
pub enum Tagging {
    None,
    Perceptron(PerceptronTagger),
    /// Tags looked up by raw query text.
    Pretagged(HashMap<String, TaggedSentence>),
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    tagging: Tagging,
}

impl Pipeline {
    pub fn new(tagging: Tagging) -> Self {
        Pipeline { tagging }
    }

    pub fn untagged() -> Self {
        Pipeline { tagging: Tagging::None }
    }

    pub fn tagging(&self) -> &Tagging {
        &self.tagging
    }

    pub fn has_tagger(&self) -> bool {
        !matches!(self.tagging, Tagging::None)
    }

    /// SHA-256 over the tagger's serialized form, or over the sorted
    /// pre-tagged table.
    pub fn fingerprint(&self) -> Result<Option<String>> {
        let mut h = Sha256::new();
        match &self.tagging {
            Tagging::None => return Ok(None),
            Tagging::Perceptron(t) => {
                h.update(b"perceptron\0");
                h.update(t.to_json()?.as_bytes());
            }
            Tagging::Pretagged(table) => {
                h.update(b"pretagged\0");
                let mut keys: Vec<&String> = table.keys().collect();
                keys.sort();
                for k in keys {
                    let s = &table[k];
                    h.update(k.as_bytes());
                    h.update(b"\t");
                    h.update(s.tokens().join(" ").as_bytes());
                    h.update(b"\t");
                    h.update(s.tags().join(" ").as_bytes());
                    h.update(b"\n");
                }
            }
        }
        Ok(Some(format!("{:x}", h.finalize())))
    }

    /// Tokenizes and, when a tagger is configured, tags `text`.
    pub fn analyze(&self, text: &str) -> Result<QueryAnalysis> {
        match &self.tagging {
            Tagging::None => Ok(QueryAnalysis::untagged(text)),
            Tagging::Perceptron(tagger) => {
                let tokens = tokenize(text);
                let (tokens, tags) = tagger.tag(&tokens).into_parts();
                Ok(QueryAnalysis { text: text.to_string(), tokens, tags: Some(tags) })
            }
            Tagging::Pretagged(table) => {
                let s = table
                    .get(text)
                    .ok_or_else(|| Error::MissingTags(text.to_string()))?;
                Ok(QueryAnalysis {
                    text: text.to_string(),
                    tokens: s.tokens().to_vec(),
                    tags: Some(s.tags().to_vec()),
                })
            }
        }
    }

    pub fn analyze_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<QueryAnalysis>> {
        texts.into_iter().map(|t| self.analyze(t)).collect()
    }
}

/// A trained model bound to the pipeline it was trained with.
#[derive(Debug, Clone)]
pub struct Classifier {
    model: FfnModel,
    pipeline: Pipeline,
}

impl Classifier {
    /// Fails if the model needs tags the pipeline cannot supply, or if the
    /// model records a different tagger than the one supplied.
    pub fn new(model: FfnModel, pipeline: Pipeline) -> Result<Self> {
        if model.config().families.needs_tags() {
            if !pipeline.has_tagger() {
                return Err(Error::InvalidArgument(
                    "model uses POS features but no tagger was supplied".into(),
                ));
            }
            let fp = pipeline.fingerprint()?;
            if let (Some(expected), Some(got)) = (model.tagger_fingerprint(), fp.as_deref()) {
                if expected != got {
                    return Err(Error::InvalidArgument(
                        "tagger differs from the one the model was trained with".into(),
                    ));
                }
            }
        }
        Ok(Classifier { model, pipeline })
    }

    pub fn model(&self) -> &FfnModel {
        &self.model
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn features(&self, text: &str) -> Result<FeatureVector> {
        let q = self.pipeline.analyze(text)?;
        self.model.space().extract(&q, self.model.config().families)
    }

    pub fn p_wf(&self, text: &str) -> Result<f64> {
        Ok(self.model.forward(&self.features(text)?)?.0)
    }

    pub fn predict(&self, text: &str) -> Result<u8> {
        Ok(u8::from(self.p_wf(text)? > 0.5))
    }
}

/// Featurized train/dev/test data for one family configuration.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub space: FeatureSpace,
    pub train: Vec<(FeatureVector, f64)>,
    pub dev: Vec<(FeatureVector, u8)>,
    pub test: Vec<(FeatureVector, u8)>,
}

/// Builds the feature space on the training split and featurizes all three
/// splits. Training targets follow `config.target_mode`; dev and test get
/// thresholded labels.
pub fn prepare(split: &DatasetSplit, pipeline: &Pipeline, config: &FfnConfig) -> Result<PreparedData> {
    let families = config.families;
    if families.needs_tags() && !pipeline.has_tagger() {
        return Err(Error::InvalidArgument("POS families requested but no tagger configured".into()));
    }
    let analyze = |qs: &[AnnotatedQuery]| pipeline.analyze_all(qs.iter().map(AnnotatedQuery::text));
    let train_a = analyze(&split.train)?;
    let space = build_feature_space(&train_a, families, None)?;
    let train = train_a
        .iter()
        .zip(&split.train)
        .map(|(a, q)| Ok((space.extract(a, families)?, config.target(q.p_wf()))))
        .collect::<Result<_>>()?;
    let labeled = |qs: &[AnnotatedQuery]| -> Result<Vec<(FeatureVector, u8)>> {
        analyze(qs)?
            .iter()
            .zip(qs)
            .map(|(a, q)| Ok((space.extract(a, families)?, label_for(q, config.threshold))))
            .collect()
    };
    let dev = labeled(&split.dev)?;
    let test = labeled(&split.test)?;
    Ok(PreparedData { space, train, dev, test })
}

/// One complete training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: FfnModel,
    pub report: TrainReport,
    pub seed: u64,
    pub learning_rate: f64,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains a model with `config` as given (no tuning) and measures dev and
/// test accuracy of the best-on-dev snapshot.
pub fn train_once(data: &PreparedData, pipeline: &Pipeline, config: &FfnConfig) -> Result<RunResult> {
    let mut model = FfnModel::init(config.clone(), data.space.clone(), config.seed)?;
    model.set_tagger_fingerprint(if config.families.needs_tags() { pipeline.fingerprint()? } else { None });
    let (model, report) = ffnet::train(model, &data.train, &data.dev, config)?;
    let dev_accuracy = model.accuracy(&data.dev)?;
    let test_accuracy = if data.test.is_empty() { 0.0 } else { model.accuracy(&data.test)? };
    Ok(RunResult {
        model,
        report,
        seed: config.seed,
        learning_rate: config.learning_rate,
        dev_accuracy,
        test_accuracy,
    })
}

/// Tunes the learning rate on dev over `grid` with the first seed, then
/// trains the remaining seeds at the chosen rate. Returns one run per seed;
/// the caller reports the max.
pub fn train_with_tuning(
    data: &PreparedData,
    pipeline: &Pipeline,
    base: &FfnConfig,
    grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let (&first, rest) = seeds.split_first().ok_or(Error::Empty("seed list"))?;
    let mut runs: Vec<RunResult> = Vec::new();
    let (lr, _) = ffnet::tune_learning_rate(grid, |lr| {
        let config = FfnConfig { learning_rate: lr, seed: first, ..base.clone() };
        let run = train_once(data, pipeline, &config)?;
        log::info!("seed {first} lr {lr}: dev {:.4} test {:.4}", run.dev_accuracy, run.test_accuracy);
        let acc = run.dev_accuracy;
        runs.push(run);
        Ok(acc)
    })?;
    let mut out = vec![runs
        .into_iter()
        .find(|r| r.learning_rate == lr)
        .expect("tuned rate comes from the grid")];
    for &seed in rest {
        let config = FfnConfig { learning_rate: lr, seed, ..base.clone() };
        out.push(train_once(data, pipeline, &config)?);
    }
    Ok(out)
}
