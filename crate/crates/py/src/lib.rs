//! Python bindings: corpus statistics, the POS tagger, classifier training
//! and scoring, baselines, BLEU, and n-best reranking.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use qwf_core::baselines::{MajorityBaseline, QuestionWordList};
use qwf_core::corpus::{self, AnnotatedQuery};
use qwf_core::featurize::{self, FamilySet};
use qwf_core::ffnet::{FfnConfig, FfnModel, TargetMode};
use qwf_core::pipeline::{self, Pipeline, Tagging};
use qwf_core::postag::{self, ConllColumns, PerceptronTagger, TaggerTrainer};
use qwf_core::rerank::{self, Chooser, RerankerModel};
use qwf_core::{metrics, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for qwf_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn queries(rows: Vec<(String, f64)>) -> PyResult<Vec<AnnotatedQuery>> {
    rows.into_iter().map(|(t, p)| AnnotatedQuery::from_probability(t, p).py()).collect()
}

fn pairs(qs: &[AnnotatedQuery]) -> Vec<(String, f64)> {
    qs.iter().map(|q| (q.text().to_string(), q.p_wf())).collect()
}

/// Lowercased tokens with edge punctuation split off.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    featurize::tokenize(text)
}

/// Loads a dataset file or split directory as `{"train": [(query, p_wf)], "dev": ..., "test": ...}`.
#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<BTreeMap<&'static str, Vec<(String, f64)>>> {
    let s = corpus::load_dataset(path).py()?;
    Ok(BTreeMap::from([("train", pairs(&s.train)), ("dev", pairs(&s.dev)), ("test", pairs(&s.test))]))
}

/// Fleiss' kappa over (query, p_wf) rows with five raters each.
#[pyfunction]
fn fleiss_kappa(rows: Vec<(String, f64)>) -> PyResult<f64> {
    corpus::fleiss_kappa(&queries(rows)?, u32::from(corpus::RATERS)).py()
}

/// Agreement statistics as a dict with `total`, `kappa`, `agreement_count`,
/// `agreement_fraction` and `histogram`.
#[pyfunction]
fn agreement_report(py: Python<'_>, rows: Vec<(String, f64)>) -> PyResult<Py<PyAny>> {
    let r = corpus::agreement_report(&queries(rows)?).py()?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("total", r.total)?;
    d.set_item("kappa", r.kappa)?;
    d.set_item("agreement_count", r.agreement_count)?;
    d.set_item("agreement_fraction", r.agreement_fraction)?;
    d.set_item("histogram", r.histogram)?;
    Ok(d.into_any().unbind())
}

/// Classification accuracy of 0/1 predictions.
#[pyfunction]
fn accuracy(predictions: Vec<u8>, gold: Vec<u8>) -> PyResult<f64> {
    Ok(metrics::accuracy(&predictions, &gold).py()?.accuracy)
}

/// Unsmoothed corpus BLEU over whitespace-tokenized strings.
#[pyfunction]
#[pyo3(signature = (candidates, references, max_order = 4))]
fn corpus_bleu(candidates: Vec<String>, references: Vec<String>, max_order: usize) -> PyResult<f64> {
    let split = |v: &[String]| -> Vec<Vec<String>> {
        v.iter().map(|s| s.split_whitespace().map(str::to_string).collect()).collect()
    };
    metrics::bleu_corpus(&split(&candidates), &split(&references), max_order).py()
}

/// Add-one smoothed sentence BLEU over whitespace-tokenized strings.
#[pyfunction]
#[pyo3(signature = (candidate, reference, max_order = 4))]
fn sentence_bleu(candidate: &str, reference: &str, max_order: usize) -> PyResult<f64> {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    metrics::bleu_sentence_smoothed(&c, &r, max_order).py()
}

/// Majority-class prediction learned from (query, p_wf) rows.
#[pyfunction]
#[pyo3(signature = (rows, threshold = corpus::DEFAULT_THRESHOLD))]
fn majority_label(rows: Vec<(String, f64)>, threshold: f64) -> PyResult<u8> {
    let labeled = corpus::binarize(&queries(rows)?, threshold);
    Ok(MajorityBaseline::fit(&labeled).py()?.predict())
}

/// Question-word rule: 1 when the first token is a question word.
#[pyfunction]
fn question_word_label(text: &str) -> u8 {
    QuestionWordList::default().classify(&featurize::tokenize(text))
}

/// Averaged-perceptron POS tagger.
#[pyclass(module = "qwf")]
struct Tagger {
    inner: PerceptronTagger,
}

#[pymethods]
impl Tagger {
    /// Trains on a CoNLL file (`format` is "plain" or "conllu").
    #[staticmethod]
    #[pyo3(signature = (path, epochs = 5, seed = 1, lowercase = true, format = "plain"))]
    fn train(path: PathBuf, epochs: usize, seed: u64, lowercase: bool, format: &str) -> PyResult<Tagger> {
        let columns = match format {
            "plain" => ConllColumns::PLAIN,
            "conllu" => ConllColumns::CONLLU_XPOS,
            other => return Err(PyValueError::new_err(format!("unknown CoNLL format {other:?}"))),
        };
        let corpus = postag::load_conll(path, columns).py()?;
        let inner = TaggerTrainer { epochs, seed, lowercase }.train(&corpus).py()?;
        Ok(Tagger { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Tagger> {
        Ok(Tagger { inner: PerceptronTagger::load(path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    /// (token, tag) pairs for a query.
    fn tag(&self, text: &str) -> Vec<(String, String)> {
        let (tokens, tags) = self.inner.tag(&featurize::tokenize(text)).into_parts();
        tokens.into_iter().zip(tags).collect()
    }

    #[getter]
    fn tagset(&self) -> Vec<String> {
        self.inner.tagset().to_vec()
    }
}

fn pipeline_for(tagger: Option<&Tagger>) -> Pipeline {
    match tagger {
        Some(t) => Pipeline::new(Tagging::Perceptron(t.inner.clone())),
        None => Pipeline::untagged(),
    }
}

/// Feed-forward well-formedness classifier with its feature pipeline.
#[pyclass(module = "qwf")]
struct Classifier {
    inner: pipeline::Classifier,
}

#[pymethods]
impl Classifier {
    /// Trains on a split directory and returns the run with the best dev
    /// accuracy over `seeds`. When `lr_grid` is given the learning rate is
    /// tuned with the first seed and reused for the rest.
    #[staticmethod]
    #[pyo3(signature = (
        data,
        families = "word-1,2",
        tagger = None,
        seeds = vec![1],
        lr_grid = None,
        train_steps = None,
        learning_rate = None,
        soft_targets = false,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        data: PathBuf,
        families: &str,
        tagger: Option<PyRef<'_, Tagger>>,
        seeds: Vec<u64>,
        lr_grid: Option<Vec<f64>>,
        train_steps: Option<usize>,
        learning_rate: Option<f64>,
        soft_targets: bool,
    ) -> PyResult<(Classifier, f64, f64)> {
        if seeds.is_empty() {
            return Err(PyValueError::new_err("seeds is empty"));
        }
        let d = FfnConfig::default();
        let config = FfnConfig {
            families: FamilySet::parse(families).py()?,
            train_steps: train_steps.unwrap_or(d.train_steps),
            learning_rate: learning_rate.unwrap_or(d.learning_rate),
            target_mode: if soft_targets { TargetMode::Soft } else { TargetMode::Hard },
            seed: seeds[0],
            ..d
        };
        config.validate().py()?;
        let pipe = pipeline_for(tagger.as_deref());
        let split = corpus::load_dataset(data).py()?;
        let prepared = pipeline::prepare(&split, &pipe, &config).py()?;
        let runs = match lr_grid {
            Some(grid) => pipeline::train_with_tuning(&prepared, &pipe, &config, &grid, &seeds).py()?,
            None => seeds
                .iter()
                .map(|&seed| pipeline::train_once(&prepared, &pipe, &FfnConfig { seed, ..config.clone() }))
                .collect::<qwf_core::Result<_>>()
                .py()?,
        };
        let best = runs
            .into_iter()
            .reduce(|b, r| if r.dev_accuracy > b.dev_accuracy { r } else { b })
            .expect("seeds is non-empty");
        let inner = pipeline::Classifier::new(best.model, pipe).py()?;
        Ok((Classifier { inner }, best.dev_accuracy, best.test_accuracy))
    }

    #[staticmethod]
    #[pyo3(signature = (path, tagger = None))]
    fn load(path: PathBuf, tagger: Option<PyRef<'_, Tagger>>) -> PyResult<Classifier> {
        let model = FfnModel::load(path).py()?;
        let inner = pipeline::Classifier::new(model, pipeline_for(tagger.as_deref())).py()?;
        Ok(Classifier { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.model().save(path).py()
    }

    /// Probability that the query is well formed.
    fn p_wf(&self, text: &str) -> PyResult<f64> {
        self.inner.p_wf(text).py()
    }

    fn p_wf_batch(&self, texts: Vec<String>) -> PyResult<Vec<f64>> {
        texts.iter().map(|t| self.inner.p_wf(t).py()).collect()
    }

    fn predict(&self, text: &str) -> PyResult<u8> {
        self.inner.predict(text).py()
    }

    #[getter]
    fn families(&self) -> String {
        self.inner.model().config().families.to_string()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.model().params().len()
    }
}

/// Selects one candidate per n-best list and scores the selection.
///
/// `mode` is "baseline", "reranked" or "oracle". In reranked mode the
/// weight comes from `lam`, or is tuned on `dev_nbest`/`dev_refs`. Candidate
/// p_wf values come from `classifier` or from a fifth n-best column.
/// Returns `(bleu1, bleu4, lambda, selected_ranks)`.
#[pyfunction]
#[pyo3(signature = (nbest, refs, mode = "reranked", classifier = None, lam = None, dev_nbest = None, dev_refs = None, length_normalize = false))]
#[allow(clippy::too_many_arguments)]
fn rerank_nbest(
    nbest: PathBuf,
    refs: PathBuf,
    mode: &str,
    classifier: Option<PyRef<'_, Classifier>>,
    lam: Option<f64>,
    dev_nbest: Option<PathBuf>,
    dev_refs: Option<PathBuf>,
    length_normalize: bool,
) -> PyResult<(f64, f64, Option<f64>, Vec<u32>)> {
    let chooser: Chooser = mode.parse().py()?;
    let mut lists = rerank::load_lists(nbest, refs).py()?;
    let mut model = RerankerModel { length_normalize, ..RerankerModel::default() };
    if chooser == Chooser::Reranked {
        if let Some(c) = &classifier {
            rerank::score_candidates(&mut lists, &c.inner).py()?;
        }
        match (dev_nbest, dev_refs, lam) {
            (Some(n), Some(r), _) => {
                let mut dev = rerank::load_lists(n, r).py()?;
                if let Some(c) = &classifier {
                    rerank::score_candidates(&mut dev, &c.inner).py()?;
                }
                model = rerank::tune_lambda(&dev, &rerank::default_lambda_grid(), length_normalize).py()?.model;
            }
            (None, None, Some(l)) => model = RerankerModel { length_normalize, ..RerankerModel::new(l).py()? },
            _ => return Err(PyValueError::new_err("reranked mode needs lam or both dev_nbest and dev_refs")),
        }
    }
    let ranks = rerank::select(&lists, chooser, &model).py()?.iter().map(|c| c.rank).collect();
    let s = rerank::evaluate_selection(&lists, chooser, &model).py()?;
    Ok((s.bleu1, s.bleu4, (chooser == Chooser::Reranked).then_some(model.lambda), ranks))
}

#[pymodule]
fn qwf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tagger>()?;
    m.add_class::<Classifier>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(agreement_report, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(sentence_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(majority_label, m)?)?;
    m.add_function(wrap_pyfunction!(question_word_label, m)?)?;
    m.add_function(wrap_pyfunction!(rerank_nbest, m)?)?;
    m.add("DEFAULT_THRESHOLD", corpus::DEFAULT_THRESHOLD)?;
    Ok(())
}
