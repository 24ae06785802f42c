#![allow(dead_code)]

use qwf_core::baselines::bilstm::Vocab;
use qwf_core::baselines::{BiLstmConfig, BiLstmModel};
use qwf_core::featurize::{build_feature_space, FamilySet, FeatureFamily, FeatureVector, QueryAnalysis};
use qwf_core::ffnet::{FfnConfig, FfnModel};
use qwf_core::gradcheck::{self, GradCheck};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

const WORDS: [&str; 8] = ["what", "is", "the", "capital", "of", "peru", "?", "how"];
const TAGS: [&str; 4] = ["WP", "VBZ", "DT", "NN"];

fn random_query(rng: &mut ChaCha8Rng) -> QueryAnalysis {
    let n = rng.random_range(1..6);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let mut q = QueryAnalysis::untagged(&words.join(" "));
    q.tags = Some(q.tokens.iter().map(|_| TAGS.choose(rng).unwrap().to_string()).collect());
    q
}

/// Gradient check of a randomly sized classifier on a random soft-target
/// batch, over every parameter.
pub fn ffnet_case(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families = loop {
        let fs = FamilySet::new(FeatureFamily::ALL.into_iter().filter(|_| rng.random_bool(0.4)));
        if !fs.is_empty() {
            break fs;
        }
    };
    let queries: Vec<QueryAnalysis> = (0..6).map(|_| random_query(&mut rng)).collect();
    let space = build_feature_space(&queries, families, Some(1)).unwrap();
    let config = FfnConfig {
        families,
        char_embed_dim: rng.random_range(1..4),
        embed_dim: rng.random_range(1..4),
        hidden1: rng.random_range(1..6),
        hidden2: rng.random_range(1..5),
        ..Default::default()
    };
    let mut model = FfnModel::init(config, space, seed).unwrap();
    // Move biases off zero so ReLU units are not all sitting on the kink.
    for p in model.params_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    let batch: Vec<(FeatureVector, f64)> = queries
        .iter()
        .take(3)
        .map(|q| (model.space().extract(q, families).unwrap(), rng.random_range(0.0..1.0)))
        .collect();
    let (_, grad) = model.loss_and_gradients(&batch).unwrap();
    let mut params = model.params().to_vec();
    let n = params.len();
    gradcheck::check(&mut params, &grad, FD_STEP, 0..n, |p| model.loss_with(p, &batch).unwrap())
}

pub fn bilstm_case(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let sents: Vec<Vec<&str>> = (0..4)
        .map(|_| (0..rng.random_range(1..5)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect())
        .collect();
    let vocab = Vocab::build(sents.iter().map(Vec::as_slice), 1);
    let config = BiLstmConfig {
        embed_dim: rng.random_range(1..4),
        hidden: rng.random_range(1..4),
        seed,
        ..Default::default()
    };
    let mut model = BiLstmModel::init(config, vocab).unwrap();
    for p in model.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let mut batch: Vec<(Vec<u32>, f64)> = sents
        .iter()
        .map(|s| (model.vocab().encode(s), rng.random_range(0.0..1.0)))
        .collect();
    // An unknown word and the empty-input padding token.
    batch.push((model.vocab().encode(&["zzz", "what"]), 0.3));
    batch.push((model.vocab().encode::<&str>(&[]), 0.9));
    let (_, grad) = model.loss_and_gradients(&batch).unwrap();
    let mut params = model.params().to_vec();
    let n = params.len();
    gradcheck::check(&mut params, &grad, FD_STEP, 0..n, |p| model.loss_with(p, &batch).unwrap())
}

/// Twenty queries separable by their first word: questions vote 5/5,
/// keyword fragments 0/5.
pub fn toy_queries() -> Vec<qwf_core::AnnotatedQuery> {
    let good = [
        "what is the capital of peru ?",
        "who wrote hamlet ?",
        "how tall is the eiffel tower ?",
        "where is lake titicaca ?",
        "when did rome fall ?",
        "what is a prime number ?",
        "who invented the telephone ?",
        "how do bees make honey ?",
        "where do penguins live ?",
        "why is the sea salty ?",
    ];
    let bad = [
        "capital peru",
        "hamlet author",
        "eiffel tower height meters",
        "lake titicaca location",
        "rome fall year",
        "prime number definition",
        "telephone inventor",
        "bees honey making",
        "penguins habitat",
        "sea salt reason",
    ];
    good.iter()
        .map(|t| qwf_core::AnnotatedQuery::new(*t, 5).unwrap())
        .chain(bad.iter().map(|t| qwf_core::AnnotatedQuery::new(*t, 0).unwrap()))
        .collect()
}

pub fn toy_split() -> qwf_core::DatasetSplit {
    let q = toy_queries();
    qwf_core::DatasetSplit { train: q.clone(), dev: q.clone(), test: q }
}

/// The core crate directory, also when this module is shared with other test packages.
pub fn core_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().join("core")
}

pub fn sample_conll() -> std::path::PathBuf {
    core_dir().join("data/sample_tagged.conll")
}

pub fn rerank_fixture() -> Vec<qwf_core::NBestList> {
    let dir = core_dir().join("tests/fixtures/rerank");
    qwf_core::rerank::load_lists(dir.join("nbest.tsv"), dir.join("refs.tsv")).unwrap()
}
