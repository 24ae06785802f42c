//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria that need the released query dataset read it from `QWF_DATA`
//! (a directory holding `train.tsv`, `dev.tsv` and `test.tsv`), falling back
//! to `data/released` at the workspace root. The POS tagger criterion and
//! the POS ablations read a CoNLL corpus from `QWF_CONLL` (`.conllu` files
//! use the CoNLL-U word and XPOS columns, anything else `token<TAB>tag`).
//! Relative paths are tried against the workspace root when they do not
//! exist relative to the test's working directory. A criterion whose inputs
//! are missing fails and says which input it needed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use qwf_core::baselines::bilstm::{self, Vocab};
use qwf_core::baselines::{BiLstmConfig, BiLstmModel, MajorityBaseline, QuestionWordList};
use qwf_core::corpus::{
    agreement_report, binarize, fleiss_kappa, fleiss_kappa_counts, label_for, load_dataset, DatasetSplit,
    RELEASED_SPLIT_SIZES,
};
use qwf_core::featurize::{tokenize, Ablation};
use qwf_core::ffnet::{FfnConfig, DEFAULT_LR_GRID};
use qwf_core::metrics::{accuracy, bleu_corpus, corpus_stats, BleuStats};
use qwf_core::pipeline::{prepare, train_once, train_with_tuning, Pipeline, Tagging};
use qwf_core::postag::{load_conll, ConllColumns, PerceptronTagger, TaggedSentence, TaggerTrainer};
use qwf_core::rerank::{
    default_lambda_grid, evaluate_selection, oracle_select, rerank, tune_lambda, Chooser, RerankerModel,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace_root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).unwrap()
}

fn env_path(var: &str) -> Option<PathBuf> {
    let p = PathBuf::from(std::env::var_os(var)?);
    if p.is_relative() && !p.exists() {
        Some(workspace_root().join(p))
    } else {
        Some(p)
    }
}

fn dataset_path() -> PathBuf {
    env_path("QWF_DATA").unwrap_or_else(|| workspace_root().join("data/released"))
}

fn dataset() -> Result<DatasetSplit, String> {
    let path = dataset_path();
    if !path.exists() {
        return Err(format!(
            "released dataset not found at {} (set QWF_DATA to its directory)",
            path.display()
        ));
    }
    load_dataset(&path).map_err(|e| format!("cannot load {}: {e}", path.display()))
}

fn conll_corpus() -> Result<Vec<TaggedSentence>, String> {
    let path = env_path("QWF_CONLL")
        .ok_or_else(|| "no CoNLL corpus supplied (set QWF_CONLL)".to_string())?;
    let columns = if path.extension().is_some_and(|e| e == "conllu") {
        ConllColumns::CONLLU_XPOS
    } else {
        ConllColumns::PLAIN
    };
    load_conll(&path, columns).map_err(|e| format!("cannot load {}: {e}", path.display()))
}

fn query_tagger() -> Result<PerceptronTagger, String> {
    let corpus = conll_corpus()?;
    TaggerTrainer { epochs: 5, seed: 1, lowercase: true }
        .train(&corpus)
        .map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let split = dataset()?;
    let all = split.all();
    let report = agreement_report(&all).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let fraction = report.agreement_fraction * 100.0;
    check(
        all.len() == 25_100
            && split.sizes() == RELEASED_SPLIT_SIZES
            && report.agreement_count == 19_206
            && (fraction - 76.5).abs() <= 0.1
            && elapsed < Duration::from_secs(2),
        format!(
            "{} queries, splits {:?}, agreement {} ({fraction:.2}%), {:.2}s",
            all.len(),
            split.sizes(),
            report.agreement_count,
            elapsed.as_secs_f64()
        ),
    )
}

fn kappa_oracle(ratings: &[Vec<usize>]) -> f64 {
    let mut observed = 0.0;
    for item in ratings {
        let n = item.len();
        let agree = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|&(a, b)| a != b && item[a] == item[b]).count();
        observed += agree as f64 / (n * (n - 1)) as f64;
    }
    observed /= ratings.len() as f64;
    let total: usize = ratings.iter().map(Vec::len).sum();
    let chance: f64 = (0..2)
        .map(|c| (ratings.iter().flatten().filter(|&&r| r == c).count() as f64 / total as f64).powi(2))
        .sum();
    (observed - chance) / (1.0 - chance)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 500 {
        let items = rng.random_range(2..15);
        let ratings: Vec<Vec<usize>> = (0..items).map(|_| (0..5).map(|_| rng.random_range(0..2)).collect()).collect();
        let counts: Vec<[u32; 2]> = ratings
            .iter()
            .map(|r| {
                let pos = r.iter().filter(|&&x| x == 1).count() as u32;
                [5 - pos, pos]
            })
            .collect();
        let Ok(k) = fleiss_kappa_counts(&counts, 5) else { continue };
        worst = worst.max((k - kappa_oracle(&ratings)).abs());
        cases += 1;
    }
    if worst >= 1e-12 {
        return Err(format!("oracle mismatch {worst:e}"));
    }
    let split = dataset().map_err(|e| format!("oracle ok ({worst:.1e} over {cases} cases); {e}"))?;
    let kappa = fleiss_kappa(&split.all(), 5).map_err(|e| e.to_string())?;
    check(
        (kappa - 0.52).abs() <= 0.01,
        format!("kappa {kappa:.4}; oracle max diff {worst:.1e} over {cases} cases"),
    )
}

fn criterion_3() -> Outcome {
    let split = dataset()?;
    let train = binarize(&split.train, 0.8);
    let test = binarize(&split.test, 0.8);
    let gold: Vec<u8> = test.iter().map(|q| q.label).collect();
    let majority = MajorityBaseline::fit(&train).map_err(|e| e.to_string())?;
    let maj = accuracy(&vec![majority.predict(); gold.len()], &gold).map_err(|e| e.to_string())?.accuracy * 100.0;
    let words = QuestionWordList::default();
    let preds: Vec<u8> = test.iter().map(|q| words.classify(&tokenize(&q.text))).collect();
    let qw = accuracy(&preds, &gold).map_err(|e| e.to_string())?.accuracy * 100.0;
    check(
        (maj - 61.5).abs() <= 0.1 && (qw - 54.9).abs() <= 1.5,
        format!("majority {maj:.1}, question word {qw:.1}"),
    )
}

fn ablation_max(split: &DatasetSplit, pipeline: &Pipeline, ablation: Ablation) -> Result<(f64, Duration), String> {
    let start = Instant::now();
    let config = FfnConfig { families: ablation.families(), ..Default::default() };
    let data = prepare(split, pipeline, &config).map_err(|e| e.to_string())?;
    let runs = train_with_tuning(&data, pipeline, &config, &DEFAULT_LR_GRID, &[1, 2, 3]).map_err(|e| e.to_string())?;
    let best = runs.iter().map(|r| r.test_accuracy).fold(0.0, f64::max) * 100.0;
    Ok((best, start.elapsed()))
}

fn criterion_4() -> Outcome {
    let split = dataset()?;
    let (w1, t1) = ablation_max(&split, &Pipeline::untagged(), Ablation::Word1)?;
    let (w12, t12) = ablation_max(&split, &Pipeline::untagged(), Ablation::Word12)?;
    let tagger = query_tagger().map_err(|e| format!("word-1 {w1:.1}, word-1,2 {w12:.1}; POS runs need a tagger: {e}"))?;
    let (pos, tpos) = ablation_max(&split, &Pipeline::new(Tagging::Perceptron(tagger)), Ablation::Word12Pos123)?;
    let limit = Duration::from_secs(30 * 60);
    check(
        pos >= 67.7 && w1 >= 62.4 && pos - w12 >= 2.5 && [t1, t12, tpos].iter().all(|t| *t <= limit),
        format!(
            "word-1,2 POS-1,2,3 {pos:.1}, word-1 {w1:.1}, word-1,2 {w12:.1} (POS gain {:.1}); minutes {:.1}/{:.1}/{:.1}",
            pos - w12,
            t1.as_secs_f64() / 60.0,
            t12.as_secs_f64() / 60.0,
            tpos.as_secs_f64() / 60.0
        ),
    )
}

fn criterion_5() -> Outcome {
    let split = dataset()?;
    let to_train = |qs: &[qwf_core::AnnotatedQuery]| -> Vec<(Vec<String>, f64)> {
        qs.iter().map(|q| (tokenize(q.text()), f64::from(label_for(q, 0.8)))).collect()
    };
    let to_eval = |qs: &[qwf_core::AnnotatedQuery]| -> Vec<(Vec<String>, u8)> {
        qs.iter().map(|q| (tokenize(q.text()), label_for(q, 0.8))).collect()
    };
    let (train, dev, test) = (to_train(&split.train), to_eval(&split.dev), to_eval(&split.test));
    let vocab = Vocab::build(train.iter().map(|(t, _)| t.as_slice()), 2);
    let test_acc = |m: &BiLstmModel| -> Result<f64, String> {
        let preds: Vec<u8> = test.iter().map(|(t, _)| m.predict(t)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let gold: Vec<u8> = test.iter().map(|(_, l)| *l).collect();
        Ok(accuracy(&preds, &gold).map_err(|e| e.to_string())?.accuracy * 100.0)
    };
    let mut best_lr = (f64::NEG_INFINITY, 0.0, 0.0);
    for lr in [0.01, 0.03, 0.1, 0.3] {
        let config = BiLstmConfig { learning_rate: lr, seed: 1, ..Default::default() };
        let model = BiLstmModel::init(config, vocab.clone()).map_err(|e| e.to_string())?;
        let (model, report) = bilstm::train(model, &train, &dev).map_err(|e| e.to_string())?;
        if report.best_dev_accuracy > best_lr.0 {
            best_lr = (report.best_dev_accuracy, lr, test_acc(&model)?);
        }
    }
    let mut best = best_lr.2;
    for seed in [2, 3] {
        let config = BiLstmConfig { learning_rate: best_lr.1, seed, ..Default::default() };
        let model = BiLstmModel::init(config, vocab.clone()).map_err(|e| e.to_string())?;
        let (model, _) = bilstm::train(model, &train, &dev).map_err(|e| e.to_string())?;
        best = best.max(test_acc(&model)?);
    }
    check((best - 65.8).abs() <= 2.0, format!("test accuracy {best:.1} (lr {})", best_lr.1))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (mut ff, mut bl): (f64, f64) = (0.0, 0.0);
    let configs = 20;
    for seed in 0..configs {
        ff = ff.max(common::ffnet_case(seed).max_rel_error);
        bl = bl.max(common::bilstm_case(seed).max_rel_error);
    }
    let elapsed = start.elapsed();
    check(
        ff < 1e-4 && bl < 1e-4 && elapsed < Duration::from_secs(60),
        format!("{configs} configs each; max rel error ffnet {ff:.1e}, bilstm {bl:.1e}; {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_7() -> Outcome {
    let corpus: Vec<Vec<&str>> = vec![vec!["what", "is", "the", "capital", "?"], vec!["who", "wrote", "it", "?"]];
    let perfect = bleu_corpus(&corpus, &corpus, 4).map_err(|e| e.to_string())?;
    let example = bleu_corpus(&[vec!["the", "the", "the"]], &[vec!["the", "cat"]], 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut additive = true;
    for _ in 0..200 {
        let n = rng.random_range(1..10);
        let sent = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.random_range(0..10)).map(|_| rng.random_range(0..5)).collect() };
        let cands: Vec<Vec<u8>> = (0..n).map(|_| sent(&mut rng)).collect();
        let refs: Vec<Vec<u8>> = (0..n).map(|_| sent(&mut rng)).collect();
        let summed: BleuStats = cands.iter().zip(&refs).map(|(c, r)| BleuStats::from_pair(c, r)).sum();
        let direct = corpus_stats(&cands, &refs).map_err(|e| e.to_string())?;
        additive &= summed == direct
            && (1..=4).all(|o| bleu_corpus(&cands, &refs, o).unwrap() == summed.bleu(o));
    }
    check(
        perfect == 1.0 && example == 1.0 / 3.0 && additive,
        format!("perfect {perfect}, the/cat {example:.6}, additivity {additive}"),
    )
}

fn criterion_8() -> Outcome {
    let fixture = common::rerank_fixture();
    // Random lists with generator-ordered scores.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words = ["what", "is", "the", "a", "of", "?", "who", "river"];
    let mut random_sets = Vec::new();
    for set in 0..30 {
        let lists: Vec<qwf_core::NBestList> = (0..rng.random_range(1..8))
            .map(|i| {
                let sent = |rng: &mut ChaCha8Rng| -> Vec<String> {
                    (0..rng.random_range(1..8)).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
                };
                let reference = sent(&mut rng);
                let mut scores: Vec<f64> = (0..rng.random_range(1..11)).map(|_| -rng.random_range(0.0..5.0)).collect();
                scores.sort_by(|a, b| b.total_cmp(a));
                let candidates = scores
                    .into_iter()
                    .enumerate()
                    .map(|(r, g)| qwf_core::Candidate {
                        rank: r as u32 + 1,
                        tokens: sent(&mut rng),
                        gen_score: g,
                        p_wf: Some(rng.random_range(0.0..1.0)),
                    })
                    .collect();
                qwf_core::NBestList { id: format!("s{set}-{i}"), reference, candidates }
            })
            .collect();
        random_sets.push(lists);
    }
    random_sets.push(fixture.clone());

    let zero = RerankerModel::default();
    let (mut a, mut b, mut d) = (true, true, true);
    for lists in &random_sets {
        a &= lists.iter().all(|l| rerank(l, &zero).unwrap().rank == 1);
        let tuned = tune_lambda(lists, &default_lambda_grid(), false).map_err(|e| e.to_string())?;
        let base = evaluate_selection(lists, Chooser::Baseline, &zero).map_err(|e| e.to_string())?;
        b &= tuned.dev_bleu4 >= base.bleu4;
        for l in lists {
            let o = oracle_select(l).unwrap();
            let os = BleuStats::from_pair(&o.tokens, &l.reference).smoothed_bleu(4);
            d &= l.candidates.iter().all(|c| BleuStats::from_pair(&c.tokens, &l.reference).smoothed_bleu(4) <= os);
        }
    }
    let c = tune_lambda(&fixture, &default_lambda_grid(), false).map_err(|e| e.to_string())?.dev_bleu4;
    check(
        a && b && c == 1.0 && d,
        format!("(a) {a} (b) {b} (c) fixture dev BLEU-4 {c} (d) {d}; {} list sets", random_sets.len()),
    )
}

fn criterion_9() -> Outcome {
    let split = common::toy_split();
    let config = FfnConfig {
        families: Ablation::Word12Char34.families(),
        embed_dim: 8,
        char_embed_dim: 4,
        hidden1: 16,
        hidden2: 8,
        batch_size: 4,
        train_steps: 500,
        eval_every: 50,
        ..Default::default()
    };
    let run = || -> Result<(Vec<u8>, String), String> {
        let data = prepare(&split, &Pipeline::untagged(), &config).map_err(|e| e.to_string())?;
        let r = train_once(&data, &Pipeline::untagged(), &config).map_err(|e| e.to_string())?;
        Ok((r.model.to_bytes().map_err(|e| e.to_string())?, r.report.to_tsv()))
    };
    let (m1, r1) = run()?;
    let (m2, r2) = run()?;
    let bl = || -> Result<Vec<u8>, String> {
        let train: Vec<(Vec<String>, f64)> = split.train.iter().map(|q| (tokenize(q.text()), f64::from(label_for(q, 0.8)))).collect();
        let dev: Vec<(Vec<String>, u8)> = split.dev.iter().map(|q| (tokenize(q.text()), label_for(q, 0.8))).collect();
        let vocab = Vocab::build(train.iter().map(|(t, _)| t.as_slice()), 1);
        let cfg = BiLstmConfig { embed_dim: 6, hidden: 6, train_steps: 200, eval_every: 50, ..Default::default() };
        let (m, _) = bilstm::train(BiLstmModel::init(cfg, vocab).map_err(|e| e.to_string())?, &train, &dev).map_err(|e| e.to_string())?;
        m.to_bytes().map_err(|e| e.to_string())
    };
    let tagger_json = || -> Result<String, String> {
        let corpus = load_conll(common::sample_conll(), ConllColumns::PLAIN).map_err(|e| e.to_string())?;
        TaggerTrainer { epochs: 3, seed: 4, lowercase: true }.train(&corpus).and_then(|t| t.to_json()).map_err(|e| e.to_string())
    };
    check(
        m1 == m2 && r1 == r2 && bl()? == bl()? && tagger_json()? == tagger_json()?,
        format!("classifier model {} bytes and report identical across runs; BiLSTM and tagger identical", m1.len()),
    )
}

fn criterion_10() -> Outcome {
    let toy = load_conll(common::sample_conll(), ConllColumns::PLAIN).map_err(|e| e.to_string())?;
    let toy_acc = TaggerTrainer { epochs: 5, seed: 0, lowercase: false }
        .train(&toy)
        .map_err(|e| e.to_string())?
        .accuracy(&toy);
    if toy_acc != 1.0 {
        return Err(format!("toy corpus accuracy {toy_acc}"));
    }
    let mut corpus = conll_corpus().map_err(|e| format!("toy corpus 100%; {e}"))?;
    let tokens: usize = corpus.iter().map(TaggedSentence::len).sum();
    if tokens < 10_000 {
        return Err(format!("toy corpus 100%; supplied corpus has only {tokens} tokens"));
    }
    corpus.shuffle(&mut ChaCha8Rng::seed_from_u64(10));
    let held = corpus.len() / 10;
    let (test, train) = corpus.split_at(held);
    let tagger = TaggerTrainer { epochs: 5, seed: 0, lowercase: false }.train(train).map_err(|e| e.to_string())?;
    let acc = tagger.accuracy(test) * 100.0;
    check(acc >= 90.0, format!("toy corpus 100%; held-out accuracy {acc:.2}% on {tokens} tokens"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("dataset statistics", criterion_1),
        ("Fleiss kappa", criterion_2),
        ("majority and question-word baselines", criterion_3),
        ("classifier ablations", criterion_4),
        ("BiLSTM baseline", criterion_5),
        ("gradient checks", criterion_6),
        ("BLEU", criterion_7),
        ("reranker properties", criterion_8),
        ("determinism", criterion_9),
        ("POS tagger", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
