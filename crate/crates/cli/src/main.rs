mod config;
mod output;

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qwf_core::baselines::bilstm::{self, Vocab};
use qwf_core::baselines::{BiLstmModel, MajorityBaseline, QuestionWordList};
use qwf_core::corpus::{self, label_for, AnnotatedQuery, DatasetSplit, RELEASED_SPLIT_SIZES};
use qwf_core::featurize::tokenize;
use qwf_core::ffnet::{self, FfnModel, TargetMode};
use qwf_core::metrics::{self, EvalResult};
use qwf_core::pipeline::{self, Classifier, Pipeline, RunResult, Tagging};
use qwf_core::postag::{self, ConllColumns, PerceptronTagger, TaggerTrainer};
use qwf_core::rerank::{self, Chooser, RerankerModel};
use qwf_core::{container, TrainReport};
use serde::Serialize;

use crate::config::{ModelKind, Overrides, Resolved, RunConfig, TagSource};
use crate::output::{write_atomic, Sink};

#[derive(Parser)]
#[command(name = "qwf", version, about = "Query well-formedness classification and n-best reranking")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Agreement statistics and the p_wf histogram of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Seeded train/dev/test split of a single dataset file.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for train.tsv, dev.tsv and test.tsv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Split sizes as `train,dev,test`; defaults to the released sizes
        /// when they fit, otherwise to the same proportions.
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Train the POS tagger on a CoNLL corpus.
    TagTrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = ConllFormat::Plain)]
        format: ConllFormat,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Keep token case (by default tokens are lowercased, matching query text).
        #[arg(long)]
        keep_case: bool,
        /// Report token accuracy on this CoNLL file after training.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Tag queries, one per line, into the pre-tagged `query<TAB>tokens<TAB>tags` layout.
    Tag {
        #[arg(long)]
        model: PathBuf,
        /// Input file; stdin when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier or the BiLSTM baseline from a run configuration.
    Train(TrainArgs),
    /// Accuracy of a model or baseline on one split.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[command(flatten)]
        tags: TagArgs,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Question word list for the question-word baseline.
        #[arg(long)]
        words: Option<PathBuf>,
        #[arg(long, default_value_t = corpus::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        json: bool,
    },
    /// Score queries, one per line, as `query<TAB>p_wf`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        tags: TagArgs,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Select from n-best lists by generator score, reranking, or oracle BLEU.
    Rerank(RerankArgs),
}

#[derive(Args, Clone, Default)]
struct TagArgs {
    /// Tagger model from `tag-train`.
    #[arg(long)]
    tagger: Option<PathBuf>,
    /// Pre-tagged `query<TAB>tokens<TAB>tags` file.
    #[arg(long, conflicts_with = "tagger")]
    pretagged: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training curve output (`step<TAB>train_loss<TAB>dev_acc`).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    families: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    tags: TagArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Reranked)]
    mode: Mode,
    /// Classifier used to fill p_wf; without it the n-best file must carry a
    /// fifth p_wf column.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    tags: TagArgs,
    /// Dev lists used to tune lambda in reranked mode.
    #[arg(long, requires = "dev_refs")]
    dev_nbest: Option<PathBuf>,
    #[arg(long, requires = "dev_nbest")]
    dev_refs: Option<PathBuf>,
    /// Fixed lambda instead of tuning.
    #[arg(long, conflicts_with = "dev_nbest")]
    lambda: Option<f64>,
    /// Divide generator scores by candidate length.
    #[arg(long)]
    length_normalize: bool,
    /// Selections output (`list_id<TAB>rank<TAB>tokens`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConllFormat {
    Plain,
    Conllu,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Majority,
    QuestionWord,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Reranked,
    Oracle,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats { data, json } => cmd_stats(&data, json),
        Command::Split { data, out, seed, sizes } => cmd_split(&data, &out, seed, sizes.as_deref()),
        Command::TagTrain { data, model, format, epochs, seed, keep_case, eval } => {
            cmd_tag_train(&data, &model, format, epochs, seed, !keep_case, eval.as_deref())
        }
        Command::Tag { model, input, out } => cmd_tag(&model, input.as_deref(), out.as_deref()),
        Command::Train(args) => cmd_train(args),
        Command::Eval { model, data, split, tags, baseline, words, threshold, json } => {
            cmd_eval(model.as_deref(), &data, split, &tags, baseline, words.as_deref(), threshold, json)
        }
        Command::Predict { model, tags, input } => cmd_predict(&model, &tags, input.as_deref()),
        Command::Rerank(args) => cmd_rerank(args),
    }
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn cmd_stats(data: &Path, json: bool) -> Result<()> {
    let split = corpus::load_dataset(data)?;
    let report = corpus::agreement_report(&split.all())?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn default_sizes(n: usize) -> (usize, usize, usize) {
    let (a, b, c) = RELEASED_SPLIT_SIZES;
    let total = a + b + c;
    if n == total {
        return RELEASED_SPLIT_SIZES;
    }
    let train = n * a / total;
    let dev = n * b / total;
    (train, dev, n - train - dev)
}

fn cmd_split(data: &Path, out: &Path, seed: u64, sizes: Option<&str>) -> Result<()> {
    let queries = corpus::load_tsv(data)?;
    let sizes = match sizes {
        Some(s) => {
            let parts: Vec<usize> = s
                .split(',')
                .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad split size {p:?}")))
                .collect::<Result<_>>()?;
            let [a, b, c] = parts[..] else { bail!("--sizes needs three comma-separated numbers") };
            (a, b, c)
        }
        None => default_sizes(queries.len()),
    };
    let split = corpus::split_dataset(&queries, sizes, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, part) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
        let mut buf = Vec::new();
        corpus::write_tsv(&mut buf, part)?;
        write_atomic(&out.join(format!("{name}.tsv")), &buf)?;
    }
    println!("train\t{}\ndev\t{}\ntest\t{}", sizes.0, sizes.1, sizes.2);
    Ok(())
}

fn conll_columns(format: ConllFormat) -> ConllColumns {
    match format {
        ConllFormat::Plain => ConllColumns::PLAIN,
        ConllFormat::Conllu => ConllColumns::CONLLU_XPOS,
    }
}

fn cmd_tag_train(
    data: &Path,
    model: &Path,
    format: ConllFormat,
    epochs: usize,
    seed: u64,
    lowercase: bool,
    eval: Option<&Path>,
) -> Result<()> {
    let corpus = postag::load_conll(data, conll_columns(format))?;
    let tagger = TaggerTrainer { epochs, seed, lowercase }.train(&corpus)?;
    write_atomic(model, tagger.to_json()?.as_bytes())?;
    println!("sentences\t{}", corpus.len());
    println!("tags\t{}", tagger.tagset().len());
    println!("train_accuracy\t{:.2}", tagger.accuracy(&corpus) * 100.0);
    if let Some(path) = eval {
        let gold = postag::load_conll(path, conll_columns(format))?;
        println!("eval_accuracy\t{:.2}", tagger.accuracy(&gold) * 100.0);
    }
    Ok(())
}

fn cmd_tag(model: &Path, input: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let tagger = PerceptronTagger::load(model)?;
    let mut sink = Sink::new(out)?;
    for line in open_input(input)?.lines() {
        let line = line?;
        let query = line.trim_end_matches('\r');
        if query.trim().is_empty() {
            continue;
        }
        let s = tagger.tag(&tokenize(query));
        writeln!(sink, "{query}\t{}\t{}", s.tokens().join(" "), s.tags().join(" "))?;
    }
    sink.finish()
}

fn load_pipeline(tags: &TagSource) -> Result<Pipeline> {
    Ok(match tags {
        TagSource::None => Pipeline::untagged(),
        TagSource::Tagger(p) => Pipeline::new(Tagging::Perceptron(PerceptronTagger::load(p)?)),
        TagSource::Pretagged(p) => Pipeline::new(Tagging::Pretagged(postag::load_pretagged(p)?)),
    })
}

fn tag_source(args: &TagArgs) -> TagSource {
    match (&args.tagger, &args.pretagged) {
        (Some(t), _) => TagSource::Tagger(t.clone()),
        (None, Some(p)) => TagSource::Pretagged(p.clone()),
        (None, None) => TagSource::None,
    }
}

fn load_split(path: &Path) -> Result<DatasetSplit> {
    let split = corpus::load_dataset(path)?;
    if split.dev.is_empty() {
        bail!("{} has no dev split; point --data at a directory made by `qwf split`", path.display());
    }
    Ok(split)
}

#[derive(Serialize)]
struct TrainSummary {
    kind: &'static str,
    seed: u64,
    learning_rate: f64,
    best_step: usize,
    target_mode: TargetMode,
    dev_accuracy: f64,
    test_accuracy: Option<f64>,
}

/// Best run by dev accuracy; ties keep the earlier run.
fn best_run(runs: Vec<RunResult>) -> RunResult {
    runs.into_iter()
        .reduce(|best, r| if r.dev_accuracy > best.dev_accuracy { r } else { best })
        .expect("at least one run")
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let over = Overrides {
        data: args.data,
        model: args.model,
        report: args.report,
        tagger: args.tags.tagger,
        pretagged: args.tags.pretagged,
        families: args.families,
        seed: args.seed,
        threshold: args.threshold,
    };
    let run = config::resolve(cfg, over)?;
    let split = load_split(&run.data)?;
    let (bytes, report, summary) = match run.kind {
        ModelKind::Ffnet => train_ffnet(&run, &split)?,
        ModelKind::Bilstm => train_bilstm(&run, &split)?,
    };
    write_atomic(&run.model, &bytes)?;
    write_atomic(&run.report, report.to_tsv().as_bytes())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("model\t{}", run.model.display());
        println!("seed\t{}", summary.seed);
        println!("learning_rate\t{}", summary.learning_rate);
        println!("best_step\t{}", summary.best_step);
        println!("target_mode\t{}", target_mode_name(summary.target_mode));
        println!("dev_accuracy\t{:.1}", summary.dev_accuracy * 100.0);
        if let Some(t) = summary.test_accuracy {
            println!("test_accuracy\t{:.1}", t * 100.0);
        }
    }
    Ok(())
}

fn train_ffnet(run: &Resolved, split: &DatasetSplit) -> Result<(Vec<u8>, TrainReport, TrainSummary)> {
    let pipeline = load_pipeline(&run.tags)?;
    let data = pipeline::prepare(split, &pipeline, &run.ffnet)?;
    let runs = match &run.lr_grid {
        Some(grid) => pipeline::train_with_tuning(&data, &pipeline, &run.ffnet, grid, &run.seeds)?,
        None => run
            .seeds
            .iter()
            .map(|&seed| pipeline::train_once(&data, &pipeline, &ffnet::FfnConfig { seed, ..run.ffnet.clone() }))
            .collect::<qwf_core::Result<_>>()?,
    };
    let best = best_run(runs);
    let summary = TrainSummary {
        kind: ffnet::MODEL_KIND,
        seed: best.seed,
        learning_rate: best.learning_rate,
        best_step: best.report.best_step,
        target_mode: run.ffnet.target_mode,
        dev_accuracy: best.dev_accuracy,
        test_accuracy: (!data.test.is_empty()).then_some(best.test_accuracy),
    };
    Ok((best.model.to_bytes()?, best.report, summary))
}

fn train_bilstm(run: &Resolved, split: &DatasetSplit) -> Result<(Vec<u8>, TrainReport, TrainSummary)> {
    let cfg = &run.bilstm;
    let target = |q: &AnnotatedQuery| match cfg.target_mode {
        TargetMode::Soft => q.p_wf(),
        TargetMode::Hard => f64::from(label_for(q, cfg.threshold)),
    };
    let train: Vec<(Vec<String>, f64)> = split.train.iter().map(|q| (tokenize(q.text()), target(q))).collect();
    let labeled = |qs: &[AnnotatedQuery]| -> Vec<(Vec<String>, u8)> {
        qs.iter().map(|q| (tokenize(q.text()), label_for(q, cfg.threshold))).collect()
    };
    let (dev, test) = (labeled(&split.dev), labeled(&split.test));
    let vocab = Vocab::build(train.iter().map(|(t, _)| t.as_slice()), cfg.min_count);
    let accuracy_on = |m: &BiLstmModel, data: &[(Vec<String>, u8)]| -> Result<f64> {
        let preds: Vec<u8> = data.iter().map(|(t, _)| m.predict(t)).collect::<qwf_core::Result<_>>()?;
        let gold: Vec<u8> = data.iter().map(|(_, l)| *l).collect();
        Ok(metrics::accuracy(&preds, &gold)?.accuracy)
    };
    let fit = |lr: f64, seed: u64| -> Result<(BiLstmModel, TrainReport)> {
        let config = qwf_core::baselines::BiLstmConfig { learning_rate: lr, seed, ..cfg.clone() };
        Ok(bilstm::train(BiLstmModel::init(config, vocab.clone())?, &train, &dev)?)
    };

    let mut candidates: Vec<(BiLstmModel, TrainReport)> = Vec::new();
    let lr = match &run.lr_grid {
        Some(grid) => {
            let (lr, _) = ffnet::tune_learning_rate(grid, |lr| {
                let (m, r) = fit(lr, run.seeds[0]).map_err(|e| qwf_core::Error::InvalidArgument(format!("{e:#}")))?;
                let acc = r.best_dev_accuracy;
                candidates.push((m, r));
                Ok(acc)
            })?;
            candidates.retain(|(m, _)| m.config().learning_rate == lr);
            lr
        }
        None => {
            candidates.push(fit(cfg.learning_rate, run.seeds[0])?);
            cfg.learning_rate
        }
    };
    for &seed in &run.seeds[1..] {
        candidates.push(fit(lr, seed)?);
    }
    let (model, report) = candidates
        .into_iter()
        .reduce(|best, c| if c.1.best_dev_accuracy > best.1.best_dev_accuracy { c } else { best })
        .expect("at least one run");
    let summary = TrainSummary {
        kind: bilstm::MODEL_KIND,
        seed: model.config().seed,
        learning_rate: lr,
        best_step: report.best_step,
        target_mode: cfg.target_mode,
        dev_accuracy: report.best_dev_accuracy,
        test_accuracy: if test.is_empty() { None } else { Some(accuracy_on(&model, &test)?) },
    };
    Ok((model.to_bytes()?, report, summary))
}

enum Scorer {
    Ffnet(Box<Classifier>),
    Bilstm(Box<BiLstmModel>),
}

impl Scorer {
    fn load(path: &Path, tags: &TagArgs) -> Result<Scorer> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        match container::peek_kind(&bytes)?.as_str() {
            ffnet::MODEL_KIND => {
                let model = FfnModel::from_bytes(&bytes)?;
                let pipeline = load_pipeline(&tag_source(tags))?;
                Ok(Scorer::Ffnet(Box::new(Classifier::new(model, pipeline)?)))
            }
            bilstm::MODEL_KIND => Ok(Scorer::Bilstm(Box::new(BiLstmModel::from_bytes(&bytes)?))),
            other => bail!("unsupported model kind {other:?}"),
        }
    }

    fn target_mode(&self) -> TargetMode {
        match self {
            Scorer::Ffnet(c) => c.model().config().target_mode,
            Scorer::Bilstm(m) => m.config().target_mode,
        }
    }

    fn p_wf(&self, text: &str) -> Result<f64> {
        Ok(match self {
            Scorer::Ffnet(c) => c.p_wf(text)?,
            Scorer::Bilstm(m) => m.forward(&tokenize(text))?,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model: Option<&Path>,
    data: &Path,
    split_name: SplitName,
    tags: &TagArgs,
    baseline: Option<Baseline>,
    words: Option<&Path>,
    threshold: f64,
    json: bool,
) -> Result<()> {
    let split = corpus::load_dataset(data)?;
    let part = match split_name {
        SplitName::Train => &split.train,
        SplitName::Dev => &split.dev,
        SplitName::Test => &split.test,
    };
    if part.is_empty() {
        bail!("the selected split of {} is empty", data.display());
    }
    let gold: Vec<u8> = part.iter().map(|q| label_for(q, threshold)).collect();
    let mut target_mode = None;
    let preds: Vec<u8> = match (baseline, model) {
        (Some(Baseline::Majority), _) => {
            let m = MajorityBaseline::fit(&corpus::binarize(&split.train, threshold))?;
            vec![m.predict(); part.len()]
        }
        (Some(Baseline::QuestionWord), _) => {
            let list = match words {
                Some(p) => QuestionWordList::load(p)?,
                None => QuestionWordList::default(),
            };
            part.iter().map(|q| list.classify(&tokenize(q.text()))).collect()
        }
        (None, Some(path)) => {
            let scorer = Scorer::load(path, tags)?;
            target_mode = Some(scorer.target_mode());
            part.iter()
                .map(|q| Ok(u8::from(scorer.p_wf(q.text())? > 0.5)))
                .collect::<Result<_>>()?
        }
        (None, None) => bail!("pass --model or --baseline"),
    };
    let r: EvalResult = metrics::accuracy(&preds, &gold)?;
    if json {
        let mut v = serde_json::to_value(r)?;
        if let Some(m) = target_mode {
            v["target_mode"] = serde_json::to_value(m)?;
        }
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("accuracy\t{:.1}", r.accuracy * 100.0);
        println!("n\t{}\ntp\t{}\nfp\t{}\ntn\t{}\nfn\t{}", r.n, r.tp, r.fp, r.tn, r.fn_);
        if let Some(m) = target_mode {
            println!("target_mode\t{}", target_mode_name(m));
        }
    }
    Ok(())
}

fn target_mode_name(m: TargetMode) -> &'static str {
    match m {
        TargetMode::Hard => "hard",
        TargetMode::Soft => "soft",
    }
}

fn cmd_predict(model: &Path, tags: &TagArgs, input: Option<&Path>) -> Result<()> {
    let scorer = Scorer::load(model, tags)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in open_input(input)?.lines() {
        let line = line?;
        let query = line.trim_end_matches('\r');
        writeln!(out, "{query}\t{:.3}", scorer.p_wf(query)?)?;
        out.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RerankSummary {
    mode: &'static str,
    lists: usize,
    lambda: Option<f64>,
    bleu1: f64,
    bleu4: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dev_bleu4: Option<f64>,
}

fn fill_p_wf(lists: &mut [qwf_core::NBestList], scorer: Option<&Scorer>) -> Result<()> {
    match scorer {
        Some(Scorer::Ffnet(c)) => rerank::score_candidates(lists, c)?,
        Some(Scorer::Bilstm(m)) => {
            for c in lists.iter_mut().flat_map(|l| l.candidates.iter_mut()) {
                c.p_wf = Some(m.forward(&tokenize(&c.tokens.join(" ")))?);
            }
        }
        None => {
            if let Some(c) = lists.iter().flat_map(|l| &l.candidates).find(|c| c.p_wf.is_none()) {
                bail!("candidate rank {} has no p_wf column; pass --model to score candidates", c.rank);
            }
        }
    }
    Ok(())
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let mut lists = rerank::load_lists(&args.nbest, &args.refs)?;
    let (mode, chooser) = match args.mode {
        Mode::Baseline => ("baseline", Chooser::Baseline),
        Mode::Reranked => ("reranked", Chooser::Reranked),
        Mode::Oracle => ("oracle", Chooser::Oracle),
    };
    let mut model = RerankerModel { length_normalize: args.length_normalize, ..RerankerModel::default() };
    let mut dev_bleu4 = None;
    if chooser == Chooser::Reranked {
        let scorer = args.model.as_deref().map(|p| Scorer::load(p, &args.tags)).transpose()?;
        fill_p_wf(&mut lists, scorer.as_ref())?;
        match (&args.dev_nbest, &args.dev_refs, args.lambda) {
            (Some(n), Some(r), _) => {
                let mut dev = rerank::load_lists(n, r)?;
                fill_p_wf(&mut dev, scorer.as_ref())?;
                let tuned = rerank::tune_lambda(&dev, &rerank::default_lambda_grid(), args.length_normalize)?;
                log::info!("tuned lambda {} (dev BLEU-4 {:.4})", tuned.model.lambda, tuned.dev_bleu4);
                dev_bleu4 = Some(tuned.dev_bleu4);
                model = tuned.model;
            }
            (_, _, Some(lambda)) => model = RerankerModel { length_normalize: args.length_normalize, ..RerankerModel::new(lambda)? },
            _ => bail!("reranked mode needs --lambda or --dev-nbest/--dev-refs to tune it"),
        }
    }
    let chosen = rerank::select(&lists, chooser, &model)?;
    if let Some(out) = &args.out {
        write_atomic(out, rerank::format_selections(&lists, &chosen).as_bytes())?;
    }
    let scores = rerank::evaluate_selection(&lists, chooser, &model)?;
    let summary = RerankSummary {
        mode,
        lists: lists.len(),
        lambda: (chooser == Chooser::Reranked).then_some(model.lambda),
        bleu1: scores.bleu1 * 100.0,
        bleu4: scores.bleu4 * 100.0,
        dev_bleu4: dev_bleu4.map(|b| b * 100.0),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("mode\t{mode}");
        if let Some(l) = summary.lambda {
            println!("lambda\t{l}");
        }
        println!("BLEU-1\t{:.1}", summary.bleu1);
        println!("BLEU-4\t{:.1}", summary.bleu4);
    }
    Ok(())
}
