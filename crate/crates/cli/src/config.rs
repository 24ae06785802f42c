//! Run configuration files (TOML). Command-line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qwf_core::baselines::BiLstmConfig;
use qwf_core::featurize::{Ablation, FamilySet};
use qwf_core::ffnet::{FfnConfig, TargetMode};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Ffnet,
    Bilstm,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfnOverrides {
    pub char_embed_dim: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden1: Option<usize>,
    pub hidden2: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub train_steps: Option<usize>,
    pub eval_every: Option<usize>,
    pub target_mode: Option<TargetMode>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiLstmOverrides {
    pub embed_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub min_count: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub train_steps: Option<usize>,
    pub eval_every: Option<usize>,
    pub target_mode: Option<TargetMode>,
}

/// Contents of a run configuration file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<ModelKind>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub tagger: Option<PathBuf>,
    pub pretagged: Option<PathBuf>,
    pub ablation: Option<String>,
    pub families: Option<String>,
    pub seed: Option<u64>,
    /// Extra seeds trained after learning-rate tuning; the best on dev wins.
    pub seeds: Option<Vec<u64>>,
    pub lr_grid: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    #[serde(default)]
    pub ffnet: FfnOverrides,
    #[serde(default)]
    pub bilstm: BiLstmOverrides,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data, &mut cfg.model, &mut cfg.report, &mut cfg.tagger, &mut cfg.pretagged]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub tagger: Option<PathBuf>,
    pub pretagged: Option<PathBuf>,
    pub families: Option<String>,
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum TagSource {
    None,
    Tagger(PathBuf),
    Pretagged(PathBuf),
}

/// Fully resolved and validated training run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: ModelKind,
    pub data: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
    pub tags: TagSource,
    pub ffnet: FfnConfig,
    pub bilstm: BiLstmConfig,
    pub seeds: Vec<u64>,
    pub lr_grid: Option<Vec<f64>>,
}

fn field<T>(name: &str, v: Option<T>) -> Result<T> {
    v.with_context(|| format!("missing `{name}` (set it in the config or with --{name})"))
}

pub fn resolve(cfg: RunConfig, over: Overrides) -> Result<Resolved> {
    let kind = cfg.kind.unwrap_or_default();
    let data = field("data", over.data.or(cfg.data))?;
    let model = field("model", over.model.or(cfg.model))?;
    let report = over.report.or(cfg.report).unwrap_or_else(|| {
        let mut s = model.clone().into_os_string();
        s.push(".train.tsv");
        PathBuf::from(s)
    });
    let seed = over.seed.or(cfg.seed).unwrap_or(1);
    let threshold = over.threshold.or(cfg.threshold).unwrap_or(qwf_core::corpus::DEFAULT_THRESHOLD);
    if !(threshold > 0.0 && threshold <= 1.0) {
        bail!("`threshold` must be in (0, 1], got {threshold}");
    }

    let families = match (over.families, cfg.families, cfg.ablation) {
        (Some(f), _, _) | (None, Some(f), None) => FamilySet::parse(&f).with_context(|| "invalid `families`")?,
        (None, None, Some(a)) => Ablation::from_name(&a)
            .with_context(|| {
                let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
                format!("unknown `ablation` {a:?}; expected one of {names:?}")
            })?
            .families(),
        (None, Some(_), Some(_)) => bail!("set either `ablation` or `families`, not both"),
        (None, None, None) => FfnConfig::default().families,
    };

    let tags = match (over.tagger.or(cfg.tagger), over.pretagged.or(cfg.pretagged)) {
        (Some(_), Some(_)) => bail!("set either `tagger` or `pretagged`, not both"),
        (Some(t), None) => TagSource::Tagger(t),
        (None, Some(p)) => TagSource::Pretagged(p),
        (None, None) => TagSource::None,
    };
    if kind == ModelKind::Ffnet && families.needs_tags() && matches!(tags, TagSource::None) {
        bail!("feature families {families} include POS n-grams but neither `tagger` nor `pretagged` is set");
    }
    for path in [Some(&data), match &tags {
        TagSource::Tagger(p) | TagSource::Pretagged(p) => Some(p),
        TagSource::None => None,
    }]
    .into_iter()
    .flatten()
    {
        if !path.exists() {
            bail!("path {} does not exist", path.display());
        }
    }

    let o = cfg.ffnet;
    let d = FfnConfig::default();
    let ffnet = FfnConfig {
        families,
        char_embed_dim: o.char_embed_dim.unwrap_or(d.char_embed_dim),
        embed_dim: o.embed_dim.unwrap_or(d.embed_dim),
        hidden1: o.hidden1.unwrap_or(d.hidden1),
        hidden2: o.hidden2.unwrap_or(d.hidden2),
        learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
        momentum: o.momentum.unwrap_or(d.momentum),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        train_steps: o.train_steps.unwrap_or(d.train_steps),
        eval_every: o.eval_every.unwrap_or(d.eval_every),
        seed,
        target_mode: o.target_mode.unwrap_or(d.target_mode),
        threshold,
    };
    ffnet.validate().context("invalid [ffnet] settings")?;

    let o = cfg.bilstm;
    let d = BiLstmConfig::default();
    let bilstm = BiLstmConfig {
        embed_dim: o.embed_dim.unwrap_or(d.embed_dim),
        hidden: o.hidden.unwrap_or(d.hidden),
        min_count: o.min_count.unwrap_or(d.min_count),
        learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
        momentum: o.momentum.unwrap_or(d.momentum),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        train_steps: o.train_steps.unwrap_or(d.train_steps),
        eval_every: o.eval_every.unwrap_or(d.eval_every),
        seed,
        target_mode: o.target_mode.unwrap_or(d.target_mode),
        threshold,
    };
    bilstm.validate().context("invalid [bilstm] settings")?;

    let mut seeds = vec![seed];
    for s in cfg.seeds.unwrap_or_default() {
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    if let Some(grid) = &cfg.lr_grid {
        if grid.is_empty() {
            bail!("`lr_grid` is empty");
        }
    }
    Ok(Resolved { kind, data, model, report, tags, ffnet, bilstm, seeds, lr_grid: cfg.lr_grid })
}
