//! Reranking of generator n-best lists with a well-formedness feature.
//!
//! A candidate scores `gen_score + lambda * p_wf`; `lambda` is picked from a
//! grid by dev corpus BLEU-4 of the selections.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{corpus_stats, BleuStats, MAX_BLEU_ORDER};
use crate::pipeline::Classifier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Generator rank, 1 = generator's best.
    pub rank: u32,
    pub tokens: Vec<String>,
    pub gen_score: f64,
    pub p_wf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub id: String,
    pub reference: Vec<String>,
    /// Sorted by rank.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankerModel {
    pub lambda: f64,
    /// Divide `gen_score` by the candidate length before interpolating.
    pub length_normalize: bool,
}

impl Default for RerankerModel {
    fn default() -> Self {
        RerankerModel { lambda: 0.0, length_normalize: false }
    }
}

impl RerankerModel {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(RerankerModel { lambda, length_normalize: false })
    }

    pub fn score(&self, c: &Candidate) -> Result<f64> {
        let p = c
            .p_wf
            .ok_or_else(|| Error::InvalidArgument(format!("candidate {} has no p_wf", c.rank)))?;
        let g = if self.length_normalize {
            c.gen_score / c.tokens.len().max(1) as f64
        } else {
            c.gen_score
        };
        Ok(g + self.lambda * p)
    }
}

/// `{0}` followed by 50 log-spaced values from 1e-3 to 1e2.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    let (lo, hi) = (-3.0f64, 2.0f64);
    grid.extend((0..50).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / 49.0)));
    grid
}

/// Fills every candidate's `p_wf` with the classifier's probability for the
/// candidate text.
pub fn score_candidates(lists: &mut [NBestList], classifier: &Classifier) -> Result<()> {
    for list in lists {
        for c in &mut list.candidates {
            c.p_wf = Some(classifier.p_wf(&c.tokens.join(" "))?);
        }
    }
    Ok(())
}

/// Index (into `candidates`) of the first candidate with the highest value.
fn first_max(values: impl Iterator<Item = Result<f64>>) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        let v = v?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    Ok(best.map(|(i, _)| i))
}

fn empty_list(list: &NBestList) -> Error {
    Error::InvalidArgument(format!("n-best list {:?} has no candidates", list.id))
}

/// Highest interpolated score; ties go to the lowest rank.
pub fn rerank<'a>(list: &'a NBestList, model: &RerankerModel) -> Result<&'a Candidate> {
    let i = first_max(list.candidates.iter().map(|c| model.score(c)))?.ok_or_else(|| empty_list(list))?;
    Ok(&list.candidates[i])
}

pub fn baseline_top1(list: &NBestList) -> Result<&Candidate> {
    list.candidates.first().ok_or_else(|| empty_list(list))
}

/// Candidate with the best smoothed sentence BLEU-4 against the reference;
/// ties go to the lowest rank.
pub fn oracle_select(list: &NBestList) -> Result<&Candidate> {
    let i = first_max(
        list.candidates
            .iter()
            .map(|c| Ok(BleuStats::from_pair(&c.tokens, &list.reference).smoothed_bleu(MAX_BLEU_ORDER))),
    )?
    .ok_or_else(|| empty_list(list))?;
    Ok(&list.candidates[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chooser {
    Baseline,
    Reranked,
    Oracle,
}

impl std::str::FromStr for Chooser {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Chooser::Baseline),
            "reranked" => Ok(Chooser::Reranked),
            "oracle" => Ok(Chooser::Oracle),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?}, expected baseline, reranked or oracle"
            ))),
        }
    }
}

pub fn select<'a>(lists: &'a [NBestList], chooser: Chooser, model: &RerankerModel) -> Result<Vec<&'a Candidate>> {
    lists
        .iter()
        .map(|l| match chooser {
            Chooser::Baseline => baseline_top1(l),
            Chooser::Reranked => rerank(l, model),
            Chooser::Oracle => oracle_select(l),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScores {
    pub bleu1: f64,
    pub bleu4: f64,
}

fn selection_stats(lists: &[NBestList], chosen: &[&Candidate]) -> Result<BleuStats> {
    let cands: Vec<&[String]> = chosen.iter().map(|c| c.tokens.as_slice()).collect();
    let refs: Vec<&[String]> = lists.iter().map(|l| l.reference.as_slice()).collect();
    corpus_stats(&cands, &refs)
}

/// Corpus BLEU-1 and BLEU-4 of the chosen candidates.
pub fn evaluate_selection(lists: &[NBestList], chooser: Chooser, model: &RerankerModel) -> Result<SelectionScores> {
    let chosen = select(lists, chooser, model)?;
    let stats = selection_stats(lists, &chosen)?;
    Ok(SelectionScores { bleu1: stats.bleu(1), bleu4: stats.bleu(4) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub model: RerankerModel,
    pub dev_bleu4: f64,
    /// `(lambda, dev BLEU-4)` for every grid point.
    pub curve: Vec<(f64, f64)>,
}

/// Grid search for the lambda maximizing dev corpus BLEU-4; ties go to the
/// smaller lambda.
pub fn tune_lambda(dev: &[NBestList], grid: &[f64], length_normalize: bool) -> Result<TuneResult> {
    if dev.is_empty() {
        return Err(Error::Empty("dev n-best lists"));
    }
    if !grid.contains(&0.0) {
        return Err(Error::InvalidArgument("lambda grid must contain 0".into()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let model = RerankerModel { length_normalize, ..RerankerModel::new(lambda)? };
        let chosen = select(dev, Chooser::Reranked, &model)?;
        let b = selection_stats(dev, &chosen)?.bleu(4);
        curve.push((lambda, b));
        if best.is_none_or(|(bl, bb)| b > bb || (b == bb && lambda < bl)) {
            best = Some((lambda, b));
        }
    }
    let (lambda, dev_bleu4) = best.expect("grid is non-empty");
    Ok(TuneResult { model: RerankerModel { lambda, length_normalize }, dev_bleu4, curve })
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Reads `list_id<TAB>rank<TAB>gen_score<TAB>tokens[<TAB>p_wf]`; lists keep
/// first-seen order, candidates are sorted by rank. References are left
/// empty. The optional fifth column carries a precomputed `p_wf`.
pub fn parse_nbest<R: BufRead>(reader: R) -> Result<Vec<NBestList>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 && cols.len() != 5 {
            return Err(parse_err(lineno, "expected list_id, rank, gen_score, tokens and optional p_wf"));
        }
        let p_wf = match cols.get(4) {
            None => None,
            Some(v) => {
                let p: f64 = v.trim().parse().map_err(|_| parse_err(lineno, format!("bad p_wf {v:?}")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(parse_err(lineno, format!("p_wf {p} outside [0, 1]")));
                }
                Some(p)
            }
        };
        let rank: u32 = cols[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad rank {:?}", cols[1])))?;
        let gen_score: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad gen_score {:?}", cols[2])))?;
        if !gen_score.is_finite() {
            return Err(parse_err(lineno, "gen_score is not finite"));
        }
        let id = cols[0].to_string();
        let entry = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        if entry.iter().any(|c| c.rank == rank) {
            return Err(parse_err(lineno, format!("duplicate rank {rank} in list {:?}", cols[0])));
        }
        entry.push(Candidate { rank, tokens: tokens(cols[3]), gen_score, p_wf });
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let mut candidates = by_id.remove(&id).unwrap_or_default();
            candidates.sort_by_key(|c| c.rank);
            NBestList { id, reference: Vec::new(), candidates }
        })
        .collect())
}

/// Reads `list_id<TAB>reference tokens`.
pub fn parse_refs<R: BufRead>(reader: R) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(lineno, "expected list_id<TAB>reference"))?;
        if out.insert(id.to_string(), tokens(text)).is_some() {
            return Err(parse_err(lineno, format!("duplicate reference for {id:?}")));
        }
    }
    Ok(out)
}

/// Attaches references; every list needs one.
pub fn attach_refs(lists: &mut [NBestList], refs: &BTreeMap<String, Vec<String>>) -> Result<()> {
    for l in lists {
        l.reference = refs
            .get(&l.id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no reference for list {:?}", l.id)))?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    Ok(std::io::BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Loads an n-best file and its references.
pub fn load_lists(nbest: impl AsRef<Path>, refs: impl AsRef<Path>) -> Result<Vec<NBestList>> {
    let mut lists = parse_nbest(open(nbest.as_ref())?)?;
    let refs = parse_refs(open(refs.as_ref())?)?;
    attach_refs(&mut lists, &refs)?;
    Ok(lists)
}

/// `list_id<TAB>chosen rank<TAB>tokens` lines.
pub fn format_selections(lists: &[NBestList], chosen: &[&Candidate]) -> String {
    let mut s = String::new();
    for (l, c) in lists.iter().zip(chosen) {
        s.push_str(&format!("{}\t{}\t{}\n", l.id, c.rank, c.tokens.join(" ")));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(rank: u32, text: &str, gen: f64, p: f64) -> Candidate {
        Candidate { rank, tokens: tokens(text), gen_score: gen, p_wf: Some(p) }
    }

    #[test]
    fn worked_example_picks_second() {
        let list = NBestList {
            id: "a".into(),
            reference: tokens("x"),
            candidates: vec![cand(1, "first", -1.0, 0.2), cand(2, "second", -1.2, 0.9)],
        };
        assert_eq!(rerank(&list, &RerankerModel::new(0.5).unwrap()).unwrap().rank, 2);
        assert_eq!(rerank(&list, &RerankerModel::new(0.0).unwrap()).unwrap().rank, 1);
    }

    #[test]
    fn ties_go_to_lowest_rank() {
        let list = NBestList {
            id: "a".into(),
            reference: tokens("x"),
            candidates: vec![cand(1, "a", -1.0, 0.5), cand(2, "b", -1.0, 0.5)],
        };
        assert_eq!(rerank(&list, &RerankerModel::new(3.0).unwrap()).unwrap().rank, 1);
        assert_eq!(oracle_select(&list).unwrap().rank, 1);
    }

    #[test]
    fn missing_p_wf_and_empty_lists_error() {
        let mut list = NBestList { id: "a".into(), reference: vec![], candidates: vec![] };
        assert!(rerank(&list, &RerankerModel::default()).is_err());
        list.candidates.push(Candidate { rank: 1, tokens: vec![], gen_score: 0.0, p_wf: None });
        assert!(rerank(&list, &RerankerModel::default()).is_err());
        assert!(RerankerModel::new(-1.0).is_err());
        assert!(RerankerModel::new(f64::NAN).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-3).abs() < 1e-15);
        assert!((g[50] - 100.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn length_normalization() {
        let m = RerankerModel { lambda: 1.0, length_normalize: true };
        assert_eq!(m.score(&cand(1, "a b c d", -2.0, 0.5)).unwrap(), -0.5 + 0.5);
    }

    #[test]
    fn parse_files() {
        let nbest = "q1\t2\t-1.5\twhat is b ?\nq1\t1\t-1.0\twhat is a ?\nq0\t1\t-0.1\thi\n";
        let lists = parse_nbest(nbest.as_bytes()).unwrap();
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].id, "q1");
        assert_eq!(lists[0].candidates[0].rank, 1);
        let refs = parse_refs("q1\twhat is a ?\nq0\thi\n".as_bytes()).unwrap();
        let mut lists = lists;
        attach_refs(&mut lists, &refs).unwrap();
        assert_eq!(lists[1].reference, vec!["hi"]);
        assert!(parse_nbest("q\tx\t1\ta".as_bytes()).is_err());
        assert!(parse_nbest("q\t1\t1\ta\t1.5".as_bytes()).is_err());
        let scored = parse_nbest("q\t1\t1\ta b\t0.25".as_bytes()).unwrap();
        assert_eq!(scored[0].candidates[0].p_wf, Some(0.25));
        assert!(parse_nbest("q\t1\t1\ta\nq\t1\t2\tb".as_bytes()).is_err());
        assert!(parse_refs("q\ta\nq\tb".as_bytes()).is_err());
        let mut missing = parse_nbest("zz\t1\t0\ta".as_bytes()).unwrap();
        assert!(attach_refs(&mut missing, &refs).is_err());
    }
}
