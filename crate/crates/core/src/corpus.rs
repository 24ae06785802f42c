//! The annotated query corpus: loading, binarization, agreement statistics
//! and train/dev/test splitting.
//!
//! Each query carries the number of positive votes out of [`RATERS`] crowd
//! ratings. The well-formedness probability `p_wf` is always derived from that
//! count, so the six legal values compare exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Raters per query in the released data.
pub const RATERS: u8 = 5;

/// Default positive threshold: at least 4 of 5 raters said well-formed.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Released split sizes (train, dev, test).
pub const RELEASED_SPLIT_SIZES: (usize, usize, usize) = (17_500, 3_750, 3_850);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedQuery {
    text: String,
    votes: u8,
}

impl AnnotatedQuery {
    /// `votes` is the number of positive ratings out of [`RATERS`].
    pub fn new(text: impl Into<String>, votes: u8) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("query text is empty".into()));
        }
        if votes > RATERS {
            return Err(Error::InvalidArgument(format!(
                "{votes} positive votes exceeds {RATERS} raters"
            )));
        }
        Ok(AnnotatedQuery { text, votes })
    }

    /// Builds a query from a probability; it must be an exact fifth.
    pub fn from_probability(text: impl Into<String>, p_wf: f64) -> Result<Self> {
        let votes = votes_from_probability(p_wf).ok_or_else(|| {
            Error::InvalidArgument(format!("rating {p_wf} is not a multiple of 0.2 in [0, 1]"))
        })?;
        Self::new(text, votes)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn votes(&self) -> u8 {
        self.votes
    }

    pub fn p_wf(&self) -> f64 {
        f64::from(self.votes) / f64::from(RATERS)
    }
}

fn votes_from_probability(p: f64) -> Option<u8> {
    if !p.is_finite() {
        return None;
    }
    let scaled = p * f64::from(RATERS);
    let rounded = scaled.round();
    if (scaled - rounded).abs() > 1e-9 || !(0.0..=f64::from(RATERS)).contains(&rounded) {
        return None;
    }
    Some(rounded as u8)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub text: String,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedQuery>,
    pub dev: Vec<AnnotatedQuery>,
    pub test: Vec<AnnotatedQuery>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All queries in train, dev, test order.
    pub fn all(&self) -> Vec<AnnotatedQuery> {
        self.train.iter().chain(&self.dev).chain(&self.test).cloned().collect()
    }
}

/// Parses `query<TAB>rating` lines. Blank lines are skipped; the query is
/// kept as released (only the line terminator is stripped).
pub fn parse_tsv<R: BufRead>(reader: R) -> Result<Vec<AnnotatedQuery>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (text, rating) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
            line: lineno,
            message: "expected `query<TAB>rating`".into(),
        })?;
        let value: f64 = rating.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("unparseable rating {rating:?}"),
        })?;
        let votes = votes_from_probability(value).ok_or_else(|| Error::Validation {
            line: lineno,
            message: format!("rating {rating} is not a multiple of 0.2 in [0, 1]"),
        })?;
        let query = AnnotatedQuery::new(text, votes).map_err(|e| Error::Validation {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(query);
    }
    Ok(out)
}

/// Loads a single TSV file.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<Vec<AnnotatedQuery>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(std::io::BufReader::new(file))
}

/// Loads the pre-split layout: `train.tsv`, `dev.tsv` and `test.tsv` in `dir`.
pub fn load_split_dir(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    Ok(DatasetSplit {
        train: load_tsv(dir.join("train.tsv"))?,
        dev: load_tsv(dir.join("dev.tsv"))?,
        test: load_tsv(dir.join("test.tsv"))?,
    })
}

/// Either layout: a directory is read as the three-file split, a file as the
/// full unsplit dataset (returned as the `train` part of a split with empty
/// dev and test).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    if path.is_dir() {
        load_split_dir(path)
    } else {
        Ok(DatasetSplit { train: load_tsv(path)?, ..Default::default() })
    }
}

pub fn binarize(queries: &[AnnotatedQuery], threshold: f64) -> Vec<LabeledQuery> {
    queries
        .iter()
        .map(|q| LabeledQuery { text: q.text.clone(), label: label_for(q, threshold) })
        .collect()
}

/// 1 iff `p_wf >= threshold`, compared on vote counts.
pub fn label_for(query: &AnnotatedQuery, threshold: f64) -> u8 {
    let needed = threshold * f64::from(RATERS);
    u8::from(f64::from(query.votes) >= needed - 1e-9)
}

/// Fleiss' kappa over two categories, with per-item counts reconstructed from
/// `p_wf` as `round(p_wf * raters)` positive votes.
pub fn fleiss_kappa(queries: &[AnnotatedQuery], raters: u32) -> Result<f64> {
    if queries.len() < 2 {
        return Err(Error::InvalidArgument("fleiss kappa needs at least 2 items".into()));
    }
    if raters < 2 {
        return Err(Error::InvalidArgument("fleiss kappa needs at least 2 raters".into()));
    }
    let counts: Vec<[u32; 2]> = queries
        .iter()
        .map(|q| {
            let pos = (q.p_wf() * f64::from(raters)).round() as u32;
            [raters - pos, pos]
        })
        .collect();
    fleiss_kappa_counts(&counts, raters)
}

/// Fleiss' kappa from an item-by-category count table; each row must sum to
/// `raters`.
pub fn fleiss_kappa_counts<const K: usize>(counts: &[[u32; K]], raters: u32) -> Result<f64> {
    let n_items = counts.len();
    if n_items < 2 {
        return Err(Error::InvalidArgument("fleiss kappa needs at least 2 items".into()));
    }
    let n = f64::from(raters);
    let mut category_totals = [0u64; K];
    let mut observed_sum = 0.0;
    for row in counts {
        if row.iter().sum::<u32>() != raters {
            return Err(Error::InvalidArgument(format!(
                "item counts {row:?} do not sum to {raters} raters"
            )));
        }
        let sq: u64 = row.iter().map(|&c| u64::from(c) * u64::from(c)).sum();
        observed_sum += (sq as f64 - n) / (n * (n - 1.0));
        for (total, &c) in category_totals.iter_mut().zip(row) {
            *total += u64::from(c);
        }
    }
    let observed = observed_sum / n_items as f64;
    let denom = n_items as f64 * n;
    let chance: f64 = category_totals.iter().map(|&t| (t as f64 / denom).powi(2)).sum();
    if chance >= 1.0 {
        if observed >= 1.0 {
            return Ok(1.0);
        }
        return Err(Error::DegenerateKappa { observed });
    }
    Ok((observed - chance) / (1.0 - chance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub total: usize,
    pub kappa: f64,
    pub agreement_count: usize,
    pub agreement_fraction: f64,
    /// Keyed by the probability printed with one decimal ("0.0" .. "1.0").
    pub histogram: BTreeMap<String, usize>,
}

impl AgreementReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("queries\t{}\n", self.total));
        s.push_str(&format!("fleiss_kappa\t{:.4}\n", self.kappa));
        s.push_str(&format!("agreement_count\t{}\n", self.agreement_count));
        s.push_str(&format!("agreement_fraction\t{:.4}\n", self.agreement_fraction));
        for (bin, count) in &self.histogram {
            s.push_str(&format!("p_wf={bin}\t{count}\n"));
        }
        s
    }
}

/// Histogram over the six vote counts, index = positive votes.
pub fn histogram(queries: &[AnnotatedQuery]) -> [usize; RATERS as usize + 1] {
    let mut bins = [0; RATERS as usize + 1];
    for q in queries {
        bins[q.votes as usize] += 1;
    }
    bins
}

/// Queries where at least 4 of 5 raters agree (p_wf <= 0.2 or p_wf >= 0.8).
pub fn agreement_count(queries: &[AnnotatedQuery]) -> usize {
    queries.iter().filter(|q| q.votes <= 1 || q.votes >= RATERS - 1).count()
}

pub fn agreement_report(queries: &[AnnotatedQuery]) -> Result<AgreementReport> {
    if queries.is_empty() {
        return Err(Error::Empty("agreement report needs at least one query"));
    }
    let kappa = if queries.len() >= 2 { fleiss_kappa(queries, u32::from(RATERS))? } else { 1.0 };
    let count = agreement_count(queries);
    let histogram = histogram(queries)
        .iter()
        .enumerate()
        .map(|(votes, &c)| (format!("{:.1}", votes as f64 / f64::from(RATERS)), c))
        .collect();
    Ok(AgreementReport {
        total: queries.len(),
        kappa,
        agreement_count: count,
        agreement_fraction: count as f64 / queries.len() as f64,
        histogram,
    })
}

/// Seeded shuffle followed by a contiguous partition into the three sizes.
pub fn split_dataset(
    queries: &[AnnotatedQuery],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplit> {
    let (n_train, n_dev, n_test) = sizes;
    if n_train + n_dev + n_test != queries.len() {
        return Err(Error::InvalidArgument(format!(
            "split sizes {n_train}+{n_dev}+{n_test} do not sum to {} queries",
            queries.len()
        )));
    }
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut seed::rng(seed, "corpus-split"));
    let pick = |range: std::ops::Range<usize>| -> Vec<AnnotatedQuery> {
        order[range].iter().map(|&i| queries[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: pick(0..n_train),
        dev: pick(n_train..n_train + n_dev),
        test: pick(n_train + n_dev..queries.len()),
    })
}

/// Writes queries back in the `query<TAB>rating` layout.
pub fn write_tsv<W: std::io::Write>(mut out: W, queries: &[AnnotatedQuery]) -> std::io::Result<()> {
    for q in queries {
        writeln!(out, "{}\t{:.1}", q.text, q.p_wf())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(text: &str, votes: u8) -> AnnotatedQuery {
        AnnotatedQuery::new(text, votes).unwrap()
    }

    #[test]
    fn parses_released_rows() {
        let data = "population of owls just in north america?\t0.0\n\
                    what is released when an ion is formed?\t1.0\n";
        let rows = parse_tsv(data.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].text(), "population of owls just in north america?");
        assert_eq!(rows[0].p_wf(), 0.0);
        assert_eq!(rows[1].p_wf(), 1.0);
    }

    #[test]
    fn rejects_bad_ratings() {
        match parse_tsv("q\t0.3\n".as_bytes()) {
            Err(Error::Validation { line: 1, .. }) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
        match parse_tsv("ok\t0.2\nno tab here\n".as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_tsv("q\tabc\n".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(parse_tsv("q\t1.2\n".as_bytes()), Err(Error::Validation { .. })));
        assert!(matches!(parse_tsv("  \t0.2\n".as_bytes()), Err(Error::Validation { .. })));
    }

    #[test]
    fn binarize_threshold() {
        let qs = [q("a", 4), q("what countries have genocide happened in?", 3), q("c", 5)];
        let labels: Vec<u8> = binarize(&qs, DEFAULT_THRESHOLD).iter().map(|l| l.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
    }

    #[test]
    fn kappa_perfect_agreement() {
        let qs = [q("a", 0), q("b", 5), q("c", 5)];
        assert_eq!(fleiss_kappa(&qs, 5).unwrap(), 1.0);
        // Unanimous and all in one category: chance agreement is 1.
        let qs = [q("a", 5), q("b", 5)];
        assert_eq!(fleiss_kappa(&qs, 5).unwrap(), 1.0);
    }

    #[test]
    fn kappa_needs_two_items() {
        assert!(fleiss_kappa(&[q("a", 3)], 5).is_err());
    }

    #[test]
    fn agreement_small_cases() {
        let r = agreement_report(&[q("a", 2)]).unwrap();
        assert_eq!((r.agreement_count, r.agreement_fraction), (0, 0.0));
        let r = agreement_report(&[q("a", 0), q("b", 3)]).unwrap();
        assert_eq!((r.agreement_count, r.agreement_fraction), (1, 0.5));
        assert_eq!(r.histogram.values().sum::<usize>(), 2);
        assert_eq!(r.histogram["0.0"], 1);
        assert_eq!(r.histogram["0.6"], 1);
        assert!(agreement_report(&[]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let one = [q("only", 1)];
        let s = split_dataset(&one, (1, 0, 0), 3).unwrap();
        assert_eq!(s.train, one.to_vec());
        assert!(s.dev.is_empty() && s.test.is_empty());

        let many: Vec<_> = (0..50).map(|i| q(&format!("q{i}"), (i % 6) as u8)).collect();
        let a = split_dataset(&many, (30, 10, 10), 9).unwrap();
        let b = split_dataset(&many, (30, 10, 10), 9).unwrap();
        assert_eq!(a, b);
        assert!(split_dataset(&many, (30, 10, 9), 9).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let qs = vec![q("a b ?", 0), q("c", 3)];
        let mut buf = Vec::new();
        write_tsv(&mut buf, &qs).unwrap();
        assert_eq!(parse_tsv(buf.as_slice()).unwrap(), qs);
    }
}
