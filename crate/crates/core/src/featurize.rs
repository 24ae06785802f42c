//! Tokenization and the typed n-gram feature families.
//!
//! Seven families feed the classifier: character 3- and 4-grams, word uni-
//! and bigrams, and POS uni-, bi- and trigrams. Each family has its own
//! vocabulary (a [`FeatureSpace`]) and its own embedding table downstream.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
const CHAR_BOS: char = '^';
const CHAR_EOS: char = '$';
const SPLIT_PUNCT: &[char] = &['?', '.', ',', '!', '\'', '"'];

/// Lowercases, splits on whitespace, and peels leading and trailing
/// punctuation (`? . , ! ' "`) into single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let start = chunk.find(|c| !SPLIT_PUNCT.contains(&c));
        let Some(start) = start else {
            tokens.extend(chunk.chars().map(String::from));
            continue;
        };
        let end = chunk.rfind(|c| !SPLIT_PUNCT.contains(&c)).unwrap();
        let end = end + chunk[end..].chars().next().unwrap().len_utf8();
        tokens.extend(chunk[..start].chars().map(String::from));
        tokens.push(chunk[start..end].to_string());
        tokens.extend(chunk[end..].chars().map(String::from));
    }
    tokens
}

/// Sliding character windows over `^` + lowercased text + `$`.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let mut chars = vec![CHAR_BOS];
    chars.extend(text.to_lowercase().chars());
    chars.push(CHAR_EOS);
    if n == 0 || chars.len() < n {
        return Vec::new();
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

/// Word n-grams joined by a single space. For `n >= 2` the sequence is padded
/// with `n - 1` boundary tokens on each side.
pub fn word_ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> Vec<String> {
    padded_ngrams(tokens, n)
}

/// POS n-grams, windowed exactly like [`word_ngrams`].
pub fn pos_ngrams<S: AsRef<str>>(tags: &[S], n: usize) -> Vec<String> {
    padded_ngrams(tags, n)
}

fn padded_ngrams<S: AsRef<str>>(items: &[S], n: usize) -> Vec<String> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return items.iter().map(|s| s.as_ref().to_string()).collect();
    }
    let pad = n - 1;
    let mut seq: Vec<&str> = Vec::with_capacity(items.len() + 2 * pad);
    seq.extend(std::iter::repeat_n(BOS, pad));
    seq.extend(items.iter().map(AsRef::as_ref));
    seq.extend(std::iter::repeat_n(EOS, pad));
    seq.windows(n).map(|w| w.join(" ")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Char3,
    Char4,
    Word1,
    Word2,
    Pos1,
    Pos2,
    Pos3,
}

impl FeatureFamily {
    /// Canonical order; embeddings are concatenated in this order.
    pub const ALL: [FeatureFamily; 7] = [
        FeatureFamily::Char3,
        FeatureFamily::Char4,
        FeatureFamily::Word1,
        FeatureFamily::Word2,
        FeatureFamily::Pos1,
        FeatureFamily::Pos2,
        FeatureFamily::Pos3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureFamily::Char3 => "char3",
            FeatureFamily::Char4 => "char4",
            FeatureFamily::Word1 => "word1",
            FeatureFamily::Word2 => "word2",
            FeatureFamily::Pos1 => "pos1",
            FeatureFamily::Pos2 => "pos2",
            FeatureFamily::Pos3 => "pos3",
        }
    }

    pub fn is_char(self) -> bool {
        matches!(self, FeatureFamily::Char3 | FeatureFamily::Char4)
    }

    pub fn is_pos(self) -> bool {
        matches!(self, FeatureFamily::Pos1 | FeatureFamily::Pos2 | FeatureFamily::Pos3)
    }

    /// Min-count cutoff used when none is given: 1 for POS, 2 otherwise.
    pub fn default_min_count(self) -> usize {
        if self.is_pos() {
            1
        } else {
            2
        }
    }

    fn order(self) -> usize {
        match self {
            FeatureFamily::Char3 | FeatureFamily::Pos3 => 3,
            FeatureFamily::Char4 => 4,
            FeatureFamily::Word1 | FeatureFamily::Pos1 => 1,
            FeatureFamily::Word2 | FeatureFamily::Pos2 => 2,
        }
    }

    /// Raw feature strings of this family for one query.
    pub fn features(self, query: &QueryAnalysis) -> Result<Vec<String>> {
        Ok(match self {
            FeatureFamily::Char3 | FeatureFamily::Char4 => char_ngrams(&query.text, self.order()),
            FeatureFamily::Word1 | FeatureFamily::Word2 => word_ngrams(&query.tokens, self.order()),
            FeatureFamily::Pos1 | FeatureFamily::Pos2 | FeatureFamily::Pos3 => {
                let tags =
                    query.tags.as_ref().ok_or_else(|| Error::MissingTags(query.text.clone()))?;
                pos_ngrams(tags, self.order())
            }
        })
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String =
            s.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).collect::<String>().to_lowercase();
        FeatureFamily::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature family {s:?}")))
    }
}

/// A set of feature families, iterated in canonical order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<FeatureFamily>", from = "Vec<FeatureFamily>")]
pub struct FamilySet(u8);

impl FamilySet {
    pub fn new(families: impl IntoIterator<Item = FeatureFamily>) -> Self {
        FamilySet(families.into_iter().fold(0, |bits, f| bits | (1 << f.index())))
    }

    pub fn contains(self, family: FeatureFamily) -> bool {
        self.0 & (1 << family.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = FeatureFamily> {
        FeatureFamily::ALL.into_iter().filter(move |f| self.contains(*f))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn needs_tags(self) -> bool {
        self.iter().any(FeatureFamily::is_pos)
    }

    /// Parses a comma/space separated family list (`word1,word2,pos1`) or an
    /// ablation name (`word-1,2 POS-1,2,3`).
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(a) = Ablation::from_name(s) {
            return Ok(a.families());
        }
        let families = s
            .split(|c: char| c == ',' || c.is_whitespace() || c == '+')
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<FeatureFamily>>>()?;
        if families.is_empty() {
            return Err(Error::InvalidArgument("empty feature family list".into()));
        }
        Ok(FamilySet::new(families))
    }
}

impl From<FamilySet> for Vec<FeatureFamily> {
    fn from(s: FamilySet) -> Self {
        s.iter().collect()
    }
}

impl From<Vec<FeatureFamily>> for FamilySet {
    fn from(v: Vec<FeatureFamily>) -> Self {
        FamilySet::new(v)
    }
}

impl fmt::Display for FamilySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(FeatureFamily::name).collect();
        f.write_str(&names.join(","))
    }
}

/// The classifier configurations compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Word1,
    Word12,
    Word12Char34,
    Word12Pos123,
    Word12Char34Pos123,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Word1,
        Ablation::Word12,
        Ablation::Word12Char34,
        Ablation::Word12Pos123,
        Ablation::Word12Char34Pos123,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Word1 => "word-1",
            Ablation::Word12 => "word-1,2",
            Ablation::Word12Char34 => "word-1,2 char-3,4",
            Ablation::Word12Pos123 => "word-1,2 POS-1,2,3",
            Ablation::Word12Char34Pos123 => "word-1,2 char-3,4 POS-1,2,3",
        }
    }

    /// Short name usable in file names and flags.
    pub fn slug(self) -> &'static str {
        match self {
            Ablation::Word1 => "word1",
            Ablation::Word12 => "word12",
            Ablation::Word12Char34 => "word12-char34",
            Ablation::Word12Pos123 => "word12-pos123",
            Ablation::Word12Char34Pos123 => "word12-char34-pos123",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        let s = s.trim();
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s) || a.slug().eq_ignore_ascii_case(s))
    }

    pub fn families(self) -> FamilySet {
        use FeatureFamily::*;
        match self {
            Ablation::Word1 => FamilySet::new([Word1]),
            Ablation::Word12 => FamilySet::new([Word1, Word2]),
            Ablation::Word12Char34 => FamilySet::new([Word1, Word2, Char3, Char4]),
            Ablation::Word12Pos123 => FamilySet::new([Word1, Word2, Pos1, Pos2, Pos3]),
            Ablation::Word12Char34Pos123 => FamilySet::new(FeatureFamily::ALL),
        }
    }
}

/// A query ready for featurization: raw text, tokens and (optionally) tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAnalysis {
    pub text: String,
    pub tokens: Vec<String>,
    pub tags: Option<Vec<String>>,
}

impl QueryAnalysis {
    /// Tokenizes `text`; no tags.
    pub fn untagged(text: &str) -> Self {
        QueryAnalysis { text: text.to_string(), tokens: tokenize(text), tags: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct FamilyVocab {
    min_count: usize,
    features: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl FamilyVocab {
    fn reindex(&mut self) {
        self.index = self.features.iter().enumerate().map(|(i, f)| (f.clone(), i as u32)).collect();
    }
}

/// Frozen per-family feature vocabularies. Ids are dense from 0 in order of
/// first occurrence in the build corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpace {
    format_version: u32,
    families: FamilySet,
    vocabs: Vec<FamilyVocab>,
}

pub const FEATURE_SPACE_VERSION: u32 = 1;

impl FeatureSpace {
    pub fn families(&self) -> FamilySet {
        self.families
    }

    pub fn vocab_size(&self, family: FeatureFamily) -> usize {
        self.vocabs[family.index()].features.len()
    }

    pub fn min_count(&self, family: FeatureFamily) -> usize {
        self.vocabs[family.index()].min_count
    }

    pub fn id(&self, family: FeatureFamily, feature: &str) -> Option<u32> {
        self.vocabs[family.index()].index.get(feature).copied()
    }

    pub fn feature(&self, family: FeatureFamily, id: u32) -> Option<&str> {
        self.vocabs[family.index()].features.get(id as usize).map(String::as_str)
    }

    /// Always true: a `FeatureSpace` only exists once its builder is finished.
    pub fn is_frozen(&self) -> bool {
        true
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut space: FeatureSpace = serde_json::from_str(s)?;
        if space.format_version != FEATURE_SPACE_VERSION {
            return Err(Error::Format(format!(
                "feature space version {} (expected {FEATURE_SPACE_VERSION})",
                space.format_version
            )));
        }
        if space.vocabs.len() != FeatureFamily::ALL.len() {
            return Err(Error::Format("feature space has wrong family count".into()));
        }
        space.vocabs.iter_mut().for_each(FamilyVocab::reindex);
        Ok(space)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Maps the query's features to ids; unseen features are dropped.
    pub fn extract(&self, query: &QueryAnalysis, families: FamilySet) -> Result<FeatureVector> {
        let mut ids: [Vec<u32>; 7] = Default::default();
        for family in families.iter() {
            let vocab = &self.vocabs[family.index()];
            ids[family.index()] =
                family.features(query)?.iter().filter_map(|f| vocab.index.get(f).copied()).collect();
        }
        Ok(FeatureVector::from_family_ids(ids))
    }
}

/// Counts features over a training corpus, then freezes into a [`FeatureSpace`].
#[derive(Debug, Clone)]
pub struct FeatureSpaceBuilder {
    families: FamilySet,
    min_counts: [usize; 7],
    counts: Vec<HashMap<String, usize>>,
    first_seen: Vec<Vec<String>>,
}

impl FeatureSpaceBuilder {
    pub fn new(families: FamilySet) -> Self {
        FeatureSpaceBuilder {
            families,
            min_counts: FeatureFamily::ALL.map(FeatureFamily::default_min_count),
            counts: vec![HashMap::new(); 7],
            first_seen: vec![Vec::new(); 7],
        }
    }

    pub fn min_count(mut self, family: FeatureFamily, min_count: usize) -> Self {
        self.min_counts[family.index()] = min_count;
        self
    }

    pub fn min_count_all(mut self, min_count: usize) -> Self {
        self.min_counts = [min_count; 7];
        self
    }

    pub fn add(&mut self, query: &QueryAnalysis) -> Result<()> {
        for family in self.families.iter() {
            let i = family.index();
            for f in family.features(query)? {
                match self.counts[i].get_mut(&f) {
                    Some(c) => *c += 1,
                    None => {
                        self.first_seen[i].push(f.clone());
                        self.counts[i].insert(f, 1);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn build(self) -> FeatureSpace {
        let vocabs = (0..FeatureFamily::ALL.len())
            .map(|i| {
                let min_count = self.min_counts[i];
                let features: Vec<String> = self.first_seen[i]
                    .iter()
                    .filter(|f| self.counts[i][*f] >= min_count)
                    .cloned()
                    .collect();
                let mut vocab = FamilyVocab { min_count, features, index: HashMap::new() };
                vocab.reindex();
                vocab
            })
            .collect();
        FeatureSpace { format_version: FEATURE_SPACE_VERSION, families: self.families, vocabs }
    }
}

/// Builds a frozen feature space from training queries.
pub fn build_feature_space<'a>(
    queries: impl IntoIterator<Item = &'a QueryAnalysis>,
    families: FamilySet,
    min_count: Option<usize>,
) -> Result<FeatureSpace> {
    let mut builder = FeatureSpaceBuilder::new(families);
    if let Some(m) = min_count {
        builder = builder.min_count_all(m);
    }
    for q in queries {
        builder.add(q)?;
    }
    Ok(builder.build())
}

/// Per-family id multisets for one query, each kept sorted so the summed
/// embedding does not depend on extraction order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector {
    ids: [Vec<u32>; 7],
}

impl FeatureVector {
    pub fn from_family_ids(mut ids: [Vec<u32>; 7]) -> Self {
        ids.iter_mut().for_each(|v| v.sort_unstable());
        FeatureVector { ids }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with(mut self, family: FeatureFamily, ids: impl IntoIterator<Item = u32>) -> Self {
        let v = &mut self.ids[family.index()];
        v.extend(ids);
        v.sort_unstable();
        self
    }

    pub fn ids(&self, family: FeatureFamily) -> &[u32] {
        &self.ids[family.index()]
    }

    pub fn len(&self) -> usize {
        self.ids.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
