//! Dictionary-based content analysis per sentence: word count, affect /
//! positive / negative word percentages, and two composites.
//!
//! - tone = 50 + 50 (pos - neg) / (pos + neg), or 50 with no emotion words;
//! - authenticity = clamp(50 + 25 (z_self + z_excl - z_motion - z_neg), 0, 100),
//!   where z are category percentages standardized over the whole corpus.
//!   Outside a corpus the raw percentages stand in for z ("uncalibrated").
//!
//! Both are open approximations with the usual sign structure, not
//! reproductions of any proprietary scoring.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

pub const POSITIVE: &str = "positive_emotion";
pub const NEGATIVE: &str = "negative_emotion";
pub const AFFECT: &str = "affect";
pub const SELF_REFERENCE: &str = "self_reference";
pub const EXCLUSIVE: &str = "exclusive";
pub const MOTION: &str = "motion";

pub const REQUIRED_CATEGORIES: [&str; 6] = [POSITIVE, NEGATIVE, AFFECT, SELF_REFERENCE, EXCLUSIVE, MOTION];

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("missing required category {0:?}")]
    MissingCategory(String),
    #[error("category {category:?}: entry {entry:?} is not lowercase")]
    NotLowercase { category: String, entry: String },
    #[error("category {category:?}: invalid entry {entry:?}")]
    BadEntry { category: String, entry: String },
    #[error("affect does not contain {category} entry {entry:?}")]
    AffectNotSuperset { category: String, entry: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default)]
struct Matcher {
    words: HashSet<String>,
    stems: HashSet<String>,
}

impl Matcher {
    fn matches(&self, word: &str) -> bool {
        if self.words.contains(word) {
            return true;
        }
        word.char_indices()
            .map(|(i, c)| &word[..i + c.len_utf8()])
            .any(|prefix| self.stems.contains(prefix))
    }
}

/// A validated lexicon. Only the validating constructors exist, so holding a
/// `Lexicon` means the invariants were checked.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
    matchers: BTreeMap<String, Matcher>,
}

impl Lexicon {
    pub fn from_categories(entries: BTreeMap<String, Vec<String>>) -> Result<Self, LexiconError> {
        for name in REQUIRED_CATEGORIES {
            if !entries.contains_key(name) {
                return Err(LexiconError::MissingCategory(name.to_string()));
            }
        }
        let mut matchers = BTreeMap::new();
        for (category, list) in &entries {
            let mut m = Matcher::default();
            for entry in list {
                if entry.to_lowercase() != *entry {
                    return Err(LexiconError::NotLowercase {
                        category: category.clone(),
                        entry: entry.clone(),
                    });
                }
                match entry.strip_suffix('*') {
                    Some(stem) if !stem.is_empty() && !stem.contains('*') => {
                        m.stems.insert(stem.to_string());
                    }
                    None if !entry.is_empty() && !entry.contains(char::is_whitespace) => {
                        m.words.insert(entry.clone());
                    }
                    _ => {
                        return Err(LexiconError::BadEntry {
                            category: category.clone(),
                            entry: entry.clone(),
                        })
                    }
                }
            }
            matchers.insert(category.clone(), m);
        }
        let affect: HashSet<&String> = entries[AFFECT].iter().collect();
        for category in [POSITIVE, NEGATIVE] {
            if let Some(missing) = entries[category].iter().find(|e| !affect.contains(e)) {
                return Err(LexiconError::AffectNotSuperset {
                    category: category.to_string(),
                    entry: missing.clone(),
                });
            }
        }
        Ok(Self { entries, matchers })
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        Self::from_categories(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The open lexicon bundled with this crate.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../data/affect_lexicon.json")).expect("bundled lexicon is valid")
    }

    pub fn categories(&self) -> &BTreeMap<String, Vec<String>> {
        &self.entries
    }

    pub fn entry_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn matches(&self, category: &str, word: &str) -> bool {
        self.matchers.get(category).is_some_and(|m| m.matches(word))
    }

    /// Same lexicon with the positive and negative lists exchanged.
    pub fn with_valence_swapped(&self) -> Self {
        let mut entries = self.entries.clone();
        let pos = entries.remove(POSITIVE).unwrap_or_default();
        let neg = entries.remove(NEGATIVE).unwrap_or_default();
        entries.insert(POSITIVE.into(), neg);
        entries.insert(NEGATIVE.into(), pos);
        Self::from_categories(entries).expect("swapping valence keeps the lexicon valid")
    }
}

/// Splits after runs of `.`, `!` or `?` that are followed by whitespace or the
/// end of the text. An ellipsis only ends a sentence at the end of the text,
/// so a hesitation like "I... I never expected this." stays whole.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?' | '…') {
            while let Some(&next) = chars.peek() {
                if matches!(next, '.' | '!' | '?' | '…') {
                    current.push(next);
                    chars.next();
                } else {
                    break;
                }
            }
            let at_boundary = chars.peek().is_none_or(|n| n.is_whitespace());
            let is_ellipsis = current.ends_with("...") || current.ends_with('…');
            if at_boundary && !is_ellipsis {
                push_trimmed(&mut sentences, &mut current);
            }
        }
    }
    push_trimmed(&mut sentences, &mut current);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, buf: &mut String) {
    let s = buf.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    buf.clear();
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercase words: maximal runs of letters with internal apostrophes.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut words = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphabetic() {
            current.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
        {
            current.push('\'');
        } else if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceMetrics {
    pub word_count: usize,
    pub pct_affect: f64,
    pub pct_pos: f64,
    pub pct_neg: f64,
    pub pct_self: f64,
    pub pct_excl: f64,
    pub pct_motion: f64,
    pub tone: f64,
    pub authenticity: f64,
}

pub fn tone(pct_pos: f64, pct_neg: f64) -> f64 {
    let total = pct_pos + pct_neg;
    if total == 0.0 {
        50.0
    } else {
        50.0 + 50.0 * (pct_pos - pct_neg) / total
    }
}

fn authenticity_from(z_self: f64, z_excl: f64, z_motion: f64, z_neg: f64) -> f64 {
    (50.0 + 25.0 * (z_self + z_excl - z_motion - z_neg)).clamp(0.0, 100.0)
}

pub fn analyze_sentence(sentence: &str, lexicon: &Lexicon) -> SentenceMetrics {
    let words = tokenize(sentence);
    let n = words.len();
    let pct = |category: &str| {
        if n == 0 {
            0.0
        } else {
            let hits = words.iter().filter(|w| lexicon.matches(category, w)).count();
            100.0 * hits as f64 / n as f64
        }
    };
    let pct_pos = pct(POSITIVE);
    let pct_neg = pct(NEGATIVE);
    let pct_self = pct(SELF_REFERENCE);
    let pct_excl = pct(EXCLUSIVE);
    let pct_motion = pct(MOTION);
    SentenceMetrics {
        word_count: n,
        pct_affect: pct(AFFECT),
        pct_pos,
        pct_neg,
        pct_self,
        pct_excl,
        pct_motion,
        tone: tone(pct_pos, pct_neg),
        authenticity: if n == 0 {
            0.0
        } else {
            authenticity_from(pct_self, pct_excl, pct_motion, pct_neg)
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    WordCount,
    Authenticity,
    Tone,
    PctAffect,
    PctPos,
    PctNeg,
}

impl Variable {
    pub const ALL: [Variable; 6] = [
        Variable::WordCount,
        Variable::Authenticity,
        Variable::Tone,
        Variable::PctAffect,
        Variable::PctPos,
        Variable::PctNeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::WordCount => "word_count",
            Variable::Authenticity => "authenticity",
            Variable::Tone => "tone",
            Variable::PctAffect => "pct_affect",
            Variable::PctPos => "pct_pos",
            Variable::PctNeg => "pct_neg",
        }
    }

    pub fn of(self, m: &SentenceMetrics) -> f64 {
        match self {
            Variable::WordCount => m.word_count as f64,
            Variable::Authenticity => m.authenticity,
            Variable::Tone => m.tone,
            Variable::PctAffect => m.pct_affect,
            Variable::PctPos => m.pct_pos,
            Variable::PctNeg => m.pct_neg,
        }
    }
}

/// One analysed sentence and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub group: String,
    pub unit: String,
    pub index: usize,
    pub text: String,
    pub metrics: SentenceMetrics,
}

impl SentenceRecord {
    pub fn new(group: impl Into<String>, unit: impl Into<String>, index: usize, text: &str, lexicon: &Lexicon) -> Self {
        Self {
            group: group.into(),
            unit: unit.into(),
            index,
            text: text.to_string(),
            metrics: analyze_sentence(text, lexicon),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub variable: Variable,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub variables: Vec<VariableSummary>,
}

impl GroupSummary {
    pub fn get(&self, variable: Variable) -> &VariableSummary {
        self.variables.iter().find(|v| v.variable == variable).expect("all variables summarized")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    /// Sentences with authenticity recomputed from corpus z-scores.
    pub sentences: Vec<SentenceRecord>,
    /// Groups in order of first appearance.
    pub groups: Vec<GroupSummary>,
}

fn z_scores(values: &[f64]) -> Vec<f64> {
    let d = stats::descriptives(values).expect("non-empty corpus");
    values
        .iter()
        .map(|v| if d.sd == 0.0 { 0.0 } else { (v - d.mean) / d.sd })
        .collect()
}

fn group_order(sentences: &[SentenceRecord]) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    for s in sentences {
        if !order.contains(&s.group) {
            order.push(s.group.clone());
        }
    }
    order
}

/// Corpus pass: standardizes the authenticity inputs over all sentences,
/// then summarizes every variable per group (mean, sample sd; sd 0 for n = 1).
pub fn aggregate(mut sentences: Vec<SentenceRecord>) -> Result<CorpusReport, LexiconError> {
    if sentences.is_empty() {
        return Err(LexiconError::EmptyCorpus);
    }
    let column = |f: fn(&SentenceMetrics) -> f64, s: &[SentenceRecord]| -> Vec<f64> {
        s.iter().map(|r| f(&r.metrics)).collect()
    };
    let z_self = z_scores(&column(|m| m.pct_self, &sentences));
    let z_excl = z_scores(&column(|m| m.pct_excl, &sentences));
    let z_motion = z_scores(&column(|m| m.pct_motion, &sentences));
    let z_neg = z_scores(&column(|m| m.pct_neg, &sentences));
    for (i, s) in sentences.iter_mut().enumerate() {
        s.metrics.authenticity = if s.metrics.word_count == 0 {
            0.0
        } else {
            authenticity_from(z_self[i], z_excl[i], z_motion[i], z_neg[i])
        };
    }

    let groups = group_order(&sentences)
        .into_iter()
        .map(|group| {
            let members: Vec<&SentenceMetrics> =
                sentences.iter().filter(|s| s.group == group).map(|s| &s.metrics).collect();
            let variables = Variable::ALL
                .iter()
                .map(|&variable| {
                    let values: Vec<f64> = members.iter().map(|m| variable.of(m)).collect();
                    let d = stats::descriptives(&values).expect("group has members");
                    VariableSummary {
                        variable,
                        n: d.n,
                        mean: d.mean,
                        sd: d.sd,
                    }
                })
                .collect();
            GroupSummary { group, variables }
        })
        .collect();
    Ok(CorpusReport { sentences, groups })
}

impl CorpusReport {
    pub fn group_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.group.clone()).collect()
    }

    /// Per-sentence values of one variable, grouped like [`CorpusReport::groups`].
    pub fn sentence_values(&self, variable: Variable) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| {
                self.sentences
                    .iter()
                    .filter(|s| s.group == g.group)
                    .map(|s| variable.of(&s.metrics))
                    .collect()
            })
            .collect()
    }

    /// Per-unit means of one variable (e.g. one value per participant),
    /// grouped like [`CorpusReport::groups`].
    pub fn unit_means(&self, variable: Variable) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| {
                let mut units: Vec<&str> = Vec::new();
                for s in self.sentences.iter().filter(|s| s.group == g.group) {
                    if !units.contains(&s.unit.as_str()) {
                        units.push(&s.unit);
                    }
                }
                units
                    .iter()
                    .map(|u| {
                        let vals: Vec<f64> = self
                            .sentences
                            .iter()
                            .filter(|s| s.group == g.group && s.unit == *u)
                            .map(|s| variable.of(&s.metrics))
                            .collect();
                        vals.iter().sum::<f64>() / vals.len() as f64
                    })
                    .collect()
            })
            .collect()
    }
}
