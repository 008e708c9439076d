//! Tokenization, term frequencies, TF-IDF and per-author keyword sets.
//!
//! Three tokenizer modes are supported:
//!
//! - `whitespace`: split on whitespace, trim surrounding punctuation, lowercase.
//! - `character-ngram`: CJK runs become overlapping character n-grams (bigrams
//!   by default); runs of other letters and digits are kept as lowercase words.
//! - `external-lexicon`: CJK runs are segmented by forward maximum matching
//!   against a word list; characters not covered by the list fall out as
//!   single-character tokens. Non-CJK runs behave as in `character-ngram`.
//!
//! Text is NFC-normalized before tokenizing. Stop-words are removed after
//! segmentation, followed by tokens shorter than `min_token_length` characters.
//!
//! IDF is `ln(N / df)` with no smoothing, so a term present in every document
//! has zero weight and never becomes a keyword.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use icu_normalizer::ComposingNormalizerBorrowed;
use icu_properties::props::Script;
use icu_properties::CodePointMapData;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid tokenizer config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub(crate) fn script_of(c: char) -> Script {
    CodePointMapData::<Script>::new().get(c)
}

fn is_cjk(c: char) -> bool {
    matches!(
        script_of(c),
        Script::Han | Script::Hiragana | Script::Katakana | Script::Bopomofo
    )
}

pub fn nfc(text: &str) -> String {
    ComposingNormalizerBorrowed::new_nfc().normalize(text).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TokenizerMode {
    #[serde(rename = "whitespace")]
    Whitespace,
    #[default]
    #[serde(rename = "character-ngram")]
    CharacterNgram,
    #[serde(rename = "external-lexicon")]
    ExternalLexicon,
}

/// Tokenizer settings as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    /// n-gram width for `character-ngram`.
    pub n: usize,
    /// Word list for `external-lexicon`, one word per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopword_path: Option<PathBuf>,
    pub min_token_length: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            mode: TokenizerMode::CharacterNgram,
            n: 2,
            lexicon_path: None,
            stopword_path: None,
            min_token_length: 1,
        }
    }
}

impl TokenizerConfig {
    /// Rebases relative paths onto `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        for p in [&mut self.lexicon_path, &mut self.stopword_path].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Segmenter {
    Whitespace,
    Ngram(usize),
    Lexicon { words: HashSet<String>, max_chars: usize },
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    segmenter: Segmenter,
    stopwords: HashSet<String>,
    min_token_length: usize,
}

/// Reads a one-entry-per-line list, skipping blanks and `#` comments.
pub fn read_word_list(path: &Path) -> Result<Vec<String>, TextError> {
    let text = fs::read_to_string(path).map_err(|source| TextError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| nfc(l).to_lowercase())
        .collect())
}

impl Tokenizer {
    pub fn from_config(config: &TokenizerConfig) -> Result<Self, TextError> {
        let segmenter = match config.mode {
            TokenizerMode::Whitespace => Segmenter::Whitespace,
            TokenizerMode::CharacterNgram => {
                if config.n == 0 {
                    return Err(TextError::Config("n must be >= 1 for character-ngram".into()));
                }
                Segmenter::Ngram(config.n)
            }
            TokenizerMode::ExternalLexicon => {
                let path = config
                    .lexicon_path
                    .as_ref()
                    .ok_or_else(|| TextError::Config("external-lexicon mode needs lexicon_path".into()))?;
                Self::lexicon(read_word_list(path)?)
            }
        };
        let stopwords = match &config.stopword_path {
            Some(path) => read_word_list(path)?.into_iter().collect(),
            None => HashSet::new(),
        };
        Ok(Self {
            segmenter,
            stopwords,
            min_token_length: config.min_token_length,
        })
    }

    /// Character bigrams, no stop-words.
    pub fn bigram() -> Self {
        Self {
            segmenter: Segmenter::Ngram(2),
            stopwords: HashSet::new(),
            min_token_length: 1,
        }
    }

    pub fn whitespace() -> Self {
        Self {
            segmenter: Segmenter::Whitespace,
            stopwords: HashSet::new(),
            min_token_length: 1,
        }
    }

    fn lexicon(words: Vec<String>) -> Segmenter {
        let max_chars = words.iter().map(|w| w.chars().count()).max().unwrap_or(1);
        Segmenter::Lexicon {
            words: words.into_iter().collect(),
            max_chars,
        }
    }

    pub fn with_lexicon<I: IntoIterator<Item = String>>(mut self, words: I) -> Self {
        let words = words.into_iter().map(|w| nfc(&w).to_lowercase()).collect();
        self.segmenter = Self::lexicon(words);
        self
    }

    pub fn with_stopwords<I: IntoIterator<Item = String>>(mut self, words: I) -> Self {
        self.stopwords = words.into_iter().map(|w| nfc(&w).to_lowercase()).collect();
        self
    }

    pub fn with_min_token_length(mut self, min: usize) -> Self {
        self.min_token_length = min;
        self
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = nfc(text);
        let mut raw = Vec::new();
        match &self.segmenter {
            Segmenter::Whitespace => {
                for word in text.split_whitespace() {
                    let word = word.trim_matches(|c: char| !c.is_alphanumeric());
                    if !word.is_empty() {
                        raw.push(word.to_lowercase());
                    }
                }
            }
            segmenter => {
                for run in runs(&text) {
                    match run {
                        Run::Word(w) => raw.push(w.to_lowercase()),
                        Run::Cjk(chars) => match segmenter {
                            Segmenter::Ngram(n) => push_ngrams(&chars, *n, &mut raw),
                            Segmenter::Lexicon { words, max_chars } => {
                                push_max_match(&chars, words, *max_chars, &mut raw)
                            }
                            Segmenter::Whitespace => unreachable!(),
                        },
                    }
                }
            }
        }
        raw.retain(|t| t.chars().count() >= self.min_token_length && !self.stopwords.contains(t));
        raw
    }
}

enum Run {
    Word(String),
    Cjk(Vec<char>),
}

fn runs(text: &str) -> Vec<Run> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut cjk = Vec::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !word.is_empty() {
                out.push(Run::Word(std::mem::take(&mut word)));
            }
            cjk.push(c);
        } else if c.is_alphanumeric() {
            if !cjk.is_empty() {
                out.push(Run::Cjk(std::mem::take(&mut cjk)));
            }
            word.push(c);
        } else {
            if !word.is_empty() {
                out.push(Run::Word(std::mem::take(&mut word)));
            }
            if !cjk.is_empty() {
                out.push(Run::Cjk(std::mem::take(&mut cjk)));
            }
        }
    }
    if !word.is_empty() {
        out.push(Run::Word(word));
    }
    if !cjk.is_empty() {
        out.push(Run::Cjk(cjk));
    }
    out
}

fn push_ngrams(chars: &[char], n: usize, out: &mut Vec<String>) {
    if chars.len() < n {
        out.push(chars.iter().collect());
        return;
    }
    for window in chars.windows(n) {
        out.push(window.iter().collect());
    }
}

fn push_max_match(chars: &[char], words: &HashSet<String>, max_chars: usize, out: &mut Vec<String>) {
    let mut i = 0;
    while i < chars.len() {
        let longest = (2..=max_chars.min(chars.len() - i))
            .rev()
            .find(|&len| words.contains(&chars[i..i + len].iter().collect::<String>()))
            .unwrap_or(1);
        out.push(chars[i..i + longest].iter().collect());
        i += longest;
    }
}

/// Per-document `count / |doc|`.
pub fn term_frequencies(docs: &[Vec<String>]) -> Vec<BTreeMap<String, f64>> {
    docs.iter()
        .map(|doc| {
            let counts = count_terms(doc);
            let len = doc.len() as f64;
            counts.into_iter().map(|(term, c)| (term, c as f64 / len)).collect()
        })
        .collect()
}

pub(crate) fn count_terms<S: AsRef<str>>(doc: &[S]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in doc {
        *counts.entry(t.as_ref().to_owned()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub term: String,
    pub raw_count: usize,
    pub tf: f64,
    pub idf: f64,
    pub tfidf: f64,
}

/// TF-IDF for every term of every document; each inner list is sorted by term.
pub fn tfidf(docs: &[Vec<String>]) -> Vec<Vec<TermStats>> {
    let n = docs.len() as f64;
    let counts: Vec<BTreeMap<String, usize>> = docs.iter().map(|d| count_terms(d)).collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &counts {
        for term in doc.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    counts
        .iter()
        .zip(docs)
        .map(|(doc_counts, doc)| {
            let len = doc.len() as f64;
            doc_counts
                .iter()
                .map(|(term, &raw_count)| {
                    let tf = raw_count as f64 / len;
                    let idf = (n / df[term.as_str()] as f64).ln();
                    TermStats {
                        term: term.clone(),
                        raw_count,
                        tf,
                        idf,
                        tfidf: tf * idf,
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Lower,
    Upper,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Lower => "lower",
            Segment::Upper => "upper",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub term: String,
    pub weight: f64,
    #[serde(default)]
    pub label_en: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub author_id: String,
    pub segment: Segment,
    pub entries: Vec<KeywordEntry>,
}

fn entry_order(a: &KeywordEntry, b: &KeywordEntry) -> Ordering {
    b.weight.total_cmp(&a.weight).then_with(|| a.term.cmp(&b.term))
}

impl KeywordSet {
    /// Builds a set from unordered entries: non-positive weights are dropped,
    /// duplicates keep their largest weight, and the result is sorted.
    pub fn new(author_id: impl Into<String>, segment: Segment, entries: Vec<KeywordEntry>) -> Self {
        let mut best: BTreeMap<String, KeywordEntry> = BTreeMap::new();
        for e in entries {
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                continue;
            }
            match best.get(&e.term) {
                Some(prev) if prev.weight >= e.weight => {}
                _ => {
                    best.insert(e.term.clone(), e);
                }
            }
        }
        let mut entries: Vec<_> = best.into_values().collect();
        entries.sort_by(entry_order);
        Self {
            author_id: author_id.into(),
            segment,
            entries,
        }
    }

    pub fn empty(author_id: impl Into<String>, segment: Segment) -> Self {
        Self::new(author_id, segment, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.term.as_str())
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.iter().any(|e| e.term == term)
    }

    pub fn is_well_formed(&self) -> bool {
        let mut seen = HashSet::new();
        self.entries.iter().all(|e| e.weight > 0.0 && seen.insert(&e.term))
            && self
                .entries
                .windows(2)
                .all(|w| entry_order(&w[0], &w[1]) != Ordering::Greater)
    }

    pub fn apply_translations(&mut self, table: &TranslationTable) {
        for e in &mut self.entries {
            e.label_en = table.get(&e.term).map(str::to_owned);
        }
    }

    /// Adds weight increments; unseen terms enter with their increment.
    pub fn with_increments(&self, increments: &BTreeMap<String, f64>, table: Option<&TranslationTable>) -> Self {
        let mut merged: BTreeMap<String, KeywordEntry> =
            self.entries.iter().map(|e| (e.term.clone(), e.clone())).collect();
        for (term, inc) in increments {
            merged
                .entry(term.clone())
                .and_modify(|e| e.weight += inc)
                .or_insert_with(|| KeywordEntry {
                    term: term.clone(),
                    weight: *inc,
                    label_en: table.and_then(|t| t.get(term)).map(str::to_owned),
                });
        }
        Self::new(self.author_id.clone(), self.segment, merged.into_values().collect())
    }

    pub fn file_name(author_id: &str, segment: Segment) -> String {
        format!("{author_id}.{segment}.json")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("keyword set serializes") + "\n"
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, TextError> {
        let path = dir.join(Self::file_name(&self.author_id, self.segment));
        fs::write(&path, self.to_json()).map_err(|source| TextError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, TextError> {
        let text = fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.to_owned(),
            source,
        })?;
        let set: KeywordSet = serde_json::from_str(&text).map_err(|e| TextError::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if !set.is_well_formed() {
            return Err(TextError::Format {
                path: path.to_owned(),
                message: "entries must be unique, positive and sorted by weight".into(),
            });
        }
        Ok(set)
    }

    /// Loads every `<author>.<segment>.json` in `dir`.
    pub fn read_dir(dir: &Path) -> Result<BTreeMap<(String, Segment), KeywordSet>, TextError> {
        let io = |source| TextError::Io {
            path: dir.to_owned(),
            source,
        };
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let set = Self::read(&path)?;
            out.insert((set.author_id.clone(), set.segment), set);
        }
        Ok(out)
    }
}

/// Top `top_k` terms per author by TF-IDF, treating each author's tokens as one document.
/// Terms with zero weight (present for every author) are never selected.
pub fn extract_keywords(
    docs_by_author: &BTreeMap<String, Vec<String>>,
    top_k: usize,
    segment: Segment,
) -> BTreeMap<String, KeywordSet> {
    let authors: Vec<&String> = docs_by_author.keys().collect();
    let docs: Vec<Vec<String>> = docs_by_author.values().cloned().collect();
    let stats = tfidf(&docs);
    authors
        .into_iter()
        .zip(stats)
        .map(|(author, terms)| {
            let entries = terms
                .into_iter()
                .map(|t| KeywordEntry {
                    term: t.term,
                    weight: t.tfidf,
                    label_en: None,
                })
                .collect();
            let mut set = KeywordSet::new(author.clone(), segment, entries);
            set.entries.truncate(top_k);
            (author.clone(), set)
        })
        .collect()
}

/// `term → English label`, loaded from a `term,label_en` CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranslationTable(BTreeMap<String, String>);

impl TranslationTable {
    pub fn load(path: &Path) -> Result<Self, TextError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| TextError::Format {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
        let headers = reader.headers().map_err(|e| TextError::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if headers.get(0) != Some("term") || headers.get(1) != Some("label_en") {
            return Err(TextError::Format {
                path: path.to_owned(),
                message: "expected header `term,label_en`".into(),
            });
        }
        let mut map = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| TextError::Format {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
            if let (Some(term), Some(label)) = (record.get(0), record.get(1)) {
                if !term.is_empty() && !label.is_empty() {
                    map.insert(nfc(term).to_lowercase(), label.to_owned());
                }
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, term: &str) -> Option<&str> {
        self.0.get(term).map(String::as_str)
    }

    pub fn insert(&mut self, term: impl Into<String>, label: impl Into<String>) {
        self.0.insert(term.into(), label.into());
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
