//! Visitor tributes: moderation, similarity matching and the append-only log.
//!
//! Only approved tributes are written to the log. The derived per-author
//! keyword increments are a fold over the log, so reopening a store (or
//! replaying the file from scratch) reproduces them exactly. Each log entry
//! records the terms it contributed, which keeps replay independent of
//! later tokenizer changes.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use icu_properties::props::Script;
use icu_properties::{PropertyNamesLong, PropertyParser};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::timestamp;
use crate::pattern::{PatternError, PatternSet};
use crate::textfeat::{count_terms, script_of, KeywordSet, Tokenizer};

#[derive(Debug, Error)]
pub enum TributeError {
    #[error("invalid moderation rules: {0}")]
    Rules(String),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("tribute {id} cannot move from {from} to {to}")]
    InvalidTransition {
        id: String,
        from: TributeStatus,
        to: TributeStatus,
    },
    #[error("only approved tributes can be appended (tribute {0} is not approved)")]
    NotApproved(String),
    #[error("unknown author {0}")]
    UnknownAuthor(String),
    /// The log is unchanged; the submission may be retried.
    #[error("tribute log write failed: {0}")]
    Storage(#[source] io::Error),
    #[error("tribute log {path} line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("snapshot does not match the log: {0}")]
    SnapshotMismatch(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl TributeError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, TributeError::Storage(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    #[default]
    Zh,
    En,
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lang::Zh => "zh",
            Lang::En => "en",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TributeStatus {
    Pending,
    Approved,
    Rejected,
}

impl fmt::Display for TributeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TributeStatus::Pending => "pending",
            TributeStatus::Approved => "approved",
            TributeStatus::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tribute {
    pub id: String,
    pub author_id: String,
    pub text: String,
    pub lang: Lang,
    #[serde(with = "timestamp")]
    pub submitted_at: DateTime<Utc>,
    pub status: TributeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<String>,
    /// Terms this tribute adds to the author's keyword weights.
    #[serde(default)]
    pub terms: Vec<String>,
}

impl Tribute {
    pub fn new(
        id: impl Into<String>,
        author_id: impl Into<String>,
        text: impl Into<String>,
        lang: Lang,
        submitted_at: DateTime<Utc>,
    ) -> Self {
        Self {
            id: id.into(),
            author_id: author_id.into(),
            text: text.into(),
            lang,
            submitted_at,
            status: TributeStatus::Pending,
            rejection_reason: None,
            terms: Vec::new(),
        }
    }

    fn transition(&self, to: TributeStatus) -> Result<(), TributeError> {
        if self.status == TributeStatus::Pending {
            Ok(())
        } else {
            Err(TributeError::InvalidTransition {
                id: self.id.clone(),
                from: self.status,
                to,
            })
        }
    }

    pub fn approve(mut self, terms: Vec<String>) -> Result<Self, TributeError> {
        self.transition(TributeStatus::Approved)?;
        self.status = TributeStatus::Approved;
        self.terms = terms;
        Ok(self)
    }

    pub fn reject(mut self, reason: impl Into<String>) -> Result<Self, TributeError> {
        self.transition(TributeStatus::Rejected)?;
        self.status = TributeStatus::Rejected;
        self.rejection_reason = Some(reason.into());
        Ok(self)
    }
}

/// Moderation configuration as loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModerationRules {
    /// Same grammar as corpus filter patterns: literal substrings, `*`, `^`, `$`.
    pub blocklist_patterns: Vec<String>,
    /// Maximum length in characters.
    pub max_length: usize,
    /// Unicode script names (long or short form, e.g. `Han`, `Latin`, `Zyyy`).
    pub allowed_scripts: Vec<String>,
    /// Submissions per client per minute; 0 disables the limit.
    pub rate_limit: u32,
}

impl Default for ModerationRules {
    fn default() -> Self {
        Self {
            blocklist_patterns: [
                "http://",
                "https://",
                "www.",
                "加微信",
                "加v",
                "vx:",
                "代购",
                "免费领取",
                "优惠券",
                "刷单",
                "兼职日结",
                "彩票",
                "博彩",
                "网赚",
                "fuck",
                "shit",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            max_length: 140,
            allowed_scripts: ["Han", "Latin", "Common", "Inherited"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            rate_limit: 10,
        }
    }
}

impl ModerationRules {
    pub fn from_toml(text: &str) -> Result<Self, TributeError> {
        toml::from_str(text).map_err(|e| TributeError::Rules(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TributeError> {
        let text = fs::read_to_string(path).map_err(|source| TributeError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn compile(&self) -> Result<RuleModerator, TributeError> {
        if self.max_length < 1 {
            return Err(TributeError::Rules("max_length must be >= 1".into()));
        }
        let parser = PropertyParser::<Script>::new();
        let allowed_scripts = self
            .allowed_scripts
            .iter()
            .map(|name| {
                parser
                    .get_loose(name)
                    .ok_or_else(|| TributeError::Rules(format!("unknown script {name:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RuleModerator {
            blocklist: PatternSet::parse(&self.blocklist_patterns)?,
            max_length: self.max_length,
            allowed_scripts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModerationRule {
    Empty,
    Length,
    Script,
    Blocklist,
    /// Verdict from an external classifier.
    External,
}

impl ModerationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ModerationRule::Empty => "empty",
            ModerationRule::Length => "length",
            ModerationRule::Script => "script",
            ModerationRule::Blocklist => "blocklist",
            ModerationRule::External => "external",
        }
    }
}

impl fmt::Display for ModerationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Approved,
    Rejected { rule: ModerationRule, detail: String },
}

impl Verdict {
    pub fn is_approved(&self) -> bool {
        matches!(self, Verdict::Approved)
    }
}

/// Anything that can approve or reject a tribute text.
pub trait ModerationGate: Send + Sync {
    fn verdict(&self, text: &str, lang: Lang) -> Verdict;
}

/// The built-in gate. Rules run in order: empty, length, script, blocklist.
#[derive(Debug, Clone)]
pub struct RuleModerator {
    blocklist: PatternSet,
    max_length: usize,
    allowed_scripts: Vec<Script>,
}

impl ModerationGate for RuleModerator {
    fn verdict(&self, text: &str, _lang: Lang) -> Verdict {
        let reject = |rule, detail: String| Verdict::Rejected { rule, detail };
        if text.trim().is_empty() {
            return reject(ModerationRule::Empty, "text is empty".into());
        }
        let len = text.chars().count();
        if len > self.max_length {
            return reject(
                ModerationRule::Length,
                format!("{len} characters exceeds the limit of {}", self.max_length),
            );
        }
        if let Some(c) = text.chars().find(|&c| !self.allowed_scripts.contains(&script_of(c))) {
            let name = PropertyNamesLong::<Script>::new()
                .get(script_of(c))
                .unwrap_or("Unknown");
            return reject(ModerationRule::Script, format!("character {c:?} is in script {name}"));
        }
        if let Some(p) = self.blocklist.first_match(text) {
            return reject(ModerationRule::Blocklist, format!("matches {:?}", p.as_str()));
        }
        Verdict::Approved
    }
}

/// Runs `gate` on `text`.
pub fn moderate(text: &str, lang: Lang, gate: &dyn ModerationGate) -> Verdict {
    gate.verdict(text, lang)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Keyword,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatch {
    pub kind: CandidateKind,
    /// The keyword term, or the post id.
    pub reference: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
struct Candidate {
    kind: CandidateKind,
    reference: String,
    text: String,
    counts: BTreeMap<String, usize>,
    norm: f64,
}

fn norm(counts: &BTreeMap<String, usize>) -> f64 {
    counts.values().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
}

/// Cosine-similarity matcher over each author's keywords and curated posts.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    tokenizer: Arc<Tokenizer>,
    authors: BTreeMap<String, Vec<Candidate>>,
}

impl SimilarityIndex {
    pub fn new(tokenizer: Arc<Tokenizer>) -> Self {
        Self {
            tokenizer,
            authors: BTreeMap::new(),
        }
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn push(&mut self, author_id: &str, kind: CandidateKind, reference: String, text: String, tokens: Vec<String>) {
        let counts = count_terms(&tokens);
        let norm = norm(&counts);
        if norm == 0.0 {
            return;
        }
        self.authors.entry(author_id.to_owned()).or_default().push(Candidate {
            kind,
            reference,
            text,
            counts,
            norm,
        });
    }

    pub fn add_keywords(&mut self, set: &KeywordSet) {
        let existing = self.authors.entry(set.author_id.clone()).or_default();
        let seen: std::collections::HashSet<String> = existing
            .iter()
            .filter(|c| c.kind == CandidateKind::Keyword)
            .map(|c| c.reference.clone())
            .collect();
        for e in set.entries.iter().filter(|e| !seen.contains(&e.term)) {
            let mut tokens = self.tokenizer.tokenize(&e.term);
            if tokens.is_empty() {
                tokens.push(e.term.clone());
            }
            self.push(
                &set.author_id,
                CandidateKind::Keyword,
                e.term.clone(),
                e.term.clone(),
                tokens,
            );
        }
    }

    pub fn add_post(&mut self, author_id: &str, post_id: &str, text: &str) {
        let tokens = self.tokenizer.tokenize(text);
        self.push(
            author_id,
            CandidateKind::Post,
            post_id.to_owned(),
            text.to_owned(),
            tokens,
        );
    }

    pub fn has_author(&self, author_id: &str) -> bool {
        self.authors.contains_key(author_id)
    }

    /// Top `top_k` candidates by cosine similarity of term-count vectors.
    /// Ties order keywords before posts, then by reference.
    pub fn match_similar(
        &self,
        text: &str,
        author_id: &str,
        top_k: usize,
    ) -> Result<Vec<SimilarityMatch>, TributeError> {
        let candidates = self
            .authors
            .get(author_id)
            .ok_or_else(|| TributeError::UnknownAuthor(author_id.to_owned()))?;
        let query = count_terms(&self.tokenizer.tokenize(text));
        let qnorm = norm(&query);
        if qnorm == 0.0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<SimilarityMatch> = candidates
            .iter()
            .map(|c| {
                let dot: usize = query.iter().filter_map(|(t, &q)| c.counts.get(t).map(|&n| n * q)).sum();
                SimilarityMatch {
                    kind: c.kind,
                    reference: c.reference.clone(),
                    text: c.text.clone(),
                    score: (dot as f64 / (qnorm * c.norm)).clamp(0.0, 1.0),
                }
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.kind.cmp(&b.kind))
                .then_with(|| a.reference.cmp(&b.reference))
        });
        scored.truncate(top_k);
        Ok(scored)
    }
}

/// Per-author term increments derived from approved tributes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedState {
    pub approved: usize,
    pub increments: BTreeMap<String, BTreeMap<String, f64>>,
}

impl DerivedState {
    /// Folds one log entry in. Non-approved entries are ignored.
    pub fn apply(&mut self, tribute: &Tribute, unit_increment: f64) {
        if tribute.status != TributeStatus::Approved {
            return;
        }
        self.approved += 1;
        let author = self.increments.entry(tribute.author_id.clone()).or_default();
        for term in &tribute.terms {
            *author.entry(term.clone()).or_insert(0.0) += unit_increment;
        }
    }

    pub fn replay<'a, I: IntoIterator<Item = &'a Tribute>>(entries: I, unit_increment: f64) -> Self {
        let mut state = Self::default();
        for t in entries {
            state.apply(t, unit_increment);
        }
        state
    }

    pub fn author(&self, author_id: &str) -> Option<&BTreeMap<String, f64>> {
        self.increments.get(author_id)
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        crate::canonical::to_vec(self)
    }
}

/// Where log lines go. Implementations must leave the log unchanged on error.
pub trait LogSink: Send {
    fn append_line(&mut self, line: &[u8]) -> io::Result<()>;
}

/// Append-only file with fsync before acknowledging.
pub struct FileLog {
    file: File,
    len: u64,
}

impl FileLog {
    fn open(path: &Path) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let len = file.seek(SeekFrom::End(0))?;
        Ok(Self { file, len })
    }
}

impl LogSink for FileLog {
    fn append_line(&mut self, line: &[u8]) -> io::Result<()> {
        let result = self
            .file
            .write_all(line)
            .and_then(|_| self.file.write_all(b"\n"))
            .and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += line.len() as u64 + 1;
                Ok(())
            }
            Err(e) => {
                // Roll back a partial write so the log never holds an unacknowledged entry.
                let _ = self.file.set_len(self.len);
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub log_entries: usize,
    pub unit_increment: f64,
    pub state: DerivedState,
}

pub const DEFAULT_UNIT_INCREMENT: f64 = 1.0;

/// Single-writer tribute log plus its derived keyword increments.
pub struct TributeStore {
    sink: Box<dyn LogSink>,
    entries: Vec<Tribute>,
    state: DerivedState,
    unit_increment: f64,
}

impl fmt::Debug for TributeStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TributeStore")
            .field("entries", &self.entries.len())
            .field("state", &self.state)
            .field("unit_increment", &self.unit_increment)
            .finish()
    }
}

/// Reads a log file. A final line without a newline is an interrupted,
/// unacknowledged write and is truncated away.
pub fn read_log(path: &Path) -> Result<Vec<Tribute>, TributeError> {
    let io_err = |source| TributeError::Io {
        path: path.to_owned(),
        source,
    };
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes).map_err(io_err)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(e)),
    }
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if complete < bytes.len() {
        tracing::warn!(path = %path.display(), "dropping incomplete final log line");
        OpenOptions::new()
            .write(true)
            .open(path)
            .and_then(|f| f.set_len(complete as u64))
            .map_err(io_err)?;
    }
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(&bytes[..complete]).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Tribute = serde_json::from_str(&line).map_err(|e| TributeError::CorruptLog {
            path: path.to_owned(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(t);
    }
    Ok(entries)
}

impl TributeStore {
    /// Opens (or creates) a log file and replays it.
    pub fn open(path: &Path, unit_increment: f64) -> Result<Self, TributeError> {
        let entries = read_log(path)?;
        let sink = FileLog::open(path).map_err(|source| TributeError::Io {
            path: path.to_owned(),
            source,
        })?;
        let state = DerivedState::replay(&entries, unit_increment);
        Ok(Self {
            sink: Box::new(sink),
            entries,
            state,
            unit_increment,
        })
    }

    /// Opens a log, starting from a snapshot and folding in only the entries after it.
    pub fn open_with_snapshot(path: &Path, snapshot: &Snapshot) -> Result<Self, TributeError> {
        let entries = read_log(path)?;
        if snapshot.log_entries > entries.len() {
            return Err(TributeError::SnapshotMismatch(format!(
                "snapshot covers {} entries but the log has {}",
                snapshot.log_entries,
                entries.len()
            )));
        }
        let mut state = snapshot.state.clone();
        for t in &entries[snapshot.log_entries..] {
            state.apply(t, snapshot.unit_increment);
        }
        let sink = FileLog::open(path).map_err(|source| TributeError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(Self {
            sink: Box::new(sink),
            entries,
            state,
            unit_increment: snapshot.unit_increment,
        })
    }

    /// A store over any sink, starting empty.
    pub fn with_sink(sink: Box<dyn LogSink>, unit_increment: f64) -> Self {
        Self {
            sink,
            entries: Vec::new(),
            state: DerivedState::default(),
            unit_increment,
        }
    }

    pub fn next_id(&self) -> String {
        format!("t{:06}", self.entries.len() + 1)
    }

    /// Persists an approved tribute, then folds it into the derived state.
    pub fn append(&mut self, tribute: Tribute) -> Result<(), TributeError> {
        if tribute.status != TributeStatus::Approved {
            return Err(TributeError::NotApproved(tribute.id));
        }
        let line = serde_json::to_vec(&tribute).expect("tribute serializes");
        self.sink.append_line(&line).map_err(TributeError::Storage)?;
        self.state.apply(&tribute, self.unit_increment);
        self.entries.push(tribute);
        Ok(())
    }

    pub fn entries(&self) -> &[Tribute] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn state(&self) -> &DerivedState {
        &self.state
    }

    /// One author's increments from the entries after the first `offset`.
    pub fn increments_since(&self, offset: usize, author_id: &str) -> BTreeMap<String, f64> {
        if offset == 0 {
            return self.state.author(author_id).cloned().unwrap_or_default();
        }
        let tail = self
            .entries
            .get(offset..)
            .unwrap_or(&[])
            .iter()
            .filter(|t| t.author_id == author_id);
        DerivedState::replay(tail, self.unit_increment)
            .increments
            .remove(author_id)
            .unwrap_or_default()
    }

    pub fn unit_increment(&self) -> f64 {
        self.unit_increment
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            log_entries: self.entries.len(),
            unit_increment: self.unit_increment,
            state: self.state.clone(),
        }
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<(), TributeError> {
        let tmp = path.with_extension("tmp");
        let bytes = crate::canonical::to_vec(&self.snapshot());
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|source| TributeError::Io {
                path: path.to_owned(),
                source,
            })
    }

    pub fn read_snapshot(path: &Path) -> Result<Snapshot, TributeError> {
        let bytes = fs::read(path).map_err(|source| TributeError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| TributeError::SnapshotMismatch(e.to_string()))
    }
}

/// Sliding one-minute window per client.
#[derive(Debug)]
pub struct RateLimiter {
    limit: u32,
    window: Duration,
    hits: HashMap<String, VecDeque<Instant>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimited {
    pub retry_after: Duration,
}

impl RateLimiter {
    pub fn new(limit_per_minute: u32) -> Self {
        Self::with_window(limit_per_minute, Duration::from_secs(60))
    }

    pub fn with_window(limit: u32, window: Duration) -> Self {
        Self {
            limit,
            window,
            hits: HashMap::new(),
        }
    }

    /// Records a submission at `now`, or refuses it if the client is over the limit.
    pub fn check(&mut self, client: &str, now: Instant) -> Result<(), RateLimited> {
        if self.limit == 0 {
            return Ok(());
        }
        if self.hits.len() > 10_000 {
            let window = self.window;
            self.hits
                .retain(|_, q| q.back().is_some_and(|&t| now.duration_since(t) < window));
        }
        let queue = self.hits.entry(client.to_owned()).or_default();
        while queue.front().is_some_and(|&t| now.duration_since(t) >= self.window) {
            queue.pop_front();
        }
        if queue.len() >= self.limit as usize {
            let oldest = *queue.front().expect("non-empty when at limit");
            return Err(RateLimited {
                retry_after: self.window.saturating_sub(now.duration_since(oldest)),
            });
        }
        queue.push_back(now);
        Ok(())
    }
}
