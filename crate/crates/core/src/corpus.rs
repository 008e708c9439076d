//! Post and author ingestion, plus the rule-based filtering pass.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::{PatternError, PatternSet};

/// One commemorative post from a hashtag campaign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Post {
    pub id: String,
    pub author_tag: String,
    pub text: String,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
    pub reposts: u64,
    pub comments: u64,
    pub likes: u64,
    pub is_original: bool,
    /// Link back to the post on its source platform, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permalink: Option<String>,
}

/// RFC 3339 timestamps truncated to whole seconds.
pub mod timestamp {
    use chrono::{DateTime, SecondsFormat, Timelike, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        let parsed = DateTime::parse_from_rfc3339(&raw)
            .map_err(|e| serde::de::Error::custom(format!("invalid timestamp {raw:?}: {e}")))?;
        Ok(parsed.with_timezone(&Utc).with_nanosecond(0).unwrap())
    }
}

/// Campaign-level metrics for one author. Volumes are in ten-thousands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorRecord {
    pub author_id: String,
    pub display_name: String,
    pub death_date: NaiveDate,
    pub publication_count: u32,
    pub reading_volume: f64,
    pub discussion_volume: f64,
    pub interaction_volume: f64,
    pub originality_volume: f64,
}

pub const AUTHOR_COLUMNS: [&str; 8] = [
    "author_id",
    "display_name",
    "death_date",
    "publication_count",
    "reading_volume",
    "discussion_volume",
    "interaction_volume",
    "originality_volume",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostFormat {
    Jsonl,
    Csv,
}

impl PostFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    Schema(String),
    DuplicateId(String),
    FutureTimestamp(DateTime<Utc>),
}

/// A rejected record, located by its 1-based line in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordIssue {
    pub line: usize,
    pub kind: IssueKind,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::Schema(msg) => write!(f, "line {}: schema violation: {msg}", self.line),
            IssueKind::DuplicateId(id) => write!(f, "line {}: duplicate id {id:?}", self.line),
            IssueKind::FutureTimestamp(t) => {
                write!(f, "line {}: created_at {t} is in the future", self.line)
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {} invalid record(s); first: {}", issues.len(), issues[0])]
    Records { path: PathBuf, issues: Vec<RecordIssue> },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path} line {line}: column {column:?}: {message}")]
    BadField {
        path: PathBuf,
        line: usize,
        column: String,
        message: String,
    },
    #[error("cannot determine post format for {0}")]
    UnknownFormat(PathBuf),
    #[error("invalid filter rules: {0}")]
    Rules(String),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

impl CorpusError {
    pub fn issues(&self) -> &[RecordIssue] {
        match self {
            CorpusError::Records { issues, .. } => issues,
            _ => &[],
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Reads and validates a post file. Every malformed record is reported; none are dropped.
pub fn ingest_posts(path: &Path, format: PostFormat) -> Result<Vec<Post>, CorpusError> {
    ingest_posts_at(path, format, Utc::now())
}

/// As [`ingest_posts`], with an explicit ingestion time for the future-timestamp check.
pub fn ingest_posts_at(path: &Path, format: PostFormat, now: DateTime<Utc>) -> Result<Vec<Post>, CorpusError> {
    let parsed = match format {
        PostFormat::Jsonl => parse_jsonl(path)?,
        PostFormat::Csv => parse_csv(path)?,
    };
    let mut seen = HashSet::new();
    let mut posts = Vec::with_capacity(parsed.len());
    let mut issues = Vec::new();
    for (line, record) in parsed {
        match record {
            Err(msg) => issues.push(RecordIssue {
                line,
                kind: IssueKind::Schema(msg),
            }),
            Ok(post) => {
                if !seen.insert(post.id.clone()) {
                    issues.push(RecordIssue {
                        line,
                        kind: IssueKind::DuplicateId(post.id),
                    });
                } else if post.created_at > now {
                    issues.push(RecordIssue {
                        line,
                        kind: IssueKind::FutureTimestamp(post.created_at),
                    });
                } else {
                    posts.push(post);
                }
            }
        }
    }
    if issues.is_empty() {
        Ok(posts)
    } else {
        Err(CorpusError::Records {
            path: path.to_owned(),
            issues,
        })
    }
}

type Parsed = Vec<(usize, Result<Post, String>)>;

fn parse_jsonl(path: &Path) -> Result<Parsed, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((idx + 1, serde_json::from_str::<Post>(&line).map_err(|e| e.to_string())));
    }
    Ok(out)
}

fn parse_csv(path: &Path) -> Result<Parsed, CorpusError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for record in reader.deserialize::<Post>() {
        match record {
            Ok(post) => {
                // The header is line 1; csv positions count from it.
                out.push((out.len() + 2, Ok(post)));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(out.len() + 2);
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(csv_err(path, e));
                }
                out.push((line, Err(e.to_string())));
            }
        }
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> CorpusError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CorpusError::Io {
            path: path.to_owned(),
            source,
        },
        other => CorpusError::Rules(format!("{}: {other:?}", path.display())),
    }
}

/// Writes posts as JSONL in the canonical field order.
pub fn write_posts_jsonl(path: &Path, posts: &[Post]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for post in posts {
        let line = serde_json::to_string(post).expect("post serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads the authors CSV. Volumes stay in the file's unit (ten-thousands).
pub fn ingest_authors(path: &Path) -> Result<Vec<AuthorRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut index = [0usize; 8];
    for (slot, column) in index.iter_mut().zip(AUTHOR_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_owned(),
                column: column.to_owned(),
            })?;
    }

    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| -> Result<&str, CorpusError> {
            let value = record.get(index[i]).unwrap_or("");
            if value.is_empty() {
                Err(bad(path, line, AUTHOR_COLUMNS[i], "value is blank"))
            } else {
                Ok(value)
            }
        };
        let volume = |i: usize| -> Result<f64, CorpusError> {
            let raw = field(i)?;
            let v: f64 = raw
                .parse()
                .map_err(|_| bad(path, line, AUTHOR_COLUMNS[i], &format!("not a number: {raw:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad(path, line, AUTHOR_COLUMNS[i], "must be finite and >= 0"));
            }
            Ok(v)
        };
        let death_raw = field(2)?;
        let death_date = NaiveDate::parse_from_str(death_raw, "%Y-%m-%d").map_err(|_| {
            bad(
                path,
                line,
                "death_date",
                &format!("not an ISO 8601 date: {death_raw:?}"),
            )
        })?;
        let pubs_raw = field(3)?;
        let publication_count: u32 = pubs_raw.parse().ok().filter(|&n: &u32| n >= 1).ok_or_else(|| {
            bad(
                path,
                line,
                "publication_count",
                &format!("expected integer >= 1, got {pubs_raw:?}"),
            )
        })?;
        out.push(AuthorRecord {
            author_id: field(0)?.to_owned(),
            display_name: field(1)?.to_owned(),
            death_date,
            publication_count,
            reading_volume: volume(4)?,
            discussion_volume: volume(5)?,
            interaction_volume: volume(6)?,
            originality_volume: volume(7)?,
        });
    }
    Ok(out)
}

fn bad(path: &Path, line: usize, column: &str, message: &str) -> CorpusError {
    CorpusError::BadField {
        path: path.to_owned(),
        line,
        column: column.to_owned(),
        message: message.to_owned(),
    }
}

/// Filtering protocol configuration. Loaded from TOML; all keys optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterRules {
    pub blocklist_patterns: Vec<String>,
    pub min_text_length: usize,
    pub require_textual: bool,
    pub drop_duplicates: bool,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            blocklist_patterns: Vec::new(),
            min_text_length: 1,
            require_textual: true,
            drop_duplicates: true,
        }
    }
}

impl FilterRules {
    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        toml::from_str(text).map_err(|e| CorpusError::Rules(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }
}

/// The rule that excluded a post. Rules are checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    Duplicate,
    MinLength,
    NonTextual,
    Blocklist,
}

impl FilterRule {
    pub const ALL: [FilterRule; 4] = [
        FilterRule::Duplicate,
        FilterRule::MinLength,
        FilterRule::NonTextual,
        FilterRule::Blocklist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterRule::Duplicate => "duplicate",
            FilterRule::MinLength => "min_length",
            FilterRule::NonTextual => "non_textual",
            FilterRule::Blocklist => "blocklist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub post_id: String,
    pub rule: FilterRule,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<Post>,
    pub excluded: Vec<Exclusion>,
}

impl FilterOutcome {
    pub fn excluded_by(&self, rule: FilterRule) -> usize {
        self.excluded.iter().filter(|e| e.rule == rule).count()
    }
}

/// Keeps the posts that pass every rule, in input order.
pub fn apply_filter(posts: &[Post], rules: &FilterRules) -> Result<Vec<Post>, CorpusError> {
    Ok(filter_with_report(posts, rules)?.kept)
}

/// As [`apply_filter`], also attributing each exclusion to the first rule it failed.
pub fn filter_with_report(posts: &[Post], rules: &FilterRules) -> Result<FilterOutcome, CorpusError> {
    let blocklist = PatternSet::parse(&rules.blocklist_patterns)?;
    let mut seen = HashSet::new();
    let mut outcome = FilterOutcome::default();
    for post in posts {
        let verdict = if rules.drop_duplicates && !seen.insert(post.id.as_str()) {
            Some(FilterRule::Duplicate)
        } else if post.text.trim().chars().count() < rules.min_text_length {
            Some(FilterRule::MinLength)
        } else if rules.require_textual && !is_textual(&post.text) {
            Some(FilterRule::NonTextual)
        } else if blocklist.first_match(&post.text).is_some() {
            Some(FilterRule::Blocklist)
        } else {
            None
        };
        match verdict {
            Some(rule) => outcome.excluded.push(Exclusion {
                post_id: post.id.clone(),
                rule,
            }),
            None => outcome.kept.push(post.clone()),
        }
    }
    Ok(outcome)
}

/// True when the text carries at least one letter or digit outside of URLs.
pub fn is_textual(text: &str) -> bool {
    text.split_whitespace()
        .filter(|w| !(w.starts_with("http://") || w.starts_with("https://") || w.starts_with("www.")))
        .any(|w| w.chars().any(char::is_alphanumeric))
}
