//! Curated post index: retained posts linked to the keywords they contain.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::timestamp;
use crate::salience::ScoredPost;
use crate::textfeat::{KeywordSet, Tokenizer};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedPost {
    pub post_id: String,
    pub author_id: String,
    pub text: String,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permalink: Option<String>,
    /// Keywords of the author's upper segment that occur in the tokenized text.
    pub keywords: Vec<String>,
    /// likes + reposts
    pub curation_score: u64,
    pub salience: f64,
}

/// Builds the index for one author, sorted by curation score (then post id).
pub fn curate(retained: &[ScoredPost], keywords: &KeywordSet, tokenizer: &Tokenizer) -> Vec<CuratedPost> {
    let mut out: Vec<CuratedPost> = retained
        .iter()
        .map(|s| {
            let tokens: BTreeSet<String> = tokenizer.tokenize(&s.post.text).into_iter().collect();
            CuratedPost {
                post_id: s.post.id.clone(),
                author_id: keywords.author_id.clone(),
                text: s.post.text.clone(),
                created_at: s.post.created_at,
                permalink: s.post.permalink.clone(),
                keywords: keywords
                    .terms()
                    .filter(|t| tokens.contains(*t))
                    .map(str::to_owned)
                    .collect(),
                curation_score: s.post.likes.saturating_add(s.post.reposts),
                salience: s.salience,
            }
        })
        .collect();
    sort_curated(&mut out);
    out
}

pub fn sort_curated(posts: &mut [CuratedPost]) {
    posts.sort_by(|a, b| {
        b.curation_score
            .cmp(&a.curation_score)
            .then_with(|| a.post_id.cmp(&b.post_id))
    });
}

pub fn write_curated(path: &Path, posts: &[CuratedPost]) -> Result<(), CurationError> {
    let io_err = |source| CurationError::Io {
        path: path.to_owned(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for p in posts {
        let line = crate::canonical::to_string(p);
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_curated(path: &Path) -> Result<Vec<CuratedPost>, CurationError> {
    let io_err = |source| CurationError::Io {
        path: path.to_owned(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CurationError::Format {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use crate::textfeat::{KeywordEntry, Segment};
    use chrono::TimeZone;

    fn scored(id: &str, text: &str, likes: u64, reposts: u64) -> ScoredPost {
        ScoredPost {
            post: Post {
                id: id.into(),
                author_tag: "jin_yong".into(),
                text: text.into(),
                created_at: Utc.with_ymd_and_hms(2018, 10, 31, 8, 0, 0).unwrap(),
                reposts,
                comments: 0,
                likes,
                is_original: true,
                permalink: Some(format!("https://example.invalid/{id}")),
            },
            delta_t_days: 0.0,
            engagement: 0.0,
            salience: 0.0,
        }
    }

    fn keywords() -> KeywordSet {
        KeywordSet::new(
            "jin_yong",
            Segment::Upper,
            ["江湖", "武侠"]
                .iter()
                .map(|t| KeywordEntry {
                    term: t.to_string(),
                    weight: 1.0,
                    label_en: None,
                })
                .collect(),
        )
    }

    #[test]
    fn links_and_sorts() {
        let posts = [
            scored("a", "再见江湖", 10, 1),
            scored("b", "武侠江湖一梦", 50, 5),
            scored("c", "天上人间", 100, 0),
        ];
        let out = curate(&posts, &keywords(), &Tokenizer::bigram());
        let ids: Vec<_> = out.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["c", "b", "a"]);
        assert_eq!(out[1].keywords, ["武侠", "江湖"]);
        assert!(out[0].keywords.is_empty());
        assert_eq!(out[1].curation_score, 55);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curated.jsonl");
        let out = curate(&[scored("a", "再见江湖", 1, 1)], &keywords(), &Tokenizer::bigram());
        write_curated(&path, &out).unwrap();
        assert_eq!(read_curated(&path).unwrap(), out);
    }
}
