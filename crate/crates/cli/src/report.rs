//! Per-author stage counts and heights.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::anyhow;
use serde::Serialize;
use stele_core::corpus::FilterRule;
use stele_core::monument::SceneDocument;

use crate::failure::{Failure, Outcome};
use crate::pipeline::{Campaign, Keywords};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportRow {
    pub author_id: String,
    pub display_name: String,
    pub ingested: usize,
    /// Rule name → posts that rule excluded.
    pub excluded: BTreeMap<&'static str, usize>,
    pub kept: usize,
    pub retained: usize,
    pub top_keywords: Vec<String>,
    pub height_lower: Option<f64>,
    pub height_upper: Option<f64>,
}

impl ReportRow {
    pub fn excluded_total(&self) -> usize {
        self.excluded.values().sum()
    }

    /// ingested = kept + excluded, and retention only ever shrinks the kept set.
    pub fn reconciles(&self) -> bool {
        self.ingested == self.kept + self.excluded_total() && self.retained <= self.kept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub data_version: Option<u64>,
    pub built_at: Option<String>,
    pub rows: Vec<ReportRow>,
    pub total: ReportRow,
}

pub const TOP_KEYWORDS: usize = 5;

impl Report {
    /// Rows follow the scene's layout order when a scene is given, else the campaign order.
    pub fn new(campaigns: &[Campaign], keywords: Option<&Keywords>, scene: Option<&SceneDocument>) -> Outcome<Self> {
        let mut rows: Vec<ReportRow> = campaigns
            .iter()
            .map(|c| {
                let id = &c.author.author_id;
                let monument = scene.and_then(|s| s.monument(id));
                ReportRow {
                    author_id: id.clone(),
                    display_name: c.author.display_name.clone(),
                    ingested: c.ingested,
                    excluded: FilterRule::ALL
                        .iter()
                        .map(|&r| (r.name(), c.filter.excluded_by(r)))
                        .collect(),
                    kept: c.filter.kept.len(),
                    retained: c.retained.len(),
                    top_keywords: keywords
                        .and_then(|k| k.upper.get(id))
                        .map(|set| set.terms().take(TOP_KEYWORDS).map(str::to_owned).collect())
                        .unwrap_or_default(),
                    height_lower: monument.map(|m| m.spec.height_lower),
                    height_upper: monument.map(|m| m.spec.height_upper),
                }
            })
            .collect();
        if let Some(scene) = scene {
            let order: BTreeMap<&str, usize> = scene
                .layout
                .iter()
                .map(|slot| (slot.author_id.as_str(), slot.order))
                .collect();
            rows.sort_by_key(|r| order.get(r.author_id.as_str()).copied().unwrap_or(usize::MAX));
        }
        let mut total = ReportRow {
            author_id: "total".into(),
            display_name: String::new(),
            excluded: FilterRule::ALL.iter().map(|r| (r.name(), 0)).collect(),
            ..Default::default()
        };
        for r in &rows {
            if !r.reconciles() {
                return Err(Failure::data(anyhow!(
                    "stage counts for {} do not reconcile",
                    r.author_id
                )));
            }
            total.ingested += r.ingested;
            total.kept += r.kept;
            total.retained += r.retained;
            for (rule, n) in &r.excluded {
                *total.excluded.entry(rule).or_insert(0) += n;
            }
        }
        Ok(Self {
            data_version: scene.map(|s| s.data_version),
            built_at: scene.map(|s| s.built_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
            rows,
            total,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if let (Some(v), Some(at)) = (self.data_version, &self.built_at) {
            let _ = writeln!(out, "data_version {v}, built_at {at}");
        }
        let _ = writeln!(
            out,
            "{:<14} {:>8} {:>9} {:>10} {:>11} {:>9} {:>6} {:>8} {:>7} {:>7}  top keywords",
            "author",
            "ingested",
            "duplicate",
            "min_length",
            "non_textual",
            "blocklist",
            "kept",
            "retained",
            "lower",
            "upper"
        );
        let height = |h: Option<f64>| h.map_or_else(|| "-".to_owned(), |h| format!("{h:.2}"));
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            let ex = |rule: FilterRule| r.excluded.get(rule.name()).copied().unwrap_or(0);
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>9} {:>10} {:>11} {:>9} {:>6} {:>8} {:>7} {:>7}  {}",
                r.author_id,
                r.ingested,
                ex(FilterRule::Duplicate),
                ex(FilterRule::MinLength),
                ex(FilterRule::NonTextual),
                ex(FilterRule::Blocklist),
                r.kept,
                r.retained,
                height(r.height_lower),
                height(r.height_upper),
                r.top_keywords.join(" ")
            );
        }
        out
    }
}
