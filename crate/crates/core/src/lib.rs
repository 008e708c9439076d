//! Core pipeline for building "digital monuments" from commemorative post corpora.
//!
//! The stages, in order:
//!
//! - [`corpus`]: ingest and filter posts and author metrics.
//! - [`salience`]: time-decayed engagement scoring and percentile retention.
//! - [`normalize`]: z-score plus sigmoid compression.
//! - [`textfeat`]: tokenization, TF-IDF and keyword sets.
//! - [`monument`]: monument heights and deterministic point-cloud scenes.
//! - [`tribute`]: moderation, similarity matching and the append-only tribute log.

pub mod canonical;
pub mod corpus;
pub mod curation;
pub mod monument;
pub mod normalize;
pub mod pattern;
pub mod salience;
pub mod textfeat;
pub mod tribute;
