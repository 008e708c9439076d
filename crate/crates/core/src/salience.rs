//! Time-decayed engagement scoring and high-salience retention.
//!
//! Engagement is a weighted sum of z-scored `ln(1 + count)` for reposts,
//! comments and likes. Salience discounts engagement by `2^(-Δt / h)` where
//! `Δt` is the post's age in fractional days at the reference time.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Post;
use crate::normalize::{self, NormalizeError};

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SalienceError {
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error("no posts to score")]
    Empty,
    #[error("post {id} was created at {created_at}, after the reference time {reference_time}")]
    FuturePost {
        id: String,
        created_at: DateTime<Utc>,
        reference_time: DateTime<Utc>,
    },
    #[error("invalid salience parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SalienceParams {
    pub half_life_days: f64,
    pub w_repost: f64,
    pub w_comment: f64,
    pub w_like: f64,
    pub retain_percentile: f64,
    /// Origin for post ages. `None` uses the newest post of the collection being scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_time: Option<DateTime<Utc>>,
}

impl Default for SalienceParams {
    fn default() -> Self {
        Self {
            half_life_days: 14.0,
            w_repost: 0.40,
            w_comment: 0.35,
            w_like: 0.25,
            retain_percentile: 70.0,
            reference_time: None,
        }
    }
}

impl SalienceParams {
    pub fn validate(&self) -> Result<(), SalienceError> {
        let invalid = |m: String| Err(SalienceError::InvalidParams(m));
        if !(self.half_life_days.is_finite() && self.half_life_days > 0.0) {
            return invalid(format!("half_life_days must be > 0, got {}", self.half_life_days));
        }
        let weights = [self.w_repost, self.w_comment, self.w_like];
        if weights.iter().any(|w| !w.is_finite()) {
            return invalid("weights must be finite".into());
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return invalid(format!("weights must sum to 1, got {sum}"));
        }
        if !(0.0..=100.0).contains(&self.retain_percentile) {
            return invalid(format!(
                "retain_percentile must lie in [0, 100], got {}",
                self.retain_percentile
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPost {
    pub post: Post,
    pub delta_t_days: f64,
    pub engagement: f64,
    pub salience: f64,
}

/// Z-scores of `ln(1 + x)`.
pub fn log_z_standardize(values: &[f64]) -> Result<Vec<f64>, NormalizeError> {
    normalize::check_finite(values)?;
    if let Some(index) = values.iter().position(|&v| v < 0.0) {
        return Err(NormalizeError::Negative {
            index,
            value: values[index],
        });
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln_1p()).collect();
    normalize::zscore(&logs)
}

/// Weighted engagement over the whole collection, in input order.
pub fn engagement_scores(posts: &[Post], params: &SalienceParams) -> Result<Vec<f64>, SalienceError> {
    if posts.is_empty() {
        return Err(SalienceError::Empty);
    }
    let column = |f: fn(&Post) -> u64| -> Result<Vec<f64>, NormalizeError> {
        let raw: Vec<f64> = posts.iter().map(|p| f(p) as f64).collect();
        log_z_standardize(&raw)
    };
    let reposts = column(|p| p.reposts)?;
    let comments = column(|p| p.comments)?;
    let likes = column(|p| p.likes)?;
    Ok((0..posts.len())
        .map(|i| params.w_repost * reposts[i] + params.w_comment * comments[i] + params.w_like * likes[i])
        .collect())
}

/// `2^(-Δt / h)`.
pub fn decay_factor(delta_t_days: f64, half_life_days: f64) -> f64 {
    (-delta_t_days / half_life_days).exp2()
}

/// Scores every post; the reference time defaults to the newest post.
pub fn salience_scores(posts: &[Post], params: &SalienceParams) -> Result<Vec<ScoredPost>, SalienceError> {
    params.validate()?;
    let engagement = engagement_scores(posts, params)?;
    let reference_time = params
        .reference_time
        .or_else(|| posts.iter().map(|p| p.created_at).max())
        .ok_or(SalienceError::Empty)?;
    posts
        .iter()
        .zip(engagement)
        .map(|(post, engagement)| {
            if post.created_at > reference_time {
                return Err(SalienceError::FuturePost {
                    id: post.id.clone(),
                    created_at: post.created_at,
                    reference_time,
                });
            }
            let delta_t_days = (reference_time - post.created_at).num_seconds() as f64 / SECONDS_PER_DAY;
            Ok(ScoredPost {
                post: post.clone(),
                delta_t_days,
                engagement,
                salience: engagement * decay_factor(delta_t_days, params.half_life_days),
            })
        })
        .collect()
}

/// 1-based nearest rank: `ceil(p/100 · n)`, at least 1.
pub fn nearest_rank(percentile: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let rank = (percentile * n as f64 / 100.0).ceil() as usize;
    rank.clamp(1, n)
}

/// Keeps posts whose salience is strictly above the nearest-rank percentile value.
/// Ties at the threshold are dropped; input order is preserved.
pub fn retain_top(scored: &[ScoredPost], params: &SalienceParams) -> Vec<ScoredPost> {
    if scored.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = scored.iter().map(|s| s.salience).collect();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[nearest_rank(params.retain_percentile, sorted.len()) - 1];
    scored.iter().filter(|s| s.salience > threshold).cloned().collect()
}

/// Scores each author campaign independently: standardization and the
/// reference time are both per `author_tag`.
pub fn score_by_campaign(
    posts: &[Post],
    params: &SalienceParams,
) -> Result<BTreeMap<String, Vec<ScoredPost>>, SalienceError> {
    let mut campaigns: BTreeMap<String, Vec<Post>> = BTreeMap::new();
    for post in posts {
        campaigns.entry(post.author_tag.clone()).or_default().push(post.clone());
    }
    campaigns
        .into_iter()
        .map(|(tag, posts)| Ok((tag, salience_scores(&posts, params)?)))
        .collect()
}
