//! Monument heights and point-cloud scene synthesis.
//!
//! Each monument is a two-segment column. The lower segment's height comes from
//! the z-scored publication count, the upper segment's from the sum of the four
//! z-scored attention volumes; both go through `100 · sigmoid(k · x)`.
//!
//! Scenes are pure functions of `(specs, config)`. Every random stream is
//! derived from the scene seed, the author id, the segment and the stream's
//! purpose, so positions, dispersal vectors and keyword placement are
//! independent of one another and of other monuments.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{self, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::corpus::{timestamp, AuthorRecord};
use crate::normalize::{self, CompressionParams, NormalizeError};
use crate::textfeat::{KeywordSet, Segment};

pub const SCENE_FORMAT: &str = "stele-scene/1";

#[derive(Debug, Error)]
pub enum MonumentError {
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error("invalid height weights: {0}")]
    Weights(String),
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("no monuments to synthesize")]
    EmptyCohort,
    #[error("keyword set for {author_id} has segment {found}, expected {expected}")]
    SegmentMismatch {
        author_id: String,
        expected: Segment,
        found: Segment,
    },
    #[error("monument specs disagree on {0}")]
    InconsistentSpecs(&'static str),
    #[error("data version regression: previous {previous}, requested {requested}")]
    VersionRegression { previous: u64, requested: u64 },
    #[error("cannot read scene: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-metric weights inside the sigmoid exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeightWeights {
    pub w_publications: f64,
    pub w_reading: f64,
    pub w_discussion: f64,
    pub w_interaction: f64,
    pub w_originality: f64,
}

impl Default for HeightWeights {
    fn default() -> Self {
        Self {
            w_publications: 1.0,
            w_reading: 1.0,
            w_discussion: 1.0,
            w_interaction: 1.0,
            w_originality: 1.0,
        }
    }
}

impl HeightWeights {
    fn upper(&self) -> [f64; 4] {
        [
            self.w_reading,
            self.w_discussion,
            self.w_interaction,
            self.w_originality,
        ]
    }

    pub fn validate(&self) -> Result<(), MonumentError> {
        if !self.w_publications.is_finite() || self.upper().iter().any(|w| !w.is_finite()) {
            return Err(MonumentError::Weights("weights must be finite".into()));
        }
        if self.upper().iter().all(|&w| w == 0.0) {
            return Err(MonumentError::Weights("upper-segment weights are all zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeightParams {
    pub weights: HeightWeights,
    pub compression: CompressionParams,
}

fn to_height(x: f64, k: f64) -> f64 {
    let h = 100.0 * normalize::sigmoid_unchecked(x, k);
    h.clamp(f64::MIN_POSITIVE, 100f64.next_down())
}

/// `100 · sigmoid(ω₁ · z(publications), k)`.
pub fn height_lower(publication_counts: &[u32], weights: &HeightWeights, k: f64) -> Result<Vec<f64>, MonumentError> {
    weights.validate()?;
    normalize::sigmoid_compress(0.0, k)?;
    let counts: Vec<f64> = publication_counts.iter().map(|&c| f64::from(c)).collect();
    Ok(normalize::zscore(&counts)?
        .into_iter()
        .map(|z| to_height(weights.w_publications * z, k))
        .collect())
}

/// `ω₂R̃ + ω₃D̃ + ω₄Ĩ + ω₅Õ` with each metric z-scored across the cohort.
pub fn upper_composite(records: &[AuthorRecord], weights: &HeightWeights) -> Result<Vec<f64>, MonumentError> {
    weights.validate()?;
    let metric = |f: fn(&AuthorRecord) -> f64| -> Result<Vec<f64>, NormalizeError> {
        normalize::zscore(&records.iter().map(f).collect::<Vec<_>>())
    };
    let columns = [
        metric(|r| r.reading_volume)?,
        metric(|r| r.discussion_volume)?,
        metric(|r| r.interaction_volume)?,
        metric(|r| r.originality_volume)?,
    ];
    let w = weights.upper();
    Ok((0..records.len())
        .map(|i| (0..4).map(|m| w[m] * columns[m][i]).sum())
        .collect())
}

/// `100 · sigmoid(composite, k)`.
pub fn height_upper(records: &[AuthorRecord], weights: &HeightWeights, k: f64) -> Result<Vec<f64>, MonumentError> {
    normalize::sigmoid_compress(0.0, k)?;
    Ok(upper_composite(records, weights)?
        .into_iter()
        .map(|x| to_height(x, k))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonumentSpec {
    pub author_id: String,
    pub display_name: String,
    pub death_date: NaiveDate,
    pub publication_count: u32,
    pub height_lower: f64,
    pub height_upper: f64,
    pub keywords_lower: KeywordSet,
    pub keywords_upper: KeywordSet,
    #[serde(with = "timestamp")]
    pub built_at: DateTime<Utc>,
    pub data_version: u64,
}

/// Everything a build consumes besides parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonumentInputs {
    pub authors: Vec<AuthorRecord>,
    pub keywords_lower: BTreeMap<String, KeywordSet>,
    pub keywords_upper: BTreeMap<String, KeywordSet>,
}

impl MonumentInputs {
    fn keywords(&self, author_id: &str, segment: Segment) -> Result<KeywordSet, MonumentError> {
        let map = match segment {
            Segment::Lower => &self.keywords_lower,
            Segment::Upper => &self.keywords_upper,
        };
        match map.get(author_id) {
            Some(set) if set.segment != segment => Err(MonumentError::SegmentMismatch {
                author_id: author_id.to_owned(),
                expected: segment,
                found: set.segment,
            }),
            Some(set) => Ok(set.clone()),
            None => Ok(KeywordSet::empty(author_id, segment)),
        }
    }
}

/// Computes both heights for the whole cohort. Output is in layout order.
pub fn build_specs(
    inputs: &MonumentInputs,
    params: &HeightParams,
    built_at: DateTime<Utc>,
    data_version: u64,
) -> Result<Vec<MonumentSpec>, MonumentError> {
    params.compression.validate()?;
    if inputs.authors.is_empty() {
        return Ok(Vec::new());
    }
    let counts: Vec<u32> = inputs.authors.iter().map(|a| a.publication_count).collect();
    let lower = height_lower(&counts, &params.weights, params.compression.k_productivity)?;
    let upper = height_upper(&inputs.authors, &params.weights, params.compression.k_attention)?;
    let mut specs = inputs
        .authors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            Ok(MonumentSpec {
                author_id: a.author_id.clone(),
                display_name: a.display_name.clone(),
                death_date: a.death_date,
                publication_count: a.publication_count,
                height_lower: lower[i],
                height_upper: upper[i],
                keywords_lower: inputs.keywords(&a.author_id, Segment::Lower)?,
                keywords_upper: inputs.keywords(&a.author_id, Segment::Upper)?,
                built_at,
                data_version,
            })
        })
        .collect::<Result<Vec<_>, MonumentError>>()?;
    specs.sort_by(|a, b| layout_key(a).cmp(&layout_key(b)));
    Ok(specs)
}

fn layout_key(spec: &MonumentSpec) -> (NaiveDate, &str) {
    (spec.death_date, spec.author_id.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnGeometry {
    pub radius: f64,
    pub sides: u32,
}

impl Default for ColumnGeometry {
    fn default() -> Self {
        Self { radius: 4.0, sides: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnimationParams {
    /// Maximum dispersal displacement, in scene units.
    pub disperse_amplitude: f64,
    /// Units per second while dispersing or re-aggregating.
    pub disperse_speed: f64,
    /// Seconds per text pulsation cycle.
    pub pulsation_period: f64,
    /// Relative glyph scale change at the peak of a pulse.
    pub pulsation_amplitude: f64,
}

impl Default for AnimationParams {
    fn default() -> Self {
        Self {
            disperse_amplitude: 12.0,
            disperse_speed: 1.5,
            pulsation_period: 4.0,
            pulsation_amplitude: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLayout {
    /// Distance between consecutive monuments along the path.
    pub spacing: f64,
    /// Lateral offset of each monument from the path's centre line.
    pub half_width: f64,
}

impl Default for PathLayout {
    fn default() -> Self {
        Self {
            spacing: 30.0,
            half_width: 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Points per unit of segment height.
    pub density: f64,
    pub seed: u64,
    /// Share of points that carry a keyword glyph.
    pub keyword_fraction: f64,
    pub column: ColumnGeometry,
    pub animation: AnimationParams,
    pub layout: PathLayout,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            density: 10.0,
            seed: 0,
            keyword_fraction: 0.6,
            column: ColumnGeometry::default(),
            animation: AnimationParams::default(),
            layout: PathLayout::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), MonumentError> {
        let bad = |m: &str| Err(MonumentError::Config(m.to_owned()));
        if !(self.density.is_finite() && self.density > 0.0) {
            return bad("density must be > 0");
        }
        if !(0.0..=1.0).contains(&self.keyword_fraction) {
            return bad("keyword_fraction must lie in [0, 1]");
        }
        if !(self.column.radius.is_finite() && self.column.radius > 0.0) || self.column.sides < 3 {
            return bad("column needs radius > 0 and at least 3 sides");
        }
        let a = &self.animation;
        if [
            a.disperse_amplitude,
            a.disperse_speed,
            a.pulsation_period,
            a.pulsation_amplitude,
        ]
        .iter()
        .any(|v| !v.is_finite() || *v < 0.0)
        {
            return bad("animation parameters must be finite and >= 0");
        }
        if !(self.layout.spacing.is_finite() && self.layout.half_width.is_finite()) {
            return bad("layout parameters must be finite");
        }
        Ok(())
    }

    pub fn points_for(&self, height: f64) -> usize {
        (self.density * height).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSlot {
    pub author_id: String,
    pub death_date: NaiveDate,
    pub order: usize,
    pub side: Side,
    /// Base centre of the monument in scene coordinates.
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    /// Monument-local coordinates; add the layout position for scene coordinates.
    pub position: [f64; 3],
    /// Index into the segment's keyword entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword: Option<u32>,
    /// Offset from `position` in the dispersed state.
    pub displacement: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCloud {
    pub segment: Segment,
    pub base_y: f64,
    pub height: f64,
    pub points: Vec<ScenePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonumentScene {
    pub spec: MonumentSpec,
    pub segments: Vec<SegmentCloud>,
}

impl MonumentScene {
    pub fn segment(&self, segment: Segment) -> &SegmentCloud {
        self.segments
            .iter()
            .find(|s| s.segment == segment)
            .expect("both segments are always present")
    }

    fn keywords(&self, segment: Segment) -> &KeywordSet {
        match segment {
            Segment::Lower => &self.spec.keywords_lower,
            Segment::Upper => &self.spec.keywords_upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub format: String,
    pub data_version: u64,
    #[serde(with = "timestamp")]
    pub built_at: DateTime<Utc>,
    pub heights: HeightParams,
    pub config: SceneConfig,
    pub layout: Vec<LayoutSlot>,
    pub monuments: Vec<MonumentScene>,
    /// Number of tribute log entries already folded into the upper keywords.
    #[serde(default)]
    pub tribute_entries: usize,
}

/// One monument with the scene-wide parameters a renderer needs to draw it alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonumentFragment {
    pub format: String,
    pub data_version: u64,
    #[serde(with = "timestamp")]
    pub built_at: DateTime<Utc>,
    pub config: SceneConfig,
    pub slot: LayoutSlot,
    pub monument: MonumentScene,
}

impl SceneDocument {
    pub fn empty(config: SceneConfig, heights: HeightParams, built_at: DateTime<Utc>, data_version: u64) -> Self {
        Self {
            format: SCENE_FORMAT.to_owned(),
            data_version,
            built_at,
            heights,
            config,
            layout: Vec::new(),
            monuments: Vec::new(),
            tribute_entries: 0,
        }
    }

    pub fn monument(&self, author_id: &str) -> Option<&MonumentScene> {
        self.monuments.iter().find(|m| m.spec.author_id == author_id)
    }

    pub fn fragment(&self, author_id: &str) -> Option<MonumentFragment> {
        let index = self.monuments.iter().position(|m| m.spec.author_id == author_id)?;
        Some(MonumentFragment {
            format: self.format.clone(),
            data_version: self.data_version,
            built_at: self.built_at,
            config: self.config,
            slot: self.layout[index].clone(),
            monument: self.monuments[index].clone(),
        })
    }

    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, MonumentError> {
        let doc: SceneDocument = serde_json::from_slice(bytes).map_err(|e| MonumentError::Format(e.to_string()))?;
        if doc.format != SCENE_FORMAT {
            return Err(MonumentError::Format(format!(
                "unsupported format {:?}, expected {SCENE_FORMAT:?}",
                doc.format
            )));
        }
        if doc.layout.len() != doc.monuments.len() {
            return Err(MonumentError::Format("layout and monuments differ in length".into()));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self, MonumentError> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn point_count(&self) -> usize {
        self.monuments
            .iter()
            .flat_map(|m| &m.segments)
            .map(|s| s.points.len())
            .sum()
    }

    /// ASCII PLY of every point in scene coordinates (static state).
    pub fn write_ply<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "ply")?;
        writeln!(out, "format ascii 1.0")?;
        writeln!(out, "comment {SCENE_FORMAT} data_version {}", self.data_version)?;
        writeln!(out, "element vertex {}", self.point_count())?;
        writeln!(out, "property float x")?;
        writeln!(out, "property float y")?;
        writeln!(out, "property float z")?;
        writeln!(out, "end_header")?;
        for (slot, monument) in self.layout.iter().zip(&self.monuments) {
            for cloud in &monument.segments {
                for p in &cloud.points {
                    let w = [
                        slot.position[0] + p.position[0],
                        slot.position[1] + p.position[1],
                        slot.position[2] + p.position[2],
                    ];
                    writeln!(out, "{:.6} {:.6} {:.6}", w[0], w[1], w[2])?;
                }
            }
        }
        out.flush()
    }
}

fn stream(seed: u64, author_id: &str, segment: Segment, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in [author_id, segment.as_str(), purpose] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Keyword indices for `n` points.
///
/// The first pass draws every keyword once without replacement, ordered by
/// weighted random keys, so all keywords are placed when `n ≥ len(weights)`.
/// Later points draw with probability proportional to weight.
pub fn assign_keywords<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    if weights.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keyed.into_iter().map(|(_, i)| i).take(n).collect();

    let mut cumulative = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for &w in weights {
        total += w;
        cumulative.push(total);
    }
    while out.len() < n {
        let target = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= target).min(weights.len() - 1);
        out.push(idx);
    }
    out
}

fn synthesize_segment(
    spec: &MonumentSpec,
    segment: Segment,
    base_y: f64,
    height: f64,
    keywords: &KeywordSet,
    config: &SceneConfig,
) -> SegmentCloud {
    let count = config.points_for(height);
    let sides = config.column.sides as usize;
    let radius = config.column.radius;
    let corner = |j: usize| {
        let theta = TAU * (j % sides) as f64 / sides as f64;
        (radius * theta.cos(), radius * theta.sin())
    };

    let mut pos_rng = stream(config.seed, &spec.author_id, segment, "position");
    let mut disp_rng = stream(config.seed, &spec.author_id, segment, "dispersal");
    let mut kw_rng = stream(config.seed, &spec.author_id, segment, "keywords");

    let labeled = if keywords.is_empty() {
        0
    } else {
        let wanted = (config.keyword_fraction * count as f64).round() as usize;
        wanted.max(keywords.len().min(count)).min(count)
    };
    let weights: Vec<f64> = keywords.entries.iter().map(|e| e.weight).collect();
    let assignment = assign_keywords(&weights, labeled, &mut kw_rng);

    let amplitude = config.animation.disperse_amplitude;
    let points = (0..count)
        .map(|i| {
            let face = pos_rng.random_range(0..sides);
            let t: f64 = pos_rng.random();
            let y = base_y + pos_rng.random::<f64>() * height;
            let (x0, z0) = corner(face);
            let (x1, z1) = corner(face + 1);
            let x = x0 + (x1 - x0) * t;
            let z = z0 + (z1 - z0) * t;

            // Outward from the axis, perturbed by a random unit vector.
            let cos_polar: f64 = disp_rng.random_range(-1.0..=1.0);
            let azimuth: f64 = disp_rng.random_range(0.0..TAU);
            let sin_polar = (1.0 - cos_polar * cos_polar).sqrt();
            let r = (x * x + z * z).sqrt().max(f64::MIN_POSITIVE);
            let dir = [
                x / r + 0.75 * sin_polar * azimuth.cos(),
                0.75 * cos_polar,
                z / r + 0.75 * sin_polar * azimuth.sin(),
            ];
            let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2])
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let magnitude = amplitude * (0.3 + 0.7 * disp_rng.random::<f64>());

            ScenePoint {
                position: [x, y, z],
                keyword: assignment.get(i).map(|&k| k as u32),
                displacement: dir.map(|d| d / norm * magnitude),
            }
        })
        .collect();

    SegmentCloud {
        segment,
        base_y,
        height,
        points,
    }
}

fn synthesize_monument(spec: &MonumentSpec, config: &SceneConfig) -> MonumentScene {
    if spec.keywords_lower.is_empty() && spec.keywords_upper.is_empty() {
        tracing::warn!(author_id = %spec.author_id, "monument has no keywords; emitting a bare column");
    }
    let lower = synthesize_segment(
        spec,
        Segment::Lower,
        0.0,
        spec.height_lower,
        &spec.keywords_lower,
        config,
    );
    let upper = synthesize_segment(
        spec,
        Segment::Upper,
        spec.height_lower,
        spec.height_upper,
        &spec.keywords_upper,
        config,
    );
    MonumentScene {
        spec: spec.clone(),
        segments: vec![lower, upper],
    }
}

fn layout(specs: &[MonumentSpec], config: &SceneConfig) -> Vec<LayoutSlot> {
    specs
        .iter()
        .enumerate()
        .map(|(order, spec)| {
            let side = if order % 2 == 0 { Side::Left } else { Side::Right };
            let x = match side {
                Side::Left => -config.layout.half_width,
                Side::Right => config.layout.half_width,
            };
            LayoutSlot {
                author_id: spec.author_id.clone(),
                death_date: spec.death_date,
                order,
                side,
                position: [x, 0.0, order as f64 * config.layout.spacing],
            }
        })
        .collect()
}

/// Builds point clouds, keyword instancing and the path layout for `specs`.
pub fn synthesize_scene(
    specs: &[MonumentSpec],
    config: &SceneConfig,
    heights: &HeightParams,
) -> Result<SceneDocument, MonumentError> {
    config.validate()?;
    let first = specs.first().ok_or(MonumentError::EmptyCohort)?;
    if specs.iter().any(|s| s.data_version != first.data_version) {
        return Err(MonumentError::InconsistentSpecs("data_version"));
    }
    if specs.iter().any(|s| s.built_at != first.built_at) {
        return Err(MonumentError::InconsistentSpecs("built_at"));
    }
    for spec in specs {
        for (set, expected) in [
            (&spec.keywords_lower, Segment::Lower),
            (&spec.keywords_upper, Segment::Upper),
        ] {
            if set.segment != expected {
                return Err(MonumentError::SegmentMismatch {
                    author_id: spec.author_id.clone(),
                    expected,
                    found: set.segment,
                });
            }
        }
    }
    let mut ordered = specs.to_vec();
    ordered.sort_by(|a, b| layout_key(a).cmp(&layout_key(b)));
    Ok(SceneDocument {
        format: SCENE_FORMAT.to_owned(),
        data_version: first.data_version,
        built_at: first.built_at,
        heights: *heights,
        config: *config,
        layout: layout(&ordered, config),
        monuments: ordered.iter().map(|s| synthesize_monument(s, config)).collect(),
        tribute_entries: 0,
    })
}

/// Heights plus synthesis. An empty cohort yields an empty, valid scene.
pub fn build_scene(
    inputs: &MonumentInputs,
    heights: &HeightParams,
    config: &SceneConfig,
    built_at: DateTime<Utc>,
    data_version: u64,
) -> Result<SceneDocument, MonumentError> {
    config.validate()?;
    let specs = build_specs(inputs, heights, built_at, data_version)?;
    if specs.is_empty() {
        return Ok(SceneDocument::empty(*config, *heights, built_at, data_version));
    }
    synthesize_scene(&specs, config, heights)
}

/// Rebuilds a scene from updated data, keeping the previous scene's parameters.
///
/// Lower segments are frozen: an author whose publication count and lower
/// keywords are unchanged keeps the previous lower height, keywords and
/// points. Upper segments are always recomputed from the current cohort.
pub fn rebuild(
    previous: &SceneDocument,
    inputs: &MonumentInputs,
    built_at: DateTime<Utc>,
    target_version: Option<u64>,
) -> Result<SceneDocument, MonumentError> {
    let data_version = match target_version {
        Some(v) if v <= previous.data_version => {
            return Err(MonumentError::VersionRegression {
                previous: previous.data_version,
                requested: v,
            })
        }
        Some(v) => v,
        None => previous.data_version + 1,
    };
    let mut specs = build_specs(inputs, &previous.heights, built_at, data_version)?;
    if specs.is_empty() {
        return Ok(SceneDocument::empty(
            previous.config,
            previous.heights,
            built_at,
            data_version,
        ));
    }
    let mut frozen = BTreeMap::new();
    for spec in &mut specs {
        if let Some(old) = previous.monument(&spec.author_id) {
            if old.spec.publication_count == spec.publication_count && old.spec.keywords_lower == spec.keywords_lower {
                spec.height_lower = old.spec.height_lower;
                frozen.insert(spec.author_id.clone(), old.segment(Segment::Lower).clone());
            }
        }
    }
    let mut doc = synthesize_scene(&specs, &previous.config, &previous.heights)?;
    for monument in &mut doc.monuments {
        if let Some(lower) = frozen.remove(&monument.spec.author_id) {
            monument.segments[0] = lower;
        }
    }
    Ok(doc)
}

/// Checks the structural invariants of a scene.
pub fn check_scene(doc: &SceneDocument) -> Result<(), String> {
    for (slot, monument) in doc.layout.iter().zip(&doc.monuments) {
        let spec = &monument.spec;
        if slot.author_id != spec.author_id {
            return Err(format!("layout slot {} is not {}", slot.order, spec.author_id));
        }
        for h in [spec.height_lower, spec.height_upper] {
            if !(h > 0.0 && h < 100.0) {
                return Err(format!("{}: height {h} outside (0, 100)", spec.author_id));
            }
        }
        for cloud in &monument.segments {
            if cloud.points.len() != doc.config.points_for(cloud.height) {
                return Err(format!("{}: {} point count mismatch", spec.author_id, cloud.segment));
            }
            let entries = monument.keywords(cloud.segment).len();
            if let Some(bad) = cloud
                .points
                .iter()
                .filter_map(|p| p.keyword)
                .find(|&k| k as usize >= entries)
            {
                return Err(format!("{}: keyword index {bad} out of range", spec.author_id));
            }
        }
    }
    let ordered = doc
        .monuments
        .windows(2)
        .all(|w| layout_key(&w[0].spec) <= layout_key(&w[1].spec));
    if !ordered {
        return Err("monuments are not in death-date order".into());
    }
    Ok(())
}
