//! The pipeline manifest: one TOML file naming every input and parameter.
//!
//! Relative paths are resolved against the manifest's own directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use stele_core::monument::{HeightParams, SceneConfig};
use stele_core::salience::SalienceParams;
use stele_core::textfeat::TokenizerConfig;
use stele_core::tribute::{ModerationRules, DEFAULT_UNIT_INCREMENT};

use crate::failure::{Classify, Failure, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub authors: PathBuf,
    /// author_id → post file (`.jsonl` or `.csv`).
    #[serde(default)]
    pub posts: BTreeMap<String, PathBuf>,
    /// author_id → plain-text file of the author's own works and titles.
    #[serde(default)]
    pub works: BTreeMap<String, PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub translations: Option<PathBuf>,
    pub filter: Option<PathBuf>,
    pub moderation: Option<PathBuf>,
    /// Tribute log folded into upper keywords at build time. May not exist yet.
    pub tributes: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordParams {
    pub top_k: usize,
    pub tribute_increment: f64,
}

impl Default for KeywordParams {
    fn default() -> Self {
        Self {
            top_k: 60,
            tribute_increment: DEFAULT_UNIT_INCREMENT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputParams {
    pub dir: PathBuf,
}

impl Default for OutputParams {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

fn first_version() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Build timestamp. When absent the newest ingested post time is used.
    #[serde(default)]
    pub built_at: Option<DateTime<Utc>>,
    #[serde(default = "first_version")]
    pub data_version: u64,
    pub inputs: Inputs,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub salience: SalienceParams,
    #[serde(default)]
    pub heights: HeightParams,
    #[serde(default)]
    pub keywords: KeywordParams,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub output: OutputParams,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Outcome<Self> {
        toml::from_str(text).or_config(|| "invalid manifest".into())
    }

    /// Reads, resolves and validates a manifest file.
    pub fn load(path: &Path) -> Outcome<Self> {
        let text = std::fs::read_to_string(path).or_config(|| format!("cannot read manifest {}", path.display()))?;
        let mut manifest =
            Self::from_toml(&text).map_err(|f| Failure::config(f.error.context(format!("in {}", path.display()))))?;
        manifest.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let i = &mut self.inputs;
        rebase(&mut i.authors);
        i.posts.values_mut().for_each(rebase);
        i.works.values_mut().for_each(rebase);
        for p in [
            &mut i.stopwords,
            &mut i.lexicon,
            &mut i.translations,
            &mut i.filter,
            &mut i.moderation,
            &mut i.tributes,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        self.tokenizer.resolve_paths(dir);
        rebase(&mut self.output.dir);
    }

    /// Every referenced input must exist and every parameter must be in range.
    pub fn validate(&self) -> Outcome<()> {
        let i = &self.inputs;
        let required = std::iter::once(&i.authors)
            .chain(i.posts.values())
            .chain(i.works.values())
            .chain(
                [&i.stopwords, &i.lexicon, &i.translations, &i.filter, &i.moderation]
                    .into_iter()
                    .flatten(),
            )
            .chain(self.tokenizer.stopword_path.iter())
            .chain(self.tokenizer.lexicon_path.iter());
        for path in required {
            if !path.is_file() {
                return Err(Failure::config(anyhow!("missing input file: {}", path.display())));
            }
        }
        self.salience.validate().or_config(|| "[salience]".into())?;
        self.heights
            .weights
            .validate()
            .or_config(|| "[heights.weights]".into())?;
        self.heights
            .compression
            .validate()
            .or_config(|| "[heights.compression]".into())?;
        self.scene.validate().or_config(|| "[scene]".into())?;
        if self.keywords.top_k < 1 {
            return Err(Failure::config(anyhow!("[keywords] top_k must be >= 1")));
        }
        if !(self.keywords.tribute_increment.is_finite() && self.keywords.tribute_increment > 0.0) {
            return Err(Failure::config(anyhow!("[keywords] tribute_increment must be > 0")));
        }
        if let Some(path) = &i.moderation {
            ModerationRules::load(path)
                .and_then(|r| r.compile())
                .or_config(|| format!("moderation rules {}", path.display()))?;
        }
        Ok(())
    }

    /// Tokenizer settings with the manifest's stopword and lexicon inputs applied.
    pub fn tokenizer_config(&self) -> TokenizerConfig {
        let mut config = self.tokenizer.clone();
        if let Some(p) = &self.inputs.stopwords {
            config.stopword_path = Some(p.clone());
        }
        if let Some(p) = &self.inputs.lexicon {
            config.lexicon_path = Some(p.clone());
        }
        config
    }
}
