use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stele_core::textfeat::TokenizerConfig;
use stele_core::tribute::{Lang, DEFAULT_UNIT_INCREMENT};

use crate::ServiceError;

/// Environment variable that overrides `bind`.
pub const BIND_ENV: &str = "STELE_BIND";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Holds the tribute log and its snapshot.
    pub data_dir: PathBuf,
    pub scene_path: PathBuf,
    pub curated_path: Option<PathBuf>,
    pub translations_path: Option<PathBuf>,
    pub moderation_path: Option<PathBuf>,
    pub tokenizer: TokenizerConfig,
    pub default_lang: Lang,
    /// Origins allowed by CORS. Empty disables CORS headers.
    pub cors_origins: Vec<String>,
    pub match_top_k: usize,
    pub unit_increment: f64,
    /// Write a derived-state snapshot every this many appended tributes (0 = never).
    pub snapshot_every: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8640".into(),
            data_dir: PathBuf::from("var"),
            scene_path: PathBuf::from("out/scene.json"),
            curated_path: None,
            translations_path: None,
            moderation_path: None,
            tokenizer: TokenizerConfig::default(),
            default_lang: Lang::Zh,
            cors_origins: Vec::new(),
            match_top_k: 5,
            unit_increment: DEFAULT_UNIT_INCREMENT,
            snapshot_every: 100,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Loads a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = fs::read_to_string(path).map_err(|source| ServiceError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        rebase(&mut self.data_dir);
        rebase(&mut self.scene_path);
        for p in [
            &mut self.curated_path,
            &mut self.translations_path,
            &mut self.moderation_path,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        self.tokenizer.resolve_paths(dir);
    }

    pub fn apply_env(&mut self) {
        if let Ok(bind) = std::env::var(BIND_ENV) {
            if !bind.trim().is_empty() {
                self.bind = bind.trim().to_owned();
            }
        }
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, ServiceError> {
        self.bind
            .parse()
            .map_err(|e| ServiceError::Config(format!("bind address {:?}: {e}", self.bind)))
    }

    pub fn log_path(&self) -> PathBuf {
        self.data_dir.join("tributes.jsonl")
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.data_dir.join("tributes.snapshot.json")
    }

    /// Checks parameters and that the data directory can be written, creating it if needed.
    pub fn validate(&self) -> Result<(), ServiceError> {
        self.bind_addr()?;
        if !(self.unit_increment.is_finite() && self.unit_increment > 0.0) {
            return Err(ServiceError::Config("unit_increment must be positive".into()));
        }
        let io = |source| ServiceError::Io {
            path: self.data_dir.clone(),
            source,
        };
        fs::create_dir_all(&self.data_dir).map_err(io)?;
        let probe = self.data_dir.join(".write-probe");
        fs::write(&probe, b"").map_err(io)?;
        fs::remove_file(&probe).map_err(io)?;
        Ok(())
    }
}
