use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError, RwLock};
use std::time::Instant;

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};
use stele_core::curation::{read_curated, sort_curated, CuratedPost};
use stele_core::monument::SceneDocument;
use stele_core::textfeat::{Tokenizer, TranslationTable};
use stele_core::tribute::{
    Lang, ModerationGate, ModerationRules, RateLimited, RateLimiter, SimilarityIndex, TributeStore,
};

use crate::config::ServiceConfig;
use crate::ServiceError;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn instant(&self) -> Instant;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn instant(&self) -> Instant {
        Instant::now()
    }
}

/// A scene plus everything derived from it for serving.
#[derive(Debug)]
pub struct LoadedScene {
    pub doc: SceneDocument,
    fragments: BTreeMap<String, Vec<u8>>,
    posts: BTreeMap<String, Vec<CuratedPost>>,
    index: SimilarityIndex,
}

impl LoadedScene {
    pub fn new(doc: SceneDocument, curated: Vec<CuratedPost>, tokenizer: Arc<Tokenizer>) -> Self {
        let mut index = SimilarityIndex::new(tokenizer);
        let mut fragments = BTreeMap::new();
        for m in &doc.monuments {
            index.add_keywords(&m.spec.keywords_lower);
            index.add_keywords(&m.spec.keywords_upper);
            let fragment = doc.fragment(&m.spec.author_id).expect("monument is in the scene");
            fragments.insert(m.spec.author_id.clone(), stele_core::canonical::to_vec(&fragment));
        }
        let mut posts: BTreeMap<String, Vec<CuratedPost>> = BTreeMap::new();
        for p in curated {
            if doc.monument(&p.author_id).is_none() {
                continue;
            }
            index.add_post(&p.author_id, &p.post_id, &p.text);
            posts.entry(p.author_id.clone()).or_default().push(p);
        }
        for list in posts.values_mut() {
            sort_curated(list);
        }
        Self {
            doc,
            fragments,
            posts,
            index,
        }
    }

    pub fn has_author(&self, author_id: &str) -> bool {
        self.fragments.contains_key(author_id)
    }

    pub fn fragment_bytes(&self, author_id: &str) -> Option<&[u8]> {
        self.fragments.get(author_id).map(Vec::as_slice)
    }

    pub fn posts(&self, author_id: &str) -> &[CuratedPost] {
        self.posts.get(author_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn index(&self) -> &SimilarityIndex {
        &self.index
    }
}

struct Snapshots {
    path: PathBuf,
    every: usize,
}

/// Shared service state. Reads take short locks; tribute writes go through one mutex.
pub struct AppState {
    scene: RwLock<Option<Arc<LoadedScene>>>,
    store: Mutex<TributeStore>,
    limiter: Mutex<RateLimiter>,
    gate: Arc<dyn ModerationGate>,
    tokenizer: Arc<Tokenizer>,
    translations: TranslationTable,
    clock: Arc<dyn Clock>,
    default_lang: Lang,
    match_top_k: usize,
    snapshots: Option<Snapshots>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

impl AppState {
    pub fn new(store: TributeStore, tokenizer: Tokenizer, rules: &ModerationRules) -> Result<Self, ServiceError> {
        Ok(Self {
            scene: RwLock::new(None),
            store: Mutex::new(store),
            limiter: Mutex::new(RateLimiter::new(rules.rate_limit)),
            gate: Arc::new(rules.compile()?),
            tokenizer: Arc::new(tokenizer),
            translations: TranslationTable::default(),
            clock: Arc::new(SystemClock),
            default_lang: Lang::Zh,
            match_top_k: 5,
            snapshots: None,
        })
    }

    pub fn with_gate(mut self, gate: Arc<dyn ModerationGate>) -> Self {
        self.gate = gate;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_translations(mut self, table: TranslationTable) -> Self {
        self.translations = table;
        self
    }

    pub fn with_default_lang(mut self, lang: Lang) -> Self {
        self.default_lang = lang;
        self
    }

    pub fn with_match_top_k(mut self, k: usize) -> Self {
        self.match_top_k = k;
        self
    }

    pub fn with_snapshots(mut self, path: PathBuf, every: usize) -> Self {
        self.snapshots = (every > 0).then_some(Snapshots { path, every });
        self
    }

    /// Opens the tribute log and loads the scene named by `config`, if it exists.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let rules = match &config.moderation_path {
            Some(p) => ModerationRules::load(p)?,
            None => ModerationRules::default(),
        };
        let tokenizer = Tokenizer::from_config(&config.tokenizer)?;
        let snapshot_path = config.snapshot_path();
        let store = if snapshot_path.exists() {
            let snap = TributeStore::read_snapshot(&snapshot_path)?;
            if snap.unit_increment == config.unit_increment {
                TributeStore::open_with_snapshot(&config.log_path(), &snap)?
            } else {
                tracing::warn!("snapshot unit increment differs from config; replaying full log");
                TributeStore::open(&config.log_path(), config.unit_increment)?
            }
        } else {
            TributeStore::open(&config.log_path(), config.unit_increment)?
        };
        let translations = match &config.translations_path {
            Some(p) => TranslationTable::load(p)?,
            None => TranslationTable::default(),
        };
        let state = Self::new(store, tokenizer, &rules)?
            .with_translations(translations)
            .with_default_lang(config.default_lang)
            .with_match_top_k(config.match_top_k)
            .with_snapshots(snapshot_path, config.snapshot_every);
        if config.scene_path.exists() {
            state.reload(&config.scene_path, config.curated_path.as_deref())?;
        } else {
            tracing::warn!(path = %config.scene_path.display(), "scene not built yet; monument endpoints return 503");
        }
        Ok(state)
    }

    /// Reads a scene (and optional curated posts) from disk and swaps it in.
    pub fn reload(&self, scene_path: &Path, curated_path: Option<&Path>) -> Result<u64, ServiceError> {
        let doc = SceneDocument::read(scene_path)?;
        let curated = match curated_path {
            Some(p) if p.exists() => read_curated(p)?,
            _ => Vec::new(),
        };
        let version = doc.data_version;
        self.install_scene(doc, curated)?;
        tracing::info!(data_version = version, "scene loaded");
        Ok(version)
    }

    /// Atomically replaces the served scene. Older data versions are refused.
    pub fn install_scene(&self, doc: SceneDocument, curated: Vec<CuratedPost>) -> Result<(), ServiceError> {
        let loaded = Arc::new(LoadedScene::new(doc, curated, self.tokenizer.clone()));
        let mut slot = self.scene.write().unwrap_or_else(PoisonError::into_inner);
        if let Some(current) = slot.as_ref() {
            if loaded.doc.data_version < current.doc.data_version {
                return Err(ServiceError::StaleScene {
                    current: current.doc.data_version,
                    offered: loaded.doc.data_version,
                });
            }
        }
        *slot = Some(loaded);
        Ok(())
    }

    pub fn scene(&self) -> Option<Arc<LoadedScene>> {
        self.scene.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn store(&self) -> MutexGuard<'_, TributeStore> {
        lock(&self.store)
    }

    pub(crate) fn check_rate(&self, client: &str) -> Result<(), RateLimited> {
        let now = self.clock.instant();
        lock(&self.limiter).check(client, now)
    }

    pub(crate) fn after_append(&self, store: &TributeStore) {
        if let Some(s) = &self.snapshots {
            if store.len() % s.every == 0 {
                if let Err(e) = store.write_snapshot(&s.path) {
                    tracing::warn!(error = %e, "snapshot write failed");
                }
            }
        }
    }

    pub fn gate(&self) -> &dyn ModerationGate {
        self.gate.as_ref()
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn translations(&self) -> &TranslationTable {
        &self.translations
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn default_lang(&self) -> Lang {
        self.default_lang
    }

    pub fn match_top_k(&self) -> usize {
        self.match_top_k
    }

    /// Digest of everything a request could change: served scene version,
    /// tribute log length and derived keyword state.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        match self.scene() {
            Some(s) => h.update(format!("scene:{}\n", s.doc.data_version)),
            None => h.update(b"scene:none\n"),
        }
        let store = self.store();
        h.update(format!("log:{}\n", store.len()));
        h.update(store.state().to_canonical_bytes());
        hex::encode(h.finalize())
    }
}
