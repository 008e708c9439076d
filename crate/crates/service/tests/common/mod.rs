#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{NaiveDate, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use stele_core::corpus::{AuthorRecord, Post};
use stele_core::curation::{curate, CuratedPost};
use stele_core::monument::{build_scene, HeightParams, MonumentInputs, SceneConfig, SceneDocument};
use stele_core::salience::ScoredPost;
use stele_core::textfeat::{KeywordEntry, KeywordSet, Segment, Tokenizer, TranslationTable};
use stele_core::tribute::{LogSink, ModerationRules, TributeStore};
use stele_service::{router, AppState};
use tower::ServiceExt;

pub type Row = (&'static str, &'static str, (i32, u32, u32), u32, [f64; 4]);

pub const TABLE: [Row; 7] = [
    ("qiong_yao", "Qiong Yao", (2024, 12, 4), 65, [86000.0, 35.5, 193.8, 6.7]),
    (
        "qi_bangyuan",
        "Qi Bangyuan",
        (2024, 3, 28),
        6,
        [16000.0, 2.1, 7.1, 0.2414],
    ),
    ("yang_yi", "Yang Yi", (2023, 1, 27), 12, [3786.4, 0.8175, 6.2, 0.0483]),
    (
        "hu_xudong",
        "Hu Xudong",
        (2021, 8, 22),
        9,
        [1453.2, 0.2873, 0.3426, 0.0194],
    ),
    (
        "jin_yong",
        "Jin Yong",
        (2018, 10, 30),
        15,
        [210000.0, 140.7, 167.6, 15.0],
    ),
    (
        "huang_yi",
        "Huang Yi",
        (2017, 4, 5),
        40,
        [1510.3, 0.8072, 0.9615, 0.0816],
    ),
    (
        "yang_jiang",
        "Yang Jiang",
        (2016, 5, 25),
        14,
        [14000.0, 14.9, 20.5, 3.9],
    ),
];

pub fn authors() -> Vec<AuthorRecord> {
    TABLE
        .iter()
        .map(|(id, name, (y, m, d), pubs, v)| AuthorRecord {
            author_id: id.to_string(),
            display_name: name.to_string(),
            death_date: NaiveDate::from_ymd_opt(*y, *m, *d).unwrap(),
            publication_count: *pubs,
            reading_volume: v[0],
            discussion_volume: v[1],
            interaction_volume: v[2],
            originality_volume: v[3],
        })
        .collect()
}

fn set(author: &str, segment: Segment, terms: &[(&str, f64)]) -> KeywordSet {
    KeywordSet::new(
        author,
        segment,
        terms
            .iter()
            .map(|(t, w)| KeywordEntry {
                term: t.to_string(),
                weight: *w,
                label_en: None,
            })
            .collect(),
    )
}

pub fn scene(version: u64) -> SceneDocument {
    let mut inputs = MonumentInputs {
        authors: authors(),
        ..Default::default()
    };
    for (id, ..) in TABLE {
        inputs
            .keywords_upper
            .insert(id.to_string(), set(id, Segment::Upper, &[("怀念", 0.2), ("走好", 0.1)]));
        inputs
            .keywords_lower
            .insert(id.to_string(), set(id, Segment::Lower, &[("作品", 0.3)]));
    }
    inputs.keywords_upper.insert(
        "jin_yong".into(),
        set(
            "jin_yong",
            Segment::Upper,
            &[("江湖", 0.5), ("武侠", 0.4), ("走好", 0.1)],
        ),
    );
    let config = SceneConfig {
        density: 2.0,
        ..Default::default()
    };
    let built = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    build_scene(&inputs, &HeightParams::default(), &config, built, version).unwrap()
}

pub fn curated(doc: &SceneDocument) -> Vec<CuratedPost> {
    let texts = [
        ("j1", "再见江湖，武侠不老", 500, 20),
        ("j2", "江湖从此少了一位大侠", 900, 40),
        ("j3", "天上人间，走好", 50, 1),
        ("j4", "武侠梦还在", 10, 0),
    ];
    let scored: Vec<ScoredPost> = texts
        .iter()
        .map(|(id, text, likes, reposts)| ScoredPost {
            post: Post {
                id: id.to_string(),
                author_tag: "jin_yong".into(),
                text: text.to_string(),
                created_at: Utc.with_ymd_and_hms(2018, 10, 31, 0, 0, 0).unwrap(),
                reposts: *reposts,
                comments: 0,
                likes: *likes,
                is_original: true,
                permalink: Some(format!("https://weibo.example/{id}")),
            },
            delta_t_days: 0.0,
            engagement: 0.0,
            salience: 1.0,
        })
        .collect();
    let kw = &doc.monument("jin_yong").unwrap().spec.keywords_upper;
    curate(&scored, kw, &Tokenizer::bigram())
}

pub fn rules(rate_limit: u32) -> ModerationRules {
    ModerationRules {
        rate_limit,
        ..Default::default()
    }
}

pub fn translations() -> TranslationTable {
    let mut t = TranslationTable::default();
    t.insert("江湖", "jianghu");
    t.insert("怀念", "remembrance");
    t
}

pub fn state_with(store: TributeStore, rate_limit: u32, loaded: bool) -> Arc<AppState> {
    let state = AppState::new(store, Tokenizer::bigram(), &rules(rate_limit))
        .unwrap()
        .with_translations(translations());
    if loaded {
        let doc = scene(1);
        let posts = curated(&doc);
        state.install_scene(doc, posts).unwrap();
    }
    Arc::new(state)
}

#[derive(Default)]
pub struct MemSink;

impl LogSink for MemSink {
    fn append_line(&mut self, _: &[u8]) -> std::io::Result<()> {
        Ok(())
    }
}

pub struct FailingSink;

impl LogSink for FailingSink {
    fn append_line(&mut self, _: &[u8]) -> std::io::Result<()> {
        Err(std::io::Error::other("disk full"))
    }
}

pub fn memory_store() -> TributeStore {
    TributeStore::with_sink(Box::new(MemSink), 1.0)
}

pub fn app(state: &Arc<AppState>) -> Router {
    router(state.clone(), &[]).unwrap()
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("invalid JSON ({e}): {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn send(app: &Router, request: Request<Body>) -> Reply {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, bytes }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(app: &Router, body: &str) -> Reply {
    send(
        app,
        Request::post("/api/tributes")
            .header("content-type", "application/json")
            .body(Body::from(body.to_owned()))
            .unwrap(),
    )
    .await
}

pub fn tribute(author: &str, text: &str) -> String {
    serde_json::json!({"author_id": author, "text": text, "lang": "zh"}).to_string()
}

pub fn increments(state: &AppState) -> BTreeMap<String, BTreeMap<String, f64>> {
    state.store().state().increments.clone()
}
