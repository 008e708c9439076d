mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::connect_info::MockConnectInfo;
use axum::http::{header, Request, StatusCode};
use common::*;
use stele_core::curation::read_curated;
use stele_core::textfeat::Tokenizer;
use stele_core::tribute::{read_log, DerivedState, TributeStore};
use stele_service::{router, AppState};

#[tokio::test]
async fn no_scene_is_503() {
    let state = state_with(memory_store(), 10, false);
    let app = app(&state);
    assert_eq!(
        get(&app, "/api/monuments").await.status,
        StatusCode::SERVICE_UNAVAILABLE
    );
    assert_eq!(
        get(&app, "/api/monuments/jin_yong/scene").await.status,
        StatusCode::SERVICE_UNAVAILABLE
    );
    let health = get(&app, "/api/health").await;
    assert_eq!(health.status, StatusCode::OK);
    assert!(health.json()["data_version"].is_null());
}

#[tokio::test]
async fn monuments_in_death_date_order() {
    let state = state_with(memory_store(), 10, true);
    let r = get(&app(&state), "/api/monuments").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    let ids: Vec<&str> = body["monuments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["author_id"].as_str().unwrap())
        .collect();
    assert_eq!(
        ids,
        [
            "yang_jiang",
            "huang_yi",
            "jin_yong",
            "hu_xudong",
            "yang_yi",
            "qi_bangyuan",
            "qiong_yao"
        ]
    );
    assert_eq!(body["monuments"][0]["death_date"], "2016-05-25");
    for m in body["monuments"].as_array().unwrap() {
        for key in ["height_lower", "height_upper"] {
            let h = m[key].as_f64().unwrap();
            assert!(h > 0.0 && h < 100.0);
        }
        assert_eq!(m["data_version"], 1);
    }
}

#[tokio::test]
async fn empty_dataset_lists_nothing() {
    let state = state_with(memory_store(), 10, false);
    let mut doc = scene(1);
    doc.layout.clear();
    doc.monuments.clear();
    state.install_scene(doc, Vec::new()).unwrap();
    let r = get(&app(&state), "/api/monuments").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["monuments"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn scene_fragment_and_etag() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    let r = get(&app, "/api/monuments/jin_yong/scene").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    let segments = body["monument"]["segments"].as_array().unwrap();
    assert_eq!(segments.len(), 2);
    assert_eq!(segments[0]["segment"], "lower");
    assert_eq!(segments[1]["segment"], "upper");
    let tag = r.headers[header::ETAG].clone();
    assert_eq!(tag, "\"1\"");

    let again = get(&app, "/api/monuments/jin_yong/scene").await;
    assert_eq!(again.bytes, r.bytes);
    assert_eq!(again.headers[header::ETAG], tag);

    let cached = send(
        &app,
        Request::get("/api/monuments/jin_yong/scene")
            .header(header::IF_NONE_MATCH, tag)
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(cached.status, StatusCode::NOT_MODIFIED);
    assert!(cached.bytes.is_empty());

    assert_eq!(
        get(&app, "/api/monuments/nobody/scene").await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn keywords_bilingual() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    let r = get(&app, "/api/keywords/jin_yong?lang=en").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    let entries = body["entries"].as_array().unwrap();
    let by_term = |t: &str| entries.iter().find(|e| e["term"] == t).unwrap().clone();
    assert_eq!(by_term("江湖")["label"], "jianghu");
    assert_eq!(by_term("江湖")["fallback"], false);
    assert_eq!(by_term("武侠")["label"], "武侠");
    assert_eq!(by_term("武侠")["fallback"], true);
    let weights: Vec<f64> = entries.iter().map(|e| e["weight"].as_f64().unwrap()).collect();
    assert!(weights.windows(2).all(|w| w[0] >= w[1]));

    let zh = get(&app, "/api/keywords/jin_yong?lang=zh").await.json();
    assert_eq!(zh["entries"][0]["label"], "江湖");
    let lower = get(&app, "/api/keywords/jin_yong?segment=lower").await.json();
    assert_eq!(lower["entries"][0]["term"], "作品");

    assert_eq!(
        get(&app, "/api/keywords/jin_yong?lang=fr").await.status,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(get(&app, "/api/keywords/nobody").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn posts_by_keyword() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    let r = get(&app, "/api/posts?author_id=jin_yong&keyword=%E6%B1%9F%E6%B9%96").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    let posts = body["posts"].as_array().unwrap();
    let ids: Vec<&str> = posts.iter().map(|p| p["post_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["j2", "j1"]);
    let scores: Vec<u64> = posts.iter().map(|p| p["curation_score"].as_u64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let tok = Tokenizer::bigram();
    for p in posts {
        assert!(tok.tokenize(p["text"].as_str().unwrap()).contains(&"江湖".to_string()));
        assert!(p["permalink"].as_str().unwrap().starts_with("https://"));
    }

    let none = get(&app, "/api/posts?author_id=jin_yong&keyword=zzz").await;
    assert_eq!(none.status, StatusCode::OK);
    assert!(none.json()["posts"].as_array().unwrap().is_empty());
    assert_eq!(
        get(&app, "/api/posts?author_id=nobody&keyword=x").await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(get(&app, "/api/posts?keyword=x").await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn reads_leave_state_hash_unchanged() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    post_json(&app, &tribute("jin_yong", "江湖再见")).await;
    let before = state.state_hash();
    for uri in [
        "/api/health",
        "/api/monuments",
        "/api/monuments/jin_yong/scene",
        "/api/keywords/jin_yong?lang=en",
        "/api/keywords/jin_yong?segment=lower",
        "/api/posts?author_id=jin_yong&keyword=%E6%B1%9F%E6%B9%96",
        "/api/monuments/nobody/scene",
        "/api/nothing",
    ] {
        let r = get(&app, uri).await;
        r.json();
        assert_eq!(state.state_hash(), before, "{uri}");
    }
}

#[tokio::test]
async fn approved_tribute_appends_and_matches() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    let r = post_json(&app, &tribute("jin_yong", "江湖再见")).await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["status"], "approved");
    assert_eq!(body["id"], "t000001");
    let matches = body["matches"].as_array().unwrap();
    assert_eq!(matches[0]["reference"], "江湖");
    assert_eq!(matches[0]["kind"], "keyword");
    assert!(matches.iter().all(|m| {
        let s = m["score"].as_f64().unwrap();
        (0.0..=1.0).contains(&s)
    }));
    assert_eq!(state.store().len(), 1);
    let inc = increments(&state);
    assert_eq!(inc["jin_yong"]["江湖"], 1.0);
    assert_eq!(inc["jin_yong"]["再见"], 1.0);

    let kw = get(&app, "/api/keywords/jin_yong").await.json();
    let entry = |t: &str| {
        kw["entries"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["term"] == t)
            .cloned()
    };
    assert_eq!(entry("江湖").unwrap()["weight"].as_f64().unwrap(), 1.5);
    assert_eq!(entry("再见").unwrap()["weight"].as_f64().unwrap(), 1.0);
}

#[tokio::test]
async fn blocklisted_tribute_rejected_without_state_change() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    let before = state.state_hash();
    let r = post_json(&app, &tribute("jin_yong", "加微信领取武侠秘籍")).await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["status"], "rejected");
    assert_eq!(body["rejection_reason"], "blocklist");
    assert_eq!(state.store().len(), 0);
    assert_eq!(state.state_hash(), before);

    let long = "念".repeat(500);
    let body = post_json(&app, &tribute("jin_yong", &long)).await.json();
    assert_eq!(body["rejection_reason"], "length");
    assert_eq!(state.state_hash(), before);
}

#[tokio::test]
async fn bad_requests() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    for body in [
        "",
        "{",
        "[]",
        "{\"author_id\":\"jin_yong\"}",
        "{\"author_id\":1,\"text\":\"x\"}",
    ] {
        let r = post_json(&app, body).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{body:?}");
        assert!(r.json()["error"].is_string());
    }
    let bad_lang = r#"{"author_id":"jin_yong","text":"x","lang":"fr"}"#;
    assert_eq!(post_json(&app, bad_lang).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(
        post_json(&app, &tribute("nobody", "走好")).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(state.store().len(), 0);
}

#[tokio::test]
async fn eleventh_submission_is_rate_limited() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state).layer(MockConnectInfo(SocketAddr::from(([10, 0, 0, 7], 4000))));
    for i in 0..10 {
        let r = post_json(&app, &tribute("jin_yong", &format!("走好{i}"))).await;
        assert_eq!(r.status, StatusCode::OK, "request {i}");
    }
    let r = post_json(&app, &tribute("jin_yong", "走好")).await;
    assert_eq!(r.status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(r.json()["retriable"], true);
    assert!(r.headers.contains_key(header::RETRY_AFTER));
    assert_eq!(state.store().len(), 10);
}

#[tokio::test]
async fn storage_failure_is_retriable() {
    let store = TributeStore::with_sink(Box::new(FailingSink), 1.0);
    let state = state_with(store, 10, true);
    let before = state.state_hash();
    let r = post_json(&app(&state), &tribute("jin_yong", "走好")).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(r.json()["retriable"], true);
    assert_eq!(state.state_hash(), before);
}

#[tokio::test]
async fn log_replay_matches_live_state() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("tributes.jsonl");
    let state = state_with(TributeStore::open(&log, 1.0).unwrap(), 0, true);
    let app = app(&state);
    for text in ["江湖再见", "加微信", "走好走好", "Rest in peace", "一路走好"] {
        post_json(&app, &tribute("jin_yong", text)).await;
    }
    let live = state.store().state().to_canonical_bytes();
    let entries = read_log(&log).unwrap();
    assert_eq!(entries.len(), 4);
    assert_eq!(DerivedState::replay(&entries, 1.0).to_canonical_bytes(), live);
}

#[tokio::test]
async fn scene_swap_is_versioned() {
    let state = state_with(memory_store(), 10, true);
    let app = app(&state);
    state.install_scene(scene(3), Vec::new()).unwrap();
    let r = get(&app, "/api/monuments").await;
    assert_eq!(r.json()["data_version"], 3);
    assert_eq!(r.headers[header::ETAG], "\"3\"");
    assert!(state.install_scene(scene(2), Vec::new()).is_err());
    assert_eq!(get(&app, "/api/monuments").await.json()["data_version"], 3);
}

#[tokio::test]
async fn cors_allowlist() {
    let state = state_with(memory_store(), 10, true);
    let app = router(state, &["http://localhost:5173".to_string()]).unwrap();
    let allowed = send(
        &app,
        Request::get("/api/monuments")
            .header(header::ORIGIN, "http://localhost:5173")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(
        allowed.headers[header::ACCESS_CONTROL_ALLOW_ORIGIN],
        "http://localhost:5173"
    );
    let other = send(
        &app,
        Request::get("/api/monuments")
            .header(header::ORIGIN, "http://evil.example")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert!(!other.headers.contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[tokio::test]
async fn from_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let doc = scene(4);
    let posts = curated(&doc);
    std::fs::write(dir.path().join("scene.json"), doc.to_canonical_json()).unwrap();
    stele_core::curation::write_curated(&dir.path().join("curated.jsonl"), &posts).unwrap();
    assert_eq!(read_curated(&dir.path().join("curated.jsonl")).unwrap().len(), 4);
    let config_path = dir.path().join("service.toml");
    std::fs::write(
        &config_path,
        "scene_path = \"scene.json\"\ncurated_path = \"curated.jsonl\"\ndata_dir = \"var\"\nsnapshot_every = 2\n",
    )
    .unwrap();
    let config = stele_service::ServiceConfig::load(&config_path).unwrap();
    let state = Arc::new(AppState::from_config(&config).unwrap());
    let app = app(&state);
    assert_eq!(get(&app, "/api/monuments").await.json()["data_version"], 4);
    post_json(&app, &tribute("jin_yong", "江湖")).await;
    post_json(&app, &tribute("jin_yong", "武侠")).await;
    assert!(config.snapshot_path().exists());
    let live = state.store().state().clone();
    drop(app);
    drop(state);
    let reopened = AppState::from_config(&config).unwrap();
    assert_eq!(reopened.store().state(), &live);
    assert_eq!(reopened.store().len(), 2);
}

#[tokio::test]
async fn folded_tributes_are_not_counted_twice() {
    let state = state_with(memory_store(), 0, false);
    let app = app(&state);
    let mut doc = scene(1);
    state.install_scene(doc.clone(), Vec::new()).unwrap();
    post_json(&app, &tribute("jin_yong", "江湖")).await;
    let weight = |v: serde_json::Value| {
        v["entries"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["term"] == "江湖")
            .unwrap()["weight"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(weight(get(&app, "/api/keywords/jin_yong").await.json()), 1.5);

    // A rebuild that already folded the first entry into its keyword weights.
    doc.data_version = 2;
    doc.tribute_entries = 1;
    for m in &mut doc.monuments {
        if m.spec.author_id == "jin_yong" {
            let inc = [("江湖".to_string(), 1.0)].into_iter().collect();
            m.spec.keywords_upper = m.spec.keywords_upper.with_increments(&inc, None);
        }
    }
    state.install_scene(doc, Vec::new()).unwrap();
    assert_eq!(weight(get(&app, "/api/keywords/jin_yong").await.json()), 1.5);
    post_json(&app, &tribute("jin_yong", "江湖")).await;
    assert_eq!(weight(get(&app, "/api/keywords/jin_yong").await.json()), 2.5);
}
