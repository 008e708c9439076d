//! HTTP API over a built monument scene and the live tribute log.
//!
//! Routes:
//!
//! - `GET  /api/health`
//! - `GET  /api/monuments`
//! - `GET  /api/monuments/{author_id}/scene`
//! - `GET  /api/keywords/{author_id}?lang=zh|en&segment=upper|lower`
//! - `GET  /api/posts?author_id=..&keyword=..&limit=..`
//! - `POST /api/tributes`

pub mod config;
pub mod state;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::to_bytes;
use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{ConnectInfo, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use stele_core::canonical;
use stele_core::curation::CuratedPost;
use stele_core::monument::{MonumentError, Side};
use stele_core::textfeat::{Segment, TextError};
use stele_core::tribute::{moderate, Lang, SimilarityMatch, Tribute, TributeError, Verdict};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use config::{ServiceConfig, BIND_ENV};
pub use state::{AppState, Clock, LoadedScene, SystemClock};

const MAX_BODY_BYTES: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Tribute(#[from] TributeError),
    #[error(transparent)]
    Scene(#[from] MonumentError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Curation(#[from] stele_core::curation::CurationError),
    #[error("scene version {offered} is older than the served version {current}")]
    StaleScene { current: u64, offered: u64 },
}

fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        canonical::to_vec(body),
    )
        .into_response()
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    retriable: bool,
}

fn error(status: StatusCode, message: &str) -> Response {
    json(
        status,
        &ErrorBody {
            error: message,
            retriable: false,
        },
    )
}

fn no_scene() -> Response {
    json(
        StatusCode::SERVICE_UNAVAILABLE,
        &ErrorBody {
            error: "no scene loaded",
            retriable: true,
        },
    )
}

fn unknown_author(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, &format!("unknown author {id:?}"))
}

fn etag(version: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{version}\"")).expect("ascii etag")
}

fn not_modified(headers: &HeaderMap, tag: &HeaderValue) -> bool {
    headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == "*" || t.trim() == tag))
}

fn cached(headers: &HeaderMap, version: u64, body: Vec<u8>) -> Response {
    let tag = etag(version);
    if not_modified(headers, &tag) {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, tag)]).into_response();
    }
    (
        StatusCode::OK,
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/json")),
            (header::ETAG, tag),
        ],
        body,
    )
        .into_response()
}

#[derive(Serialize)]
struct HealthBody {
    status: &'static str,
    data_version: Option<u64>,
    tributes: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    json(
        StatusCode::OK,
        &HealthBody {
            status: "ok",
            data_version: state.scene().map(|s| s.doc.data_version),
            tributes: state.store().len(),
        },
    )
}

#[derive(Serialize)]
struct MonumentSummary<'a> {
    order: usize,
    author_id: &'a str,
    display_name: &'a str,
    death_date: String,
    publication_count: u32,
    height_lower: f64,
    height_upper: f64,
    side: Side,
    position: [f64; 3],
    data_version: u64,
}

#[derive(Serialize)]
struct MonumentList<'a> {
    data_version: u64,
    built_at: String,
    monuments: Vec<MonumentSummary<'a>>,
}

async fn list_monuments(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let Some(scene) = state.scene() else {
        return no_scene();
    };
    let doc = &scene.doc;
    let body = MonumentList {
        data_version: doc.data_version,
        built_at: doc.built_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        monuments: doc
            .layout
            .iter()
            .zip(&doc.monuments)
            .map(|(slot, m)| MonumentSummary {
                order: slot.order,
                author_id: &m.spec.author_id,
                display_name: &m.spec.display_name,
                death_date: m.spec.death_date.to_string(),
                publication_count: m.spec.publication_count,
                height_lower: m.spec.height_lower,
                height_upper: m.spec.height_upper,
                side: slot.side,
                position: slot.position,
                data_version: m.spec.data_version,
            })
            .collect(),
    };
    cached(&headers, doc.data_version, canonical::to_vec(&body))
}

async fn monument_scene(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
    headers: HeaderMap,
) -> Response {
    let Ok(Path(author_id)) = path else {
        return error(StatusCode::BAD_REQUEST, "invalid author id");
    };
    let Some(scene) = state.scene() else {
        return no_scene();
    };
    match scene.fragment_bytes(&author_id) {
        Some(bytes) => cached(&headers, scene.doc.data_version, bytes.to_vec()),
        None => unknown_author(&author_id),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeywordQuery {
    lang: Option<Lang>,
    segment: Option<Segment>,
}

#[derive(Serialize)]
struct KeywordView {
    term: String,
    weight: f64,
    label: String,
    /// True when `lang=en` was requested but no translation exists.
    fallback: bool,
}

#[derive(Serialize)]
struct KeywordsBody {
    author_id: String,
    segment: Segment,
    lang: Lang,
    data_version: u64,
    entries: Vec<KeywordView>,
}

async fn keywords(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
    query: Result<Query<KeywordQuery>, QueryRejection>,
) -> Response {
    let Ok(Path(author_id)) = path else {
        return error(StatusCode::BAD_REQUEST, "invalid author id");
    };
    let Ok(Query(query)) = query else {
        return error(
            StatusCode::BAD_REQUEST,
            "lang must be zh or en; segment must be lower or upper",
        );
    };
    let Some(scene) = state.scene() else {
        return no_scene();
    };
    let Some(monument) = scene.doc.monument(&author_id) else {
        return unknown_author(&author_id);
    };
    let lang = query.lang.unwrap_or(state.default_lang());
    let segment = query.segment.unwrap_or(Segment::Upper);
    let table = state.translations();
    let set = match segment {
        Segment::Lower => monument.spec.keywords_lower.clone(),
        Segment::Upper => {
            let inc = state.store().increments_since(scene.doc.tribute_entries, &author_id);
            monument.spec.keywords_upper.with_increments(&inc, Some(table))
        }
    };
    let entries = set
        .entries
        .into_iter()
        .map(|e| {
            let (label, fallback) = match lang {
                Lang::Zh => (e.term.clone(), false),
                Lang::En => match e.label_en.as_deref().or_else(|| table.get(&e.term)) {
                    Some(l) => (l.to_owned(), false),
                    None => (e.term.clone(), true),
                },
            };
            KeywordView {
                term: e.term,
                weight: e.weight,
                label,
                fallback,
            }
        })
        .collect();
    json(
        StatusCode::OK,
        &KeywordsBody {
            author_id,
            segment,
            lang,
            data_version: scene.doc.data_version,
            entries,
        },
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostsQuery {
    author_id: Option<String>,
    keyword: Option<String>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct PostsBody<'a> {
    author_id: &'a str,
    keyword: Option<&'a str>,
    posts: Vec<&'a CuratedPost>,
}

async fn posts(State(state): State<Arc<AppState>>, query: Result<Query<PostsQuery>, QueryRejection>) -> Response {
    let Ok(Query(query)) = query else {
        return error(StatusCode::BAD_REQUEST, "invalid query");
    };
    let Some(author_id) = query.author_id.as_deref() else {
        return error(StatusCode::BAD_REQUEST, "author_id is required");
    };
    let Some(scene) = state.scene() else {
        return no_scene();
    };
    if !scene.has_author(author_id) {
        return unknown_author(author_id);
    }
    let keyword = query.keyword.as_deref().map(stele_core::textfeat::nfc);
    let matching = scene
        .posts(author_id)
        .iter()
        .filter(|p| keyword.as_ref().is_none_or(|k| p.keywords.iter().any(|t| t == k)))
        .take(query.limit.unwrap_or(50))
        .collect();
    json(
        StatusCode::OK,
        &PostsBody {
            author_id,
            keyword: keyword.as_deref(),
            posts: matching,
        },
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TributeRequest {
    author_id: String,
    text: String,
    #[serde(default)]
    lang: Option<Lang>,
}

#[derive(Serialize)]
struct TributeResponse {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rejection_reason: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
    matches: Vec<SimilarityMatch>,
}

#[derive(Serialize)]
struct RateLimitedBody {
    error: &'static str,
    retriable: bool,
    retry_after_secs: u64,
}

async fn submit_tribute(State(state): State<Arc<AppState>>, request: Request) -> Response {
    let client = request
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map(|c| c.0.ip().to_string())
        .unwrap_or_else(|| "local".to_owned());
    let Ok(bytes) = to_bytes(request.into_body(), MAX_BODY_BYTES).await else {
        return error(StatusCode::PAYLOAD_TOO_LARGE, "request body too large");
    };
    let body: TributeRequest = match serde_json::from_slice(&bytes) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, &format!("malformed tribute: {e}")),
    };
    if let Err(limited) = state.check_rate(&client) {
        let secs = limited.retry_after.as_secs_f64().ceil().max(1.0) as u64;
        let mut response = json(
            StatusCode::TOO_MANY_REQUESTS,
            &RateLimitedBody {
                error: "rate limit exceeded",
                retriable: true,
                retry_after_secs: secs,
            },
        );
        response
            .headers_mut()
            .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        return response;
    }
    let Some(scene) = state.scene() else {
        return no_scene();
    };
    if !scene.has_author(&body.author_id) {
        return unknown_author(&body.author_id);
    }
    let lang = body.lang.unwrap_or(state.default_lang());
    let text = stele_core::textfeat::nfc(&body.text);
    if let Verdict::Rejected { rule, detail } = moderate(&text, lang, state.gate()) {
        return json(
            StatusCode::OK,
            &TributeResponse {
                status: "rejected",
                id: None,
                rejection_reason: Some(rule.as_str()),
                detail: Some(detail),
                matches: Vec::new(),
            },
        );
    }
    let terms = state.tokenizer().tokenize(&text);
    let id = {
        let mut store = state.store();
        let id = store.next_id();
        let tribute = Tribute::new(id.clone(), &body.author_id, text.clone(), lang, state.clock().now())
            .approve(terms)
            .expect("new tributes are pending");
        if let Err(e) = store.append(tribute) {
            tracing::error!(error = %e, "tribute append failed");
            return json(
                StatusCode::SERVICE_UNAVAILABLE,
                &ErrorBody {
                    error: "tribute could not be stored; try again",
                    retriable: e.is_retriable(),
                },
            );
        }
        state.after_append(&store);
        id
    };
    let matches = scene
        .index()
        .match_similar(&text, &body.author_id, state.match_top_k())
        .unwrap_or_default();
    json(
        StatusCode::OK,
        &TributeResponse {
            status: "approved",
            id: Some(id),
            rejection_reason: None,
            detail: None,
            matches,
        },
    )
}

async fn log_requests(request: Request, next: Next) -> Response {
    let method = request.method().clone();
    let path = request.uri().path().to_owned();
    let started = Instant::now();
    let response = next.run(request).await;
    tracing::info!(
        target: "stele::http",
        %method,
        path,
        status = response.status().as_u16(),
        elapsed_us = started.elapsed().as_micros() as u64,
        "request"
    );
    response
}

async fn fallback() -> Response {
    error(StatusCode::NOT_FOUND, "no such route")
}

/// Builds the API router. `cors_origins` lists the origins allowed to call it from a browser.
pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Result<Router, ServiceError> {
    let mut app = Router::new()
        .route("/api/health", get(health))
        .route("/api/monuments", get(list_monuments))
        .route("/api/monuments/{author_id}/scene", get(monument_scene))
        .route("/api/keywords/{author_id}", get(keywords))
        .route("/api/posts", get(posts))
        .route("/api/tributes", post(submit_tribute))
        .fallback(fallback)
        .with_state(state)
        .layer(middleware::from_fn(log_requests));
    if !cors_origins.is_empty() {
        let origins = cors_origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::Config(format!("invalid CORS origin {o:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE, header::IF_NONE_MATCH])
                .expose_headers([header::ETAG, header::RETRY_AFTER]),
        );
    }
    Ok(app)
}

/// Runs the service until `shutdown` resolves. On unix, SIGHUP reloads the scene.
pub async fn serve<F>(config: ServiceConfig, shutdown: F) -> Result<(), ServiceError>
where
    F: Future<Output = ()> + Send + 'static,
{
    let addr = config.bind_addr()?;
    let state = Arc::new(AppState::from_config(&config)?);
    let app = router(state.clone(), &config.cors_origins)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Io {
            path: PathBuf::from(&config.bind),
            source,
        })?;
    tracing::info!(%addr, "listening");
    spawn_reloader(state.clone(), config.clone());
    axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|source| ServiceError::Io {
            path: PathBuf::from(&config.bind),
            source,
        })?;
    let store = state.store();
    if config.snapshot_every > 0 && !store.is_empty() {
        store.write_snapshot(&config.snapshot_path())?;
    }
    Ok(())
}

#[cfg(unix)]
fn spawn_reloader(state: Arc<AppState>, config: ServiceConfig) {
    use tokio::signal::unix::{signal, SignalKind};
    tokio::spawn(async move {
        let Ok(mut hup) = signal(SignalKind::hangup()) else {
            return;
        };
        while hup.recv().await.is_some() {
            match state.reload(&config.scene_path, config.curated_path.as_deref()) {
                Ok(v) => tracing::info!(data_version = v, "scene reloaded"),
                Err(e) => tracing::error!(error = %e, "scene reload failed"),
            }
        }
    });
}

#[cfg(not(unix))]
fn spawn_reloader(_: Arc<AppState>, _: ServiceConfig) {}
