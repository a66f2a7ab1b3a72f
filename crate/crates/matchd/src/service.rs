//! HTTP matching service.
//!
//! Reads go through an immutable [`Snapshot`] (index plus the documents it
//! was built from) behind an `Arc`; `/reindex` builds the next snapshot off
//! to the side and replaces the pointer in one step, so a request sees
//! exactly one generation. Ingest and reindex share a single writer lock.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use talentmatch_core::corpus::{Document, DocumentKind};
use talentmatch_core::matchindex::{build_index, recommend, EmbeddingIndex, Filter};
use talentmatch_core::textprep::{normalize, TokenizerModel};
use talentmatch_core::training::Checkpoint;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::ServiceConfig;
use crate::formats::{parse_jsonl, read_jsonl, load_tokenizer};
use crate::{checkpoint, index_file};

pub const SNIPPET_CHARS: usize = 160;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

fn body_error(rejection: BytesRejection) -> ApiError {
    if rejection.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", rejection.body_text())
    } else {
        ApiError::new(StatusCode::BAD_REQUEST, "UnreadableBody", rejection.body_text())
    }
}

/// One index generation together with the documents it covers.
#[derive(Debug)]
pub struct Snapshot {
    pub index: EmbeddingIndex,
    pub documents: BTreeMap<String, Document>,
}

struct Inner {
    tokenizer: TokenizerModel,
    checkpoint: Checkpoint,
    model_id: String,
    default_k: usize,
    max_request_bytes: usize,
    cors_origin: Option<String>,
    snapshot: RwLock<Arc<Snapshot>>,
    staged: Mutex<Vec<Document>>,
    writer: tokio::sync::Mutex<()>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Wraps already-loaded artifacts. `index` must have been built with
    /// `checkpoint`.
    pub fn new(
        tokenizer: TokenizerModel,
        checkpoint: Checkpoint,
        documents: Vec<Document>,
        index: EmbeddingIndex,
        default_k: usize,
    ) -> anyhow::Result<Self> {
        anyhow::ensure!(default_k >= 1, "default_k must be at least 1");
        anyhow::ensure!(
            checkpoint.config.vocab_size == tokenizer.vocab_size(),
            "checkpoint vocab {} does not match tokenizer vocab {}",
            checkpoint.config.vocab_size,
            tokenizer.vocab_size()
        );
        anyhow::ensure!(
            index.dimension() == checkpoint.config.d_model,
            "index dimension {} does not match model dimension {}",
            index.dimension(),
            checkpoint.config.d_model
        );
        let model_id = checkpoint::checkpoint_id(&checkpoint);
        let documents = documents.into_iter().map(|d| (d.id.clone(), d)).collect();
        Ok(Self {
            inner: Arc::new(Inner {
                tokenizer,
                checkpoint,
                model_id,
                default_k,
                max_request_bytes: 1 << 20,
                cors_origin: None,
                snapshot: RwLock::new(Arc::new(Snapshot { index, documents })),
                staged: Mutex::new(Vec::new()),
                writer: tokio::sync::Mutex::new(()),
            }),
        })
    }

    /// A service with no documents yet (generation 0).
    pub fn empty(tokenizer: TokenizerModel, checkpoint: Checkpoint, default_k: usize) -> anyhow::Result<Self> {
        let index = EmbeddingIndex::empty(checkpoint.config.d_model, 0);
        Self::new(tokenizer, checkpoint, Vec::new(), index, default_k)
    }

    pub fn load(config: &ServiceConfig) -> anyhow::Result<Self> {
        let tokenizer = load_tokenizer(&config.tokenizer)?;
        let checkpoint = checkpoint::load(&config.checkpoint)?;
        let index = index_file::load(&config.index)?;
        let documents: Vec<Document> = read_jsonl(&config.documents)?;
        let mut state = Self::new(tokenizer, checkpoint, documents, index, config.default_k)?;
        let inner = Arc::get_mut(&mut state.inner).expect("fresh state");
        inner.max_request_bytes = config.max_request_bytes;
        inner.cors_origin = config.cors_origin.clone();
        Ok(state)
    }

    pub fn with_request_limit(mut self, bytes: usize) -> Self {
        Arc::get_mut(&mut self.inner).expect("limit set before sharing").max_request_bytes = bytes;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.inner.model_id
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.inner.snapshot.read().expect("snapshot lock"))
    }
}

pub fn router(state: AppState) -> Router {
    let origin = match &state.inner.cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).unwrap_or(HeaderValue::from_static("null"))),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/documents", post(ingest))
        .route("/documents/{id}", get(get_document))
        .route("/reindex", post(reindex))
        .route("/recommend", post(recommend_handler))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed on this endpoint")
        })
        .layer(DefaultBodyLimit::max(state.inner.max_request_bytes))
        .layer(cors)
        .with_state(state)
}

/// Binds, reports the address on stderr and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let listen = config.listen;
    let state = tokio::task::spawn_blocking(move || AppState::load(&config)).await??;
    let listener = tokio::net::TcpListener::bind(listen).await?;
    eprintln!("matchd listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_generation: u64,
    pub docs: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let snap = state.snapshot();
    Json(Health { status: "ok".into(), index_generation: snap.index.generation(), docs: snap.index.len() })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Rejected {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestResponse {
    pub accepted: usize,
    pub rejected: Vec<Rejected>,
}

async fn ingest(State(state): State<AppState>, body: Result<Bytes, BytesRejection>) -> Result<Json<IngestResponse>, ApiError> {
    let body = body.map_err(body_error)?;
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidUtf8", e.to_string()))?;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (line, parsed) in parse_jsonl::<Document>(text) {
        match parsed {
            Ok(d) if d.id.trim().is_empty() => rejected.push(Rejected { line, reason: "empty id".into() }),
            Ok(d) => accepted.push(d),
            Err(reason) => rejected.push(Rejected { line, reason }),
        }
    }
    let _writer = state.inner.writer.lock().await;
    let n = accepted.len();
    state.inner.staged.lock().expect("staging lock").extend(accepted);
    Ok(Json(IngestResponse { accepted: n, rejected }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReindexResponse {
    pub index_generation: u64,
    pub docs: usize,
}

/// Folds staged documents into the document set (a staged id replaces an
/// existing one) and builds the next generation from all of them.
async fn reindex(State(state): State<AppState>) -> Result<Json<ReindexResponse>, ApiError> {
    let _writer = state.inner.writer.lock().await;
    let staged = std::mem::take(&mut *state.inner.staged.lock().expect("staging lock"));
    let current = state.snapshot();
    let worker = state.clone();
    let staged_copy = staged.clone();
    let built = tokio::task::spawn_blocking(move || {
        let mut documents = current.documents.clone();
        for d in staged_copy {
            documents.insert(d.id.clone(), d);
        }
        let generation = current.index.generation() + 1;
        let docs: Vec<Document> = documents.values().cloned().collect();
        let index = if docs.is_empty() {
            Ok(EmbeddingIndex::empty(worker.inner.checkpoint.config.d_model, generation))
        } else {
            build_index(&docs, &worker.inner.checkpoint, &worker.inner.tokenizer, generation)
        };
        index.map(|index| Snapshot { index, documents })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "ReindexFailed", e.to_string()));

    match built {
        Ok(Ok(next)) => {
            let response = ReindexResponse { index_generation: next.index.generation(), docs: next.index.len() };
            *state.inner.snapshot.write().expect("snapshot lock") = Arc::new(next);
            Ok(Json(response))
        }
        failed => {
            let mut pending = state.inner.staged.lock().expect("staging lock");
            let later = std::mem::replace(&mut *pending, staged);
            pending.extend(later);
            Err(match failed {
                Ok(Err(e)) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ReindexFailed", e.to_string()),
                Err(e) => e,
                Ok(Ok(_)) => unreachable!(),
            })
        }
    }
}

async fn get_document(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Document>, ApiError> {
    state
        .snapshot()
        .documents
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownDocument", format!("no document with id {id:?}")))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vacancy_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vacancy_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<Filter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedCv {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
    pub language: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub matches: Vec<RecommendedCv>,
    pub model: String,
    pub index_generation: u64,
}

fn snippet(text: &str) -> String {
    normalize(text).chars().take(SNIPPET_CHARS).collect()
}

async fn recommend_handler(State(state): State<AppState>, body: Result<Bytes, BytesRejection>) -> Result<Json<RecommendResponse>, ApiError> {
    let body = body.map_err(body_error)?;
    let req: RecommendRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedJson", e.to_string()))?;
    let snap = state.snapshot();
    let text = match (&req.vacancy_text, &req.vacancy_id) {
        (Some(t), None) => t.clone(),
        (None, Some(id)) => match snap.documents.get(id) {
            Some(d) if d.kind == DocumentKind::Vacancy => d.text.clone(),
            _ => return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownVacancyId", format!("no vacancy with id {id:?}"))),
        },
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "BothOrNeitherQuery",
                "give exactly one of vacancy_text and vacancy_id",
            ))
        }
    };
    if normalize(&text).is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "EmptyText", "vacancy text is empty after normalization"));
    }
    let k = req.k.unwrap_or(state.inner.default_k);
    if k == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "InvalidK", "k must be at least 1"));
    }
    let filter = req.filter.unwrap_or_default();
    let matches = recommend(&snap.index, &text, &state.inner.tokenizer, &state.inner.checkpoint, k, &filter)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "RecommendFailed", e.to_string()))?;
    let matches = matches
        .into_iter()
        .map(|m| {
            let doc = snap.documents.get(&m.doc_id);
            let language = doc.map(|d| d.language.clone()).or_else(|| snap.index.get(&m.doc_id).map(|e| e.language.clone()));
            RecommendedCv {
                snippet: doc.map(|d| snippet(&d.text)).unwrap_or_default(),
                language: language.unwrap_or_default(),
                doc_id: m.doc_id,
                score: m.score,
                rank: m.rank,
            }
        })
        .collect();
    Ok(Json(RecommendResponse { matches, model: state.inner.model_id.clone(), index_generation: snap.index.generation() }))
}
