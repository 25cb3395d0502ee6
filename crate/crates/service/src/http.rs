//! JSON HTTP API.
//!
//! | route | purpose |
//! |---|---|
//! | `GET /sets` | confusion sets |
//! | `POST /suggest` | ranked examples for a set |
//! | `GET /examples/{set}/{word}?offset&limit` | readmore paging, `offset < 5` |
//! | `POST /events/readmore` | log a readmore click |
//! | `POST /answers`, `GET /answers?session&set` | learner translations |

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clarify_core::selection::{ExampleRecord, ModelKind, SuggestionResult};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::error;

use crate::engine::{Engine, SuggestRequest};
use crate::error::Error;
use crate::events::{now_ms, AnswerRecord, EventLog, LogRecord, ReadmoreEvent, READMORE_CAP};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub log: Arc<EventLog>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sets", get(list_sets))
        .route("/suggest", post(suggest))
        .route("/examples/{set}/{word}", get(examples))
        .route("/events/readmore", post(readmore))
        .route("/answers", post(submit_answer).get(fetch_answer))
        .with_state(state)
}

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let status = match &self {
            Error::UnknownSet(_) | Error::UnknownWord { .. } | Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::BadRequest(_) => StatusCode::BAD_REQUEST,
            Error::NotTrained(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, Error>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| Error::BadRequest(e.body_text()))
}

fn query<T>(payload: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    payload.map(|Query(v)| v).map_err(|e| Error::BadRequest(e.body_text()))
}

/// Runs CPU-bound engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| Error::Io {
        path: "<worker>".into(),
        source: std::io::Error::other(e),
    })?
}

async fn list_sets(State(state): State<AppState>) -> Json<serde_json::Value> {
    let sets: Vec<_> = state.engine.sets().collect();
    Json(json!(sets))
}

async fn suggest(
    State(state): State<AppState>,
    payload: Result<Json<SuggestRequest>, JsonRejection>,
) -> ApiResult<Json<SuggestionResult>> {
    let req = body(payload)?;
    let engine = state.engine.clone();
    blocking(move || engine.suggest(&req)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    #[serde(default)]
    offset: usize,
    #[serde(default = "one")]
    limit: usize,
    #[serde(default)]
    model: Option<ModelKind>,
    #[serde(default)]
    l1_grouped: Option<bool>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Page {
    pub set: String,
    pub word: String,
    pub offset: usize,
    /// Examples available for this word, at most the readmore cap.
    pub total: usize,
    pub examples: Vec<ExampleRecord>,
}

async fn examples(
    State(state): State<AppState>,
    Path((set, word)): Path<(String, String)>,
    q: Result<Query<PageQuery>, QueryRejection>,
) -> ApiResult<Json<Page>> {
    let q = query(q)?;
    let confusion = state.engine.set(&set)?;
    if confusion.word(&word).is_none() {
        return Err(Error::UnknownWord { set, word });
    }
    if q.offset >= READMORE_CAP {
        return Err(Error::BadRequest(format!("offset must be below {READMORE_CAP}")));
    }
    if q.limit == 0 {
        return Err(Error::BadRequest("limit must be at least 1".into()));
    }
    let engine = state.engine.clone();
    let model = q.model.unwrap_or(ModelKind::Bilstm);
    let set_id = set.clone();
    let source = blocking(move || engine.page_source(&set_id, model, q.l1_grouped)).await?;
    let listed = source.word(&word).map(|w| w.examples.as_slice()).unwrap_or_default();
    let end = (q.offset + q.limit).min(READMORE_CAP).min(listed.len());
    let examples = listed.get(q.offset..end).unwrap_or_default().to_vec();
    Ok(Json(Page {
        set,
        word,
        offset: q.offset,
        total: listed.len(),
        examples,
    }))
}

#[derive(Debug, Deserialize)]
struct ReadmoreBody {
    session: String,
    set: String,
    word: String,
    revealed_count: usize,
}

async fn readmore(
    State(state): State<AppState>,
    payload: Result<Json<ReadmoreBody>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let b = body(payload)?;
    let event = ReadmoreEvent {
        session: b.session,
        set: b.set,
        word: b.word,
        revealed_count: b.revealed_count,
        timestamp_ms: now_ms(),
    };
    event.validate()?;
    let set = state.engine.set(&event.set)?;
    if set.word(&event.word).is_none() {
        return Err(Error::UnknownWord {
            set: event.set,
            word: event.word,
        });
    }
    let log = state.log.clone();
    blocking(move || log.append(&LogRecord::Readmore(event))).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct AnswerBody {
    session: String,
    set: String,
    text: String,
}

async fn submit_answer(
    State(state): State<AppState>,
    payload: Result<Json<AnswerBody>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let b = body(payload)?;
    if b.session.is_empty() || b.text.trim().is_empty() {
        return Err(Error::BadRequest("session and text must not be empty".into()));
    }
    state.engine.set(&b.set)?;
    let record = AnswerRecord {
        session: b.session,
        set: b.set,
        text: b.text,
        timestamp_ms: now_ms(),
    };
    let log = state.log.clone();
    blocking(move || log.append(&LogRecord::Answer(record))).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct AnswerQuery {
    session: String,
    set: String,
}

async fn fetch_answer(
    State(state): State<AppState>,
    q: Result<Query<AnswerQuery>, QueryRejection>,
) -> ApiResult<Json<AnswerRecord>> {
    let q = query(q)?;
    state.engine.set(&q.set)?;
    let log = state.log.clone();
    let (session, set) = (q.session.clone(), q.set.clone());
    blocking(move || log.latest_answer(&session, &set))
        .await?
        .map(Json)
        .ok_or_else(|| Error::NotFound(format!("no answer for session {:?} in set {:?}", q.session, q.set)))
}
