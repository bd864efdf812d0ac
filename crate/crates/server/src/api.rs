//! HTTP routes. Every response body is JSON; errors are `{error, message}`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query as QueryParams, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;
use vlaudit_core::clustering::{
    rerank_by_text, ClusterView, Filter, Histogram, SortKey, TextScore,
};
use vlaudit_core::eval::export_snapshot;
use vlaudit_core::slicing::recommend;
use vlaudit_core::validation::correlation_report;
use vlaudit_core::{
    Cluster, ClusteringConfig, Error as CoreError, Query, QueryContext, RecommendationKind, Slice,
};

use crate::provider::{ProviderError, TextEncoder};
use crate::session::{Search, Session, SessionStore};

pub struct AppState {
    pub store: SessionStore,
    pub encoder: TextEncoder,
    pub clustering: ClusteringConfig,
    pub default_k: usize,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/clusters", get(list_clusters))
        .route("/sessions/{id}/clusters/search", post(search_clusters))
        .route("/sessions/{id}/slices", post(create_slice))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .route("/slices/{sid}", get(get_slice).patch(patch_slice))
        .route("/slices/{sid}/recommendations", get(recommendations))
        .route("/slices/{sid}/correlation", get(correlation))
        .fallback(|| async { ApiError::NotFound("no such route".into()) })
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Provider(ProviderError),
    Internal(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn status(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Provider(_) => (StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }

    fn message(&self) -> String {
        match self {
            ApiError::BadRequest(m)
            | ApiError::NotFound(m)
            | ApiError::Conflict(m)
            | ApiError::Internal(m) => m.clone(),
            ApiError::Provider(e) => e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status();
        if status.is_server_error() {
            tracing::warn!(status = status.as_u16(), "{}", self.message());
        }
        let body = ErrorBody {
            error: code.to_string(),
            message: self.message(),
        };
        (status, Json(body)).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Empty(_) | CoreError::DegenerateFit => ApiError::Conflict(e.to_string()),
            CoreError::InvalidArgument(_)
            | CoreError::InvalidK { .. }
            | CoreError::UnknownId(_)
            | CoreError::OutsideWorkingSet(_)
            | CoreError::NotAMember(_)
            | CoreError::DuplicateId(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::ZeroNorm(_)
            | CoreError::NonFinite(_)
            | CoreError::DanglingId { .. }
            | CoreError::Schema(_) => ApiError::BadRequest(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        ApiError::Provider(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn session(app: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    app.store
        .get(id)
        .ok_or_else(|| ApiError::NotFound(format!("session {id:?} not found")))
}

fn slice_owner(app: &AppState, sid: &str) -> ApiResult<Arc<Session>> {
    app.store
        .owner_of(sid)
        .ok_or_else(|| ApiError::NotFound(format!("slice {sid:?} not found")))
}

fn slice_copy(session: &Session, sid: &str) -> ApiResult<Slice> {
    session
        .state
        .read()
        .unwrap()
        .slice(sid)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("slice {sid:?} not found")))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub baseline: String,
    pub augmented: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct SessionSummary<'a> {
    pub session_id: &'a str,
    pub created_at: DateTime<Utc>,
    pub query: &'a Query,
    pub clustering: ClusteringConfig,
    pub working_set_size: usize,
    pub cluster_count: usize,
    /// Indexed by `cluster_id`.
    pub clusters: &'a [Cluster],
    pub histograms: &'a [Histogram],
    /// Default display order: mean delta_c, highest first.
    pub ordering: Vec<usize>,
}

fn summary(session: &Session) -> Response {
    let default_view = ClusterView::build(&session.clusters, SortKey::default(), Vec::new(), None)
        .map(|v| v.ordering)
        .unwrap_or_default();
    Json(SessionSummary {
        session_id: &session.id,
        created_at: session.created_at,
        query: session.query(),
        clustering: session.config,
        working_set_size: session.ctx.len(),
        cluster_count: session.clusters.len(),
        clusters: &session.clusters,
        histograms: &session.histograms,
        ordering: default_view,
    })
    .into_response()
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let query = Query {
        baseline: req.baseline,
        augmented: req.augmented,
        k: req.k.unwrap_or(app.default_k),
    };
    let matrix = Arc::clone(&app.store.matrix);
    if query.k == 0 || query.k > matrix.len() {
        return Err(CoreError::InvalidK {
            k: query.k,
            count: matrix.len(),
        }
        .into());
    }
    query.validate()?;

    let mut texts = vec![query.baseline.clone()];
    if query.augmented != query.baseline {
        texts.push(query.augmented.clone());
    }
    let embeddings = app.encoder.encode(&texts, matrix.dim()).await?;
    let captions: HashMap<String, Vec<f32>> = texts.into_iter().zip(embeddings).collect();

    let id = Uuid::new_v4().to_string();
    let created_at = app.store.clock.now();
    let config = app.clustering;
    let session = tokio::task::spawn_blocking(move || -> vlaudit_core::Result<Session> {
        let b = &captions[&query.baseline];
        let a = &captions[&query.augmented];
        let ctx = QueryContext::build(matrix, query.clone(), b, a)?;
        Session::build(id, created_at, config, ctx, captions)
    })
    .await
    .map_err(|e| ApiError::Internal(format!("session build task failed: {e}")))??;

    let session = app.store.insert(session);
    tracing::info!(
        session = %session.id,
        k = session.ctx.len(),
        clusters = session.clusters.len(),
        "session created"
    );
    Ok((StatusCode::CREATED, summary(&session)).into_response())
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let session = session(&app, &id)?;
    Ok(summary(&session))
}

#[derive(Debug, Default, Deserialize)]
pub struct ClusterParams {
    pub sort: Option<String>,
    pub filters: Option<String>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct ClusterPage<'a> {
    pub session_id: &'a str,
    pub view: &'a ClusterView,
    pub total: usize,
    pub offset: usize,
    /// Clusters in view order, restricted to `offset..offset + limit`.
    pub clusters: Vec<&'a Cluster>,
}

async fn list_clusters(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    params: Result<QueryParams<ClusterParams>, QueryRejection>,
) -> ApiResult<Response> {
    let QueryParams(params) = params?;
    let session = session(&app, &id)?;
    let sort_key: SortKey = match params.sort.as_deref() {
        None | Some("") => SortKey::default(),
        Some(s) => s.parse()?,
    };
    let filters = Filter::parse_list(params.filters.as_deref().unwrap_or(""))?;

    let mut state = session.state.write().unwrap();
    let scores = state.search.as_ref().map(|s| s.scores.as_slice());
    if sort_key == SortKey::TextRelevance && scores.is_none() {
        return Err(ApiError::Conflict(
            "text_relevance ordering needs a prior cluster search".into(),
        ));
    }
    let view = ClusterView::build(&session.clusters, sort_key, filters, scores)?;
    state.view = view;

    let total = state.view.ordering.len();
    let offset = params.offset.unwrap_or(0).min(total);
    let end = params
        .limit
        .map_or(total, |l| offset.saturating_add(l).min(total));
    let page = ClusterPage {
        session_id: &session.id,
        view: &state.view,
        total,
        offset,
        clusters: state.view.ordering[offset..end]
            .iter()
            .map(|&c| &session.clusters[c])
            .collect(),
    };
    Ok(Json(page).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchResponse {
    pub text: String,
    pub ordering: Vec<usize>,
    pub scores: Vec<TextScore>,
}

async fn search_clusters(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    if req.text.trim().is_empty() {
        return Err(ApiError::BadRequest("search text is empty".into()));
    }
    let session = session(&app, &id)?;
    let embedding = match session.cached_caption(&req.text) {
        Some(e) => e,
        None => {
            let mut out = app
                .encoder
                .encode(std::slice::from_ref(&req.text), session.ctx.matrix().dim())
                .await?;
            let e = out.pop().expect("one embedding per text");
            session.cache_caption(req.text.clone(), e.clone());
            e
        }
    };
    let scores = rerank_by_text(&session.clusters, &session.ctx, &embedding)?;

    let mut state = session.state.write().unwrap();
    let filters = state.view.filters.clone();
    state.view = ClusterView::build(
        &session.clusters,
        SortKey::TextRelevance,
        filters,
        Some(&scores),
    )?;
    let response = SearchResponse {
        text: req.text.clone(),
        ordering: state.view.ordering.clone(),
        scores: scores.clone(),
    };
    state.search = Some(Search {
        text: req.text,
        scores,
    });
    Ok(Json(response).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSliceRequest {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub image_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatchSliceRequest {
    #[serde(default)]
    pub add: Vec<String>,
    #[serde(default)]
    pub remove: Vec<String>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SliceBody<'a> {
    pub session_id: &'a str,
    #[serde(flatten)]
    pub slice: &'a Slice,
}

fn slice_response(session_id: &str, slice: &Slice) -> Response {
    Json(SliceBody { session_id, slice }).into_response()
}

async fn create_slice(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<CreateSliceRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let session = session(&app, &id)?;
    let slice = Slice::create(
        &session.ctx,
        Uuid::new_v4().to_string(),
        &req.name,
        &req.image_ids,
        app.store.clock.now(),
    )?;
    let response = slice_response(&session.id, &slice);
    app.store.register_slice(&slice.slice_id, &session.id);
    session.state.write().unwrap().slices.push(slice);
    Ok((StatusCode::CREATED, response).into_response())
}

async fn get_slice(
    State(app): State<Arc<AppState>>,
    Path(sid): Path<String>,
) -> ApiResult<Response> {
    let session = slice_owner(&app, &sid)?;
    Ok(slice_response(&session.id, &slice_copy(&session, &sid)?))
}

async fn patch_slice(
    State(app): State<Arc<AppState>>,
    Path(sid): Path<String>,
    body: Result<Json<PatchSliceRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let session = slice_owner(&app, &sid)?;
    let now = app.store.clock.now();
    let mut state = session.state.write().unwrap();
    let slice = state
        .slice_mut(&sid)
        .ok_or_else(|| ApiError::NotFound(format!("slice {sid:?} not found")))?;
    slice.mutate(&session.ctx, &req.add, &req.remove, now)?;
    if let Some(name) = &req.name {
        slice.rename(name, now);
    }
    Ok(slice_response(&session.id, slice))
}

#[derive(Debug, Default, Deserialize)]
pub struct RecommendationParams {
    pub kind: Option<String>,
}

async fn recommendations(
    State(app): State<Arc<AppState>>,
    Path(sid): Path<String>,
    params: Result<QueryParams<RecommendationParams>, QueryRejection>,
) -> ApiResult<Response> {
    let QueryParams(params) = params?;
    let kind: RecommendationKind = match params.kind.as_deref() {
        None | Some("") => RecommendationKind::Similar,
        Some(k) => k.parse()?,
    };
    let session = slice_owner(&app, &sid)?;
    let slice = slice_copy(&session, &sid)?;
    if slice.is_empty() {
        return Err(ApiError::Conflict(
            "slice is empty; add images before requesting recommendations".into(),
        ));
    }
    Ok(Json(recommend(&slice, &session.clusters, kind)?).into_response())
}

async fn correlation(
    State(app): State<Arc<AppState>>,
    Path(sid): Path<String>,
) -> ApiResult<Response> {
    let session = slice_owner(&app, &sid)?;
    let slice = slice_copy(&session, &sid)?;
    if slice.is_empty() {
        return Err(ApiError::Conflict(
            "slice is empty; the correlation check needs a slice centroid".into(),
        ));
    }
    Ok(Json(correlation_report(&slice, &session.ctx)?).into_response())
}

async fn snapshot(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = session(&app, &id)?;
    let body = export_snapshot(&session.snapshot())?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}
