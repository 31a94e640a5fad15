//! HTTP/JSON API and the server-sent event feed.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use parking_lot::{Mutex, RwLock};
use prescribe_core::event_log::{AttrKind, Event, Schema, Value};
use prescribe_core::policy::{
    select_policy, CostModel, EvaluationReport, NetValueCurve, Policy, SelectedBy, Selection,
};
use prescribe_core::time::TimestampFormat;
use prescribe_core::Timestamp;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::engine::{CaseStatus, Engine, PolicyRecord, Provenance};
use crate::journal::Incoming;
use crate::ServiceError;

/// Relative tolerance for the client gain spot-check on policy commits.
pub const GAIN_TOLERANCE: f64 = 1e-6;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Mutex<Engine>>,
    pub curves: Arc<RwLock<Option<EvaluationReport>>>,
}

impl AppState {
    pub fn new(engine: Engine, curves: Option<EvaluationReport>) -> Self {
        AppState { engine: Arc::new(Mutex::new(engine)), curves: Arc::new(RwLock::new(curves)) }
    }
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::OutOfOrderEvent { .. }
            | ServiceError::CaseClosed(_)
            | ServiceError::PolicyMissing
            | ServiceError::NotApplicable(_) => StatusCode::CONFLICT,
            ServiceError::UnknownModel => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::UnknownCase(_) | ServiceError::NoRecommendation(_) | ServiceError::CurvesMissing => {
                StatusCode::NOT_FOUND
            }
            ServiceError::InvalidEvent(_) => StatusCode::BAD_REQUEST,
            ServiceError::InvalidPolicy(_) | ServiceError::GainMismatch { .. } | ServiceError::Policy(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ServiceError::OutOfOrderEvent { .. } => "OutOfOrderEvent",
            ServiceError::UnknownModel => "UnknownModel",
            ServiceError::PolicyMissing => "PolicyMissing",
            ServiceError::UnknownCase(_) => "UnknownCase",
            ServiceError::CaseClosed(_) => "CaseClosed",
            ServiceError::NotApplicable(_) => "NotApplicable",
            ServiceError::NoRecommendation(_) => "NoRecommendation",
            ServiceError::InvalidEvent(_) => "InvalidEvent",
            ServiceError::InvalidPolicy(_) => "InvalidPolicy",
            ServiceError::GainMismatch { .. } => "GainMismatch",
            ServiceError::CurvesMissing => "CurvesMissing",
            ServiceError::Policy(prescribe_core::policy::PolicyError::TargetUnreachable(_)) => "TargetUnreachable",
            ServiceError::Policy(_) => "PolicyError",
            ServiceError::Journal(_) => "Journal",
            ServiceError::Orf(_) => "Model",
            ServiceError::Io(_) => "Io",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.kind(), "message": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Body of `POST /cases/{id}/events`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventBody {
    pub activity: String,
    /// ISO-8601 string or epoch milliseconds.
    pub timestamp: serde_json::Value,
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub close: bool,
}

fn parse_timestamp(v: &serde_json::Value) -> Result<Timestamp, ServiceError> {
    match v {
        serde_json::Value::String(s) => {
            TimestampFormat::Iso8601.parse(s).map_err(|_| ServiceError::InvalidEvent(format!("bad timestamp `{s}`")))
        }
        serde_json::Value::Number(n) => {
            n.as_i64().map(Timestamp).ok_or_else(|| ServiceError::InvalidEvent(format!("bad timestamp {n}")))
        }
        other => Err(ServiceError::InvalidEvent(format!("bad timestamp {other}"))),
    }
}

fn typed_value(schema: &Schema, name: &str, v: &serde_json::Value) -> Result<Value, ServiceError> {
    let kind = schema.get(name).map(|a| a.kind);
    let bad = || ServiceError::InvalidEvent(format!("attribute `{name}`: unexpected value {v}"));
    Ok(match (v, kind) {
        (serde_json::Value::Null, _) => Value::Missing,
        (serde_json::Value::Number(n), Some(AttrKind::Categorical)) => Value::Cat(n.to_string()),
        (serde_json::Value::Number(n), _) => Value::Num(n.as_f64().ok_or_else(bad)?),
        (serde_json::Value::String(s), Some(AttrKind::Numeric)) => {
            if s.trim().is_empty() {
                Value::Missing
            } else {
                Value::Num(s.trim().parse().map_err(|_| bad())?)
            }
        }
        (serde_json::Value::String(s), _) => Value::Cat(s.clone()),
        (serde_json::Value::Bool(b), _) => Value::Cat(b.to_string()),
        _ => return Err(bad()),
    })
}

/// Converts a request body into a typed event using the model's schema.
pub fn to_incoming(schema: &Schema, case_id: &str, body: &EventBody) -> Result<Incoming, ServiceError> {
    let mut event = Event::new(case_id, body.activity.clone(), parse_timestamp(&body.timestamp)?);
    for (k, v) in &body.attributes {
        event.attributes.insert(k.clone(), typed_value(schema, k, v)?);
    }
    Ok(Incoming { event, close: body.close })
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&mut Engine) -> Result<T, ServiceError> + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&mut engine.lock()))
        .await
        .map_err(|e| ServiceError::Journal(format!("worker failed: {e}")))?
}

async fn post_event(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<EventBody>,
) -> ApiResult<serde_json::Value> {
    let out = blocking(&state, move |engine| {
        let schema = engine.snapshot().ok_or(ServiceError::UnknownModel)?.encoder.schema.clone();
        let incoming = to_incoming(&schema, &id, &body)?;
        let case = engine.ingest(incoming)?;
        Ok(serde_json::to_value(case).expect("case serializes"))
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Default, Deserialize)]
struct CloseBody {
    at: Option<serde_json::Value>,
}

async fn close_case(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<serde_json::Value> {
    // The body is optional; an empty one closes at the last event time.
    let body: CloseBody = if body.iter().all(u8::is_ascii_whitespace) {
        CloseBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::InvalidEvent(e.to_string()))?
    };
    let at = match body.at {
        Some(v) => Some(parse_timestamp(&v)?),
        None => None,
    };
    let out = blocking(&state, move |engine| {
        engine.close(&id, at)?;
        Ok(serde_json::to_value(engine.case(&id)).expect("case serializes"))
    })
    .await?;
    Ok(Json(out))
}

async fn get_case(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let engine = state.engine.lock();
    let case = engine.case(&id).ok_or_else(|| ServiceError::UnknownCase(id.clone()))?;
    Ok(Json(serde_json::to_value(case).expect("case serializes")))
}

async fn get_recommendation(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let engine = state.engine.lock();
    let r = engine.recommendation(&id)?;
    Ok(Json(serde_json::to_value(r).expect("recommendation serializes")))
}

#[derive(Debug, Deserialize)]
struct CasesQuery {
    status: Option<String>,
}

async fn list_cases(State(state): State<AppState>, Query(q): Query<CasesQuery>) -> ApiResult<serde_json::Value> {
    let status = match q.status {
        Some(s) => Some(s.parse::<CaseStatus>().map_err(ServiceError::InvalidEvent)?),
        None => None,
    };
    let engine = state.engine.lock();
    Ok(Json(serde_json::to_value(engine.cases(status)).expect("cases serialize")))
}

#[derive(Debug, Deserialize)]
struct CurvesQuery {
    v: Option<f64>,
    c: Option<f64>,
}

/// Curves as served to the UI: the evaluation report plus, when `v` and `c`
/// are given, the net-value curve for that cost model.
#[derive(Debug, Serialize, Deserialize)]
pub struct CurvesResponse {
    pub report: EvaluationReport,
    pub curve_hash: String,
    pub custom: Option<NetValueCurve>,
}

async fn get_curves(State(state): State<AppState>, Query(q): Query<CurvesQuery>) -> ApiResult<CurvesResponse> {
    let guard = state.curves.read();
    let report = guard.as_ref().ok_or(ServiceError::CurvesMissing)?;
    let custom = match (q.v, q.c) {
        (Some(v), Some(c)) => Some(report.net_curve(&CostModel::new(v, c)?)?),
        (None, None) => None,
        _ => return Err(ServiceError::InvalidPolicy("give both v and c".into())),
    };
    Ok(Json(CurvesResponse { curve_hash: report.curve_hash(), report: report.clone(), custom }))
}

async fn get_policy(State(state): State<AppState>) -> ApiResult<PolicyRecord> {
    let engine = state.engine.lock();
    engine.policy().cloned().map(Json).ok_or(ServiceError::PolicyMissing)
}

async fn policy_history(State(state): State<AppState>) -> ApiResult<Vec<PolicyRecord>> {
    Ok(Json(state.engine.lock().policy_history().to_vec()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionBody {
    Auto,
    TargetGain(f64),
}

/// Body of `POST /policy`: either a complete policy, or a cost model and a
/// selection rule applied to the served curves. `expected_gain` is the
/// client's own computation and must match the server's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCommit {
    pub provenance: Provenance,
    #[serde(default)]
    pub policy: Option<Policy>,
    #[serde(default)]
    pub cost: Option<CostModel>,
    #[serde(default)]
    pub selection: Option<SelectionBody>,
    #[serde(default)]
    pub expected_gain: Option<f64>,
}

fn build_policy(curves: Option<&EvaluationReport>, body: &PolicyCommit) -> Result<Policy, ServiceError> {
    let policy = match (&body.policy, &body.cost) {
        (Some(p), None) => {
            if let Some(report) = curves {
                if !p.curve_hash.is_empty() && p.curve_hash != report.curve_hash() {
                    return Err(ServiceError::InvalidPolicy("policy was selected on different curves".into()));
                }
            }
            p.clone()
        }
        (None, Some(cost)) => {
            let report = curves.ok_or(ServiceError::CurvesMissing)?;
            let net = report.net_curve(cost)?;
            let selection = match body.selection.clone().unwrap_or(SelectionBody::Auto) {
                SelectionBody::Auto => Selection::Auto,
                SelectionBody::TargetGain(g) => Selection::TargetGain(g),
            };
            let by = if matches!(selection, Selection::Auto) { SelectedBy::Auto } else { SelectedBy::User };
            select_policy(&net, &report.curve, selection, by, &report.curve_hash())?
        }
        _ => return Err(ServiceError::InvalidPolicy("give either `policy` or `cost`".into())),
    };
    if let Some(client) = body.expected_gain {
        let server = policy.expected_gain;
        if (client - server).abs() > GAIN_TOLERANCE * server.abs().max(1.0) {
            return Err(ServiceError::GainMismatch { client, server });
        }
    }
    Ok(policy)
}

async fn post_policy(State(state): State<AppState>, Json(body): Json<PolicyCommit>) -> ApiResult<PolicyRecord> {
    let policy = build_policy(state.curves.read().as_ref(), &body)?;
    let record = blocking(&state, move |engine| engine.commit_policy(policy, body.provenance)).await?;
    Ok(Json(record))
}

#[derive(Debug, Deserialize)]
struct AuditQuery {
    after: Option<u64>,
}

async fn get_audit(State(state): State<AppState>, Query(q): Query<AuditQuery>) -> ApiResult<serde_json::Value> {
    let engine = state.engine.lock();
    let after = q.after.unwrap_or(0);
    let items: Vec<_> = engine.audit().iter().filter(|r| r.seq > after).collect();
    Ok(Json(serde_json::to_value(items).expect("audit serializes")))
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let engine = state.engine.lock();
    Json(json!({
        "status": "ok",
        "model_loaded": engine.snapshot().is_some(),
        "policy_version": engine.policy_version(),
        "cases": engine.case_count(),
        "recommendations": engine.audit().len(),
        "curves_loaded": state.curves.read().is_some(),
    }))
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    after: Option<u64>,
}

fn sse_event(r: &crate::engine::Recommendation) -> SseEvent {
    SseEvent::default()
        .id(r.seq.to_string())
        .event("recommendation")
        .data(serde_json::to_string(r).expect("recommendation serializes"))
}

/// Recommendation feed. Resumes after `Last-Event-ID` (or `?after=`), so a
/// reconnecting client sees every recommendation exactly once.
async fn stream_feed(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<StreamQuery>,
) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let header_after = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|s| s.trim().parse().ok());
    let after = header_after.or(q.after).unwrap_or(0);
    let (backlog, rx) = state.engine.lock().subscribe(after);
    let last = backlog.last().map_or(after, |r| r.seq);
    let head = stream::iter(backlog.into_iter().map(|r| Ok(sse_event(&r))));
    let tail = stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(r) if r.seq <= last => continue,
                Ok(r) => {
                    let seq = r.seq;
                    return Some((Ok(sse_event(&r)), (rx, seq)));
                }
                // The client reconnects with Last-Event-ID and catches up
                // from the audit log.
                Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(head.chain(tail)).keep_alive(KeepAlive::default())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/cases", get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/events", post(post_event))
        .route("/cases/{id}/close", post(close_case))
        .route("/cases/{id}/recommendation", get(get_recommendation))
        .route("/curves", get(get_curves))
        .route("/policy", get(get_policy).post(post_policy))
        .route("/policy/history", get(policy_history))
        .route("/audit", get(get_audit))
        .route("/stream", get(stream_feed))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
