//! HTTP API.
//!
//! Every request carries `Authorization: Bearer <token>`; the token maps to a
//! trainee or instructor role. Trainees never receive the patient's inner
//! monologue, scores, directions or safety trails.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use vpsim_core::session::{SurveyResponse, TurnError};
use vpsim_core::{Condition, PatientProfile, Turn, View};

use crate::config::Role;
use crate::manager::{ManagerError, SessionManager, TurnOutcome};

pub struct AppState {
    pub manager: SessionManager,
    pub tokens: BTreeMap<String, Role>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/cases", get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/close", post(close_session))
        .route("/sessions/{id}/survey", post(post_survey))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<ManagerError> for ApiError {
    fn from(e: ManagerError) -> Self {
        let msg = e.to_string();
        match e {
            ManagerError::UnknownCase(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_case", msg),
            ManagerError::UnknownSession(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_session", msg),
            ManagerError::Turn(t) => match t {
                TurnError::SessionClosed => ApiError::new(StatusCode::CONFLICT, "session_closed", msg),
                TurnError::ConcurrentTurn => ApiError::new(StatusCode::CONFLICT, "turn_in_flight", msg),
                TurnError::InvalidInput(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", msg),
                TurnError::Evaluation(_) | TurnError::Safety(_) => {
                    ApiError::new(StatusCode::BAD_GATEWAY, "turn_failed", msg)
                }
                TurnError::Direction(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "turn_failed", msg),
            },
            ManagerError::Store(crate::store::StoreError::InvalidId(_)) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_session", msg)
            }
            ManagerError::Store(_) | ManagerError::Replay(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", msg)
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn role(state: &AppState, headers: &HeaderMap) -> ApiResult<Role> {
    let token = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    match token.and_then(|t| state.tokens.get(t)) {
        Some(r) => Ok(*r),
        None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn case_summary(c: &PatientProfile) -> Value {
    json!({
        "id": c.id,
        "name": c.name,
        "patient_type": c.patient_type,
        "gender": c.gender,
        "age": c.age,
        "situation": c.situation,
        "chief_complaint": c.chief_complaint,
        "review_status": c.review_status,
    })
}

/// What a trainee sees before starting: the chart, not the persona notes.
fn case_card(c: &PatientProfile) -> Value {
    json!({
        "id": c.id,
        "name": c.name,
        "patient_type": c.patient_type,
        "gender": c.gender,
        "age": c.age,
        "height": c.height,
        "weight": c.weight,
        "religion": c.religion,
        "situation": c.situation,
        "chief_complaint": c.chief_complaint,
        "main_symptom": c.main_symptom,
        "history_present_illness": c.history_present_illness,
        "social_history": c.social_history,
        "past_medical_history": c.past_medical_history,
        "past_surgical_history": c.past_surgical_history,
        "family_medical_history": c.family_medical_history,
        "allergies": c.allergies,
        "immunization": c.immunization,
        "medication": c.medication,
        "primary_diagnosis": c.primary_diagnosis,
    })
}

async fn list_cases(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    role(&st, &headers)?;
    let cases: Vec<Value> = st.manager.cases().cases.iter().map(case_summary).collect();
    Ok(Json(json!({ "cases": cases })))
}

async fn get_case(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let r = role(&st, &headers)?;
    let case = st
        .manager
        .cases()
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_case", format!("unknown case {id:?}")))?;
    Ok(Json(match r {
        Role::Trainee => case_card(case),
        Role::Instructor => serde_json::to_value(case).unwrap_or(Value::Null),
    }))
}

fn visible_turn(t: &Turn) -> Value {
    json!({"verbal": t.text, "non_verbal": t.non_verbal})
}

#[derive(Deserialize)]
struct CreateBody {
    case_id: String,
    #[serde(default)]
    condition: Option<String>,
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(body): Json<CreateBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    role(&st, &headers)?;
    let condition = match body.condition.as_deref() {
        None => Condition::Dynamic,
        Some(s) => Condition::parse(s).ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", format!("unknown condition {s:?}"))
        })?,
    };
    let state = st.clone();
    let created = blocking(move || Ok(state.manager.create(&body.case_id, condition)?)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": created.session_id,
            "opening_turn": visible_turn(&created.turns[0]),
        })),
    ))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

pub fn message_response(out: &TurnOutcome, r: Role) -> Value {
    let mut v = json!({
        "turn_index": out.turn_index,
        "vp_turn": visible_turn(&out.vp),
        "session_status": if out.closed { "closed" } else { "open" },
    });
    if r == Role::Instructor {
        let m = v.as_object_mut().expect("object");
        m.insert("score".into(), serde_json::to_value(out.nurse.score).unwrap_or(Value::Null));
        m.insert("direction".into(), serde_json::to_value(&out.vp.direction).unwrap_or(Value::Null));
        m.insert("safety_attempts".into(), json!(out.vp.safety_attempts));
        m.insert("fallback".into(), json!(out.vp.fallback));
        m.insert("inner_monologue".into(), json!(out.vp.inner_monologue));
    }
    v
}

async fn post_message(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<MessageBody>,
) -> ApiResult<Json<Value>> {
    let r = role(&st, &headers)?;
    let state = st.clone();
    let out = blocking(move || Ok(state.manager.post_message(&id, &body.text)?)).await?;
    Ok(Json(message_response(&out, r)))
}

#[derive(Deserialize)]
struct ViewQuery {
    view: Option<String>,
}

async fn get_session(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> ApiResult<Json<Value>> {
    let r = role(&st, &headers)?;
    let view = match q.view.as_deref() {
        None => match r {
            Role::Trainee => View::Trainee,
            Role::Instructor => View::Instructor,
        },
        Some(s) => View::parse(s)
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", format!("unknown view {s:?}")))?,
    };
    if view == View::Instructor && r != Role::Instructor {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "instructor view requires an instructor token"));
    }
    let state = st.clone();
    let session = blocking(move || Ok(state.manager.state(&id)?)).await?;
    Ok(Json(serde_json::to_value(session.export(view)).unwrap_or(Value::Null)))
}

async fn close_session(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    role(&st, &headers)?;
    let state = st.clone();
    let s = blocking(move || Ok(state.manager.close(&id)?)).await?;
    Ok(Json(json!({"session_id": s.session_id, "status": s.status})))
}

async fn post_survey(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<SurveyResponse>,
) -> ApiResult<Json<Value>> {
    role(&st, &headers)?;
    let state = st.clone();
    let s = blocking(move || Ok(state.manager.survey(&id, body)?)).await?;
    Ok(Json(json!({"session_id": s.session_id, "surveys": s.surveys.len()})))
}

/// Binds and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
