//! HTTP and WebSocket routes over a [`SessionHub`].

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chatroom_core::analysis::{SurveyError, SurveyKind};
use chatroom_core::model::SessionId;
use chatroom_core::persistence::ExportFormat;
use serde::{Deserialize, Serialize};
use tracing::{debug, error, warn};

use crate::hub::{HubError, SessionHub};
use crate::wire::{
    parse_client_frame, ServerFrame, CLIENT_FRAME_SCHEMA, CLOSE_ALREADY_ATTACHED, CLOSE_UNKNOWN_SESSION,
    SERVER_FRAME_SCHEMA,
};

/// How often an open chat connection checks the timer.
pub const DEFAULT_TICK: Duration = Duration::from_secs(1);

#[derive(Clone)]
struct AppState {
    hub: Arc<SessionHub>,
    tick: Duration,
}

pub fn router(hub: Arc<SessionHub>) -> Router {
    router_with_tick(hub, DEFAULT_TICK)
}

pub fn router_with_tick(hub: Arc<SessionHub>, tick: Duration) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(current_phase))
        .route("/sessions/{id}/survey/{survey}", post(submit_survey))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/chat", get(chat))
        .route("/schema/server-frames", get(|| async { schema(SERVER_FRAME_SCHEMA) }))
        .route("/schema/client-frames", get(|| async { schema(CLIENT_FRAME_SCHEMA) }))
        .with_state(AppState { hub, tick })
}

fn schema(text: &'static str) -> Response {
    ([(header::CONTENT_TYPE, "application/schema+json")], text).into_response()
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedBody {
    pub session_id: SessionId,
    pub frame: ServerFrame,
}

fn frame_response(status: StatusCode, frame: ServerFrame) -> Response {
    (status, Json(frame)).into_response()
}

impl IntoResponse for HubError {
    fn into_response(self) -> Response {
        let detail = self.to_string();
        match self {
            HubError::NotFound(_) => frame_response(StatusCode::NOT_FOUND, ServerFrame::protocol_error(detail)),
            HubError::CapacityExceeded(_) => {
                frame_response(StatusCode::SERVICE_UNAVAILABLE, ServerFrame::protocol_error(detail))
            }
            HubError::AlreadyAttached(_) => frame_response(StatusCode::CONFLICT, ServerFrame::protocol_error(detail)),
            HubError::Survey(SurveyError::WrongPhase { .. }) => {
                frame_response(StatusCode::CONFLICT, ServerFrame::phase_error(detail))
            }
            HubError::Survey(_) => frame_response(StatusCode::UNPROCESSABLE_ENTITY, ServerFrame::protocol_error(detail)),
            HubError::Record(_) | HubError::Storage(_) | HubError::Turn(_) => {
                error!(%detail, "session operation failed");
                frame_response(StatusCode::INTERNAL_SERVER_ERROR, ServerFrame::protocol_error(detail))
            }
        }
    }
}

async fn create_session(State(state): State<AppState>) -> Result<Response, HubError> {
    let created = state.hub.create_session().await?;
    let body = CreatedBody {
        session_id: created.session_id,
        frame: created.frame,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn current_phase(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ServerFrame>, HubError> {
    Ok(Json(state.hub.phase(&SessionId::new(id)).await?))
}

async fn submit_survey(
    State(state): State<AppState>,
    Path((id, survey)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<ServerFrame>, Response> {
    let id = SessionId::new(id);
    // Unknown sessions are reported before anything about the body.
    state.hub.phase(&id).await.map_err(IntoResponse::into_response)?;
    let kind: SurveyKind = serde_json::from_value(serde_json::Value::String(survey.clone()))
        .map_err(|_| HubError::Survey(SurveyError::UnknownSurvey(survey)).into_response())?;
    let payload: serde_json::Value = serde_json::from_slice(&body).map_err(|e| {
        frame_response(
            StatusCode::UNPROCESSABLE_ENTITY,
            ServerFrame::protocol_error(format!("body is not JSON: {e}")),
        )
    })?;
    let frame = state
        .hub
        .submit_survey(&id, kind, &payload)
        .await
        .map_err(IntoResponse::into_response)?;
    Ok(Json(frame))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<ExportQuery>,
) -> Result<Response, Response> {
    let format: ExportFormat = query.format.as_deref().unwrap_or("csv").parse().map_err(|detail: String| {
        frame_response(StatusCode::BAD_REQUEST, ServerFrame::protocol_error(detail))
    })?;
    let body = state
        .hub
        .export(&SessionId::new(id), format)
        .await
        .map_err(IntoResponse::into_response)?;
    let content_type = match format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Jsonl => "application/x-ndjson",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn chat(State(state): State<AppState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| run_chat(state, SessionId::new(id), socket))
}

async fn close(mut socket: WebSocket, code: u16, reason: &str) {
    let frame = CloseFrame {
        code,
        reason: reason.into(),
    };
    let _ = socket.send(Message::Close(Some(frame))).await;
}

async fn send_all(socket: &mut WebSocket, frames: Vec<ServerFrame>) -> bool {
    for frame in frames {
        if socket.send(Message::Text(frame.to_json().into())).await.is_err() {
            return false;
        }
    }
    true
}

async fn run_chat(state: AppState, id: SessionId, mut socket: WebSocket) {
    let hub = state.hub;
    let _attachment = match hub.attach(&id) {
        Ok(a) => a,
        Err(HubError::AlreadyAttached(_)) => {
            return close(socket, CLOSE_ALREADY_ATTACHED, "session already has a chat connection").await;
        }
        Err(e) => return close(socket, CLOSE_UNKNOWN_SESSION, &e.to_string()).await,
    };
    debug!(session = %id, "chat attached");

    let opening = match hub.open_chat(&id).await {
        Ok(frames) => frames,
        Err(e) => {
            error!(session = %id, error = %e, "cannot open chat");
            vec![ServerFrame::protocol_error(e.to_string())]
        }
    };
    if !send_all(&mut socket, opening).await {
        return;
    }

    let mut ticker = tokio::time::interval(state.tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        let frames = tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => match parse_client_frame(&text) {
                    Ok(frame) => hub.handle_client_frame(&id, frame).await.unwrap_or_else(|e| {
                        error!(session = %id, error = %e, "frame failed");
                        vec![ServerFrame::protocol_error(e.to_string())]
                    }),
                    Err(detail) => vec![ServerFrame::protocol_error(detail)],
                },
                Some(Ok(Message::Binary(_))) => vec![ServerFrame::protocol_error("frames must be UTF-8 text")],
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => continue,
                Some(Err(e)) => {
                    warn!(session = %id, error = %e, "chat connection failed");
                    break;
                }
            },
            _ = ticker.tick() => match hub.tick(&id).await {
                Ok(frame) => frame.into_iter().collect(),
                Err(e) => {
                    error!(session = %id, error = %e, "timer tick failed");
                    Vec::new()
                }
            },
        };
        if !send_all(&mut socket, frames).await {
            break;
        }
    }
    debug!(session = %id, "chat detached");
}
