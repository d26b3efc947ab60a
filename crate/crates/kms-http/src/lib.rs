//! HTTP/JSON front end for [`KeyManager`], with the key delivery paths of
//! ETSI GS QKD 014:
//!
//! - `GET  /api/v1/keys/{slave_SAE_ID}/status`
//! - `POST /api/v1/keys/{slave_SAE_ID}/enc_keys` with `{"number": n, "size": 256}`
//! - `POST /api/v1/keys/{master_SAE_ID}/dec_keys` with `{"key_IDs": [{"key_ID": "<uuid>"}]}`
//!
//! The caller's own SAE ID comes from a static bearer token.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qkdsim_core::kms::{KeyContainer, KeyManager, KmeStatus, KmsError, SaeId};
use qkdsim_core::session::KEY_BITS;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Shared state of one KME.
#[derive(Clone)]
pub struct AppState {
    pub kms: Arc<KeyManager>,
    tokens: Arc<HashMap<String, SaeId>>,
}

impl AppState {
    /// `tokens` maps each bearer token to the SAE it authenticates.
    pub fn new(kms: Arc<KeyManager>, tokens: impl IntoIterator<Item = (String, SaeId)>) -> Self {
        Self {
            kms,
            tokens: Arc::new(tokens.into_iter().collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<Value>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                message: message.into(),
                details: Vec::new(),
            },
        }
    }
}

impl From<KmsError> for ApiError {
    fn from(e: KmsError) -> Self {
        let status = match &e {
            KmsError::NotFound(_) | KmsError::UnknownKeys(_) => StatusCode::NOT_FOUND,
            KmsError::ResourceExhausted { .. } => StatusCode::SERVICE_UNAVAILABLE,
            KmsError::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            KmsError::EndpointMismatch(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut err = ApiError::new(status, e.to_string());
        if let KmsError::UnknownKeys(ids) = &e {
            err.body.details = ids.iter().map(|id| serde_json::json!({ "key_ID": id })).collect();
        }
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn caller(state: &AppState, headers: &HeaderMap) -> Result<SaeId, ApiError> {
    let unauthorized = || ApiError::new(StatusCode::UNAUTHORIZED, "missing or unknown bearer token");
    let value = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(unauthorized)?;
    let token = value.strip_prefix("Bearer ").ok_or_else(unauthorized)?;
    state.tokens.get(token.trim()).cloned().ok_or_else(unauthorized)
}

fn path_sae(raw: &str) -> Result<SaeId, ApiError> {
    SaeId::new(raw).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

#[derive(Debug, Clone, Deserialize)]
pub struct EncKeysRequest {
    #[serde(default = "one")]
    pub number: usize,
    #[serde(default = "key_bits")]
    pub size: u64,
}

fn one() -> usize {
    1
}

fn key_bits() -> u64 {
    KEY_BITS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyIdEntry {
    #[serde(rename = "key_ID")]
    pub key_id: uuid::Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecKeysRequest {
    #[serde(rename = "key_IDs")]
    pub key_ids: Vec<KeyIdEntry>,
}

async fn status(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(slave): Path<String>,
) -> Result<Json<KmeStatus>, ApiError> {
    let master = caller(&state, &headers)?;
    Ok(Json(state.kms.get_status(&master, &path_sae(&slave)?)?))
}

async fn enc_keys(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(slave): Path<String>,
    body: Result<Json<EncKeysRequest>, JsonRejection>,
) -> Result<Json<KeyContainer>, ApiError> {
    let master = caller(&state, &headers)?;
    let Json(req) = body?;
    Ok(Json(state.kms.get_enc_keys(&master, &path_sae(&slave)?, req.number, req.size)?))
}

async fn dec_keys(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(master): Path<String>,
    body: Result<Json<DecKeysRequest>, JsonRejection>,
) -> Result<Json<KeyContainer>, ApiError> {
    let slave = caller(&state, &headers)?;
    let Json(req) = body?;
    let ids: Vec<uuid::Uuid> = req.key_ids.iter().map(|k| k.key_id).collect();
    Ok(Json(state.kms.get_dec_keys(&slave, &path_sae(&master)?, &ids)?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/keys/{sae}/status", get(status))
        .route("/api/v1/keys/{sae}/enc_keys", post(enc_keys))
        .route("/api/v1/keys/{sae}/dec_keys", post(dec_keys))
        .with_state(state)
}

/// Serves the API until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
