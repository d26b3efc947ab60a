use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use http_body_util::BodyExt;
use qkdsim_core::kms::{KeyManager, KmsConfig, SaeId, SimClock};
use qkdsim_core::session::{AlarmThresholds, QkdLink, KEY_BITS};
use qkdsim_kms_http::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const MASTER_TOKEN: &str = "token-a";
const SLAVE_TOKEN: &str = "token-b";

fn app(keys: u64) -> axum::Router {
    let kms = Arc::new(KeyManager::new(KmsConfig::default(), Arc::new(SimClock::new(0.0))));
    let a = SaeId::new("waveserver-a").unwrap();
    let b = SaeId::new("waveserver-b").unwrap();
    kms.register_pair(&a, &b).unwrap();
    if keys > 0 {
        let mut link = QkdLink::new(21, AlarmThresholds::default());
        link.tick((keys * KEY_BITS) as f64, 0.04, 1.0).unwrap();
        let carved = link.carve_keys();
        kms.deposit(&a, &b, carved.alice, carved.bob).unwrap();
    }
    router(AppState::new(
        kms,
        [(MASTER_TOKEN.to_string(), a), (SLAVE_TOKEN.to_string(), b)],
    ))
}

async fn call(app: &axum::Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

#[tokio::test]
async fn status_reports_stored_keys() {
    let app = app(258);
    let (code, body) = call(&app, "GET", "/api/v1/keys/waveserver-b/status", Some(MASTER_TOKEN), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["stored_key_count"], 258);
    assert_eq!(body["key_size"], 256);
    assert_eq!(body["master_SAE_ID"], "waveserver-a");
    assert_eq!(body["slave_SAE_ID"], "waveserver-b");
    for field in ["source_KME_ID", "target_KME_ID", "max_key_count", "max_key_per_request", "max_SAE_ID_count"] {
        assert!(body.get(field).is_some(), "{field}");
    }
    assert!(!body.to_string().contains("\"key\""));
}

#[tokio::test]
async fn fresh_link_has_no_keys() {
    let app = app(0);
    let (code, body) = call(&app, "GET", "/api/v1/keys/waveserver-b/status", Some(MASTER_TOKEN), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["stored_key_count"], 0);
}

#[tokio::test]
async fn unknown_slave_is_not_found() {
    let app = app(4);
    let (code, body) = call(&app, "GET", "/api/v1/keys/nobody/status", Some(MASTER_TOKEN), None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert!(body["message"].as_str().unwrap().contains("not found"));
}

#[tokio::test]
async fn bearer_token_required() {
    let app = app(4);
    let (code, _) = call(&app, "GET", "/api/v1/keys/waveserver-b/status", None, None).await;
    assert_eq!(code, StatusCode::UNAUTHORIZED);
    let (code, _) = call(&app, "GET", "/api/v1/keys/waveserver-b/status", Some("forged"), None).await;
    assert_eq!(code, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn enc_then_dec_round_trip() {
    let app = app(300);
    let (code, enc) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-b/enc_keys",
        Some(MASTER_TOKEN),
        Some(json!({"number": 258, "size": 256})),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    let keys = enc["keys"].as_array().unwrap();
    assert_eq!(keys.len(), 258);
    for k in keys {
        let id = k["key_ID"].as_str().unwrap();
        assert_eq!(uuid::Uuid::parse_str(id).unwrap().hyphenated().to_string(), id);
        assert_eq!(BASE64.decode(k["key"].as_str().unwrap()).unwrap().len(), 32);
    }

    let ids: Vec<Value> = keys[..3].iter().map(|k| json!({"key_ID": k["key_ID"]})).collect();
    let (code, dec) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-a/dec_keys",
        Some(SLAVE_TOKEN),
        Some(json!({ "key_IDs": ids })),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(dec["keys"], json!(keys[..3]));

    // One-time delivery.
    let (code, body) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-a/dec_keys",
        Some(SLAVE_TOKEN),
        Some(json!({ "key_IDs": [ids[0].clone()] })),
    )
    .await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["details"][0]["key_ID"], ids[0]["key_ID"]);

    let (_, status) = call(&app, "GET", "/api/v1/keys/waveserver-b/status", Some(MASTER_TOKEN), None).await;
    assert_eq!(status["stored_key_count"], 300 - 258);
}

#[tokio::test]
async fn bogus_id_in_batch_leaves_valid_ids_deliverable() {
    let app = app(10);
    let (_, enc) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-b/enc_keys",
        Some(MASTER_TOKEN),
        Some(json!({"number": 2})),
    )
    .await;
    let good: Vec<Value> = enc["keys"].as_array().unwrap().iter().map(|k| json!({"key_ID": k["key_ID"]})).collect();
    let bogus = json!({"key_ID": "00000000-0000-4000-8000-000000000000"});
    let batch = json!({ "key_IDs": [good[0], bogus, good[1]] });
    let (code, body) = call(&app, "POST", "/api/v1/keys/waveserver-a/dec_keys", Some(SLAVE_TOKEN), Some(batch)).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["details"], json!([bogus]));
    let (code, dec) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-a/dec_keys",
        Some(SLAVE_TOKEN),
        Some(json!({ "key_IDs": good })),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(dec["keys"], enc["keys"]);
}

#[tokio::test]
async fn exhausted_store_is_unavailable_and_unchanged() {
    let app = app(3);
    let (code, body) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-b/enc_keys",
        Some(MASTER_TOKEN),
        Some(json!({"number": 5, "size": 256})),
    )
    .await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["message"].as_str().unwrap().contains("insufficient"));
    let (_, status) = call(&app, "GET", "/api/v1/keys/waveserver-b/status", Some(MASTER_TOKEN), None).await;
    assert_eq!(status["stored_key_count"], 3);
}

#[tokio::test]
async fn bad_requests() {
    let app = app(3);
    let (code, _) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-b/enc_keys",
        Some(MASTER_TOKEN),
        Some(json!({"number": 1, "size": 128})),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let (code, _) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-b/enc_keys",
        Some(MASTER_TOKEN),
        Some(json!({"number": 0})),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let (code, _) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-a/dec_keys",
        Some(SLAVE_TOKEN),
        Some(json!({"key_IDs": [{"key_ID": "not-a-uuid"}]})),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let (code, _) = call(
        &app,
        "POST",
        "/api/v1/keys/waveserver-a/dec_keys",
        Some(SLAVE_TOKEN),
        Some(json!({"key_IDs": []})),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn default_request_is_one_key() {
    let app = app(3);
    let (code, enc) = call(&app, "POST", "/api/v1/keys/waveserver-b/enc_keys", Some(MASTER_TOKEN), Some(json!({}))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(enc["keys"].as_array().unwrap().len(), 1);
}
