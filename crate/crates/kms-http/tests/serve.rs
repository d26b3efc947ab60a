use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;

use qkdsim_core::kms::{KeyManager, KmsConfig, SaeId, SimClock};
use qkdsim_kms_http::{serve, AppState};

#[tokio::test]
async fn serves_status_over_tcp() {
    let kms = Arc::new(KeyManager::new(KmsConfig::default(), Arc::new(SimClock::new(0.0))));
    let a = SaeId::new("waveserver-a").unwrap();
    let b = SaeId::new("waveserver-b").unwrap();
    kms.register_pair(&a, &b).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, AppState::new(kms, [("t".to_string(), a)])));

    let response = tokio::task::spawn_blocking(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        write!(
            s,
            "GET /api/v1/keys/waveserver-b/status HTTP/1.1\r\nHost: x\r\nAuthorization: Bearer t\r\nConnection: close\r\n\r\n"
        )
        .unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"stored_key_count\":0"), "{response}");
}
