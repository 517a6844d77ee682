//! HTTP scoring backend against a scripted local server: retry on
//! transient failures, immediate rejection on 4xx, and token-boundary
//! handling on the echoed logprobs.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use fewshot::llm::{score, HttpBackend, HttpBackendConfig, ScoreError, ScoringBackend};

/// Serve a fixed list of responses, one per connection, then stop.
/// Returns the endpoint URL and a counter of requests actually received.
fn scripted_server(
    responses: Vec<String>,
) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind localhost");
    let addr = listener.local_addr().unwrap();
    let counter = Arc::new(AtomicUsize::new(0));
    let seen = counter.clone();
    let handle = std::thread::spawn(move || {
        for response in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            seen.fetch_add(1, Ordering::SeqCst);
            // read the request: headers, then content-length body bytes
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            let header_end;
            loop {
                let n = stream.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    return;
                }
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_header_end(&buf) {
                    header_end = pos;
                    break;
                }
            }
            let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
            let content_length: usize = headers
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("content-length")
                        .then(|| value.trim().parse().ok())?
                })
                .unwrap_or(0);
            let mut body_len = buf.len() - (header_end + 4);
            while body_len < content_length {
                let n = stream.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    break;
                }
                body_len += n;
            }
            stream.write_all(response.as_bytes()).ok();
        }
    });
    (format!("http://{addr}/v1/completions"), counter, handle)
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn http_response(status: &str, body: &str) -> String {
    format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
}

fn ok_body() -> String {
    serde_json::json!({
        "choices": [{
            "text": "Q: hi\nA: there",
            "logprobs": {
                "tokens": ["Q: hi\nA:", " there"],
                "token_logprobs": [null, -1.5]
            }
        }]
    })
    .to_string()
}

fn backend_for(endpoint: String) -> HttpBackend {
    HttpBackend::new(HttpBackendConfig {
        endpoint,
        model: "test-model".into(),
        credential_env: None,
        max_concurrency: 2,
        timeout_secs: 10,
        retry_base_ms: 1,
        max_attempts: 5,
    })
    .unwrap()
}

#[test]
fn transient_503_then_success() {
    let (endpoint, seen, handle) = scripted_server(vec![
        http_response("503 Service Unavailable", ""),
        http_response("200 OK", &ok_body()),
    ]);
    let backend = backend_for(endpoint);
    let cs = score(&backend, "Q: hi\nA:", " there").unwrap();
    assert_eq!(cs.tokens.len(), 1);
    assert!((cs.total_logprob - -1.5).abs() < 1e-12);
    assert_eq!(seen.load(Ordering::SeqCst), 2, "one retry expected");
    handle.join().unwrap();
}

#[test]
fn client_error_is_rejected_without_retry() {
    let (endpoint, seen, handle) = scripted_server(vec![http_response(
        "401 Unauthorized",
        "{\"error\":\"bad key\"}",
    )]);
    let backend = backend_for(endpoint);
    let err = score(&backend, "Q: hi\nA:", " there").unwrap_err();
    assert!(matches!(
        err,
        ScoreError::BackendRejected {
            status: Some(401),
            ..
        }
    ));
    assert_eq!(seen.load(Ordering::SeqCst), 1, "no retry on 4xx");
    handle.join().unwrap();
}

#[test]
fn exhausted_retries_surface_unavailable() {
    let responses = vec![http_response("503 Service Unavailable", ""); 5];
    let (endpoint, seen, handle) = scripted_server(responses);
    let backend = backend_for(endpoint);
    let err = score(&backend, "Q: hi\nA:", " there").unwrap_err();
    assert!(matches!(
        err,
        ScoreError::BackendUnavailable { attempts: 5, .. }
    ));
    assert_eq!(seen.load(Ordering::SeqCst), 5);
    handle.join().unwrap();
}

#[test]
fn echoed_tokens_must_reconstruct_target() {
    let body = serde_json::json!({
        "choices": [{
            "logprobs": {
                "tokens": ["Q: hi\nA:", " elsewhere"],
                "token_logprobs": [null, -1.5]
            }
        }]
    })
    .to_string();
    let (endpoint, _, handle) = scripted_server(vec![http_response("200 OK", &body)]);
    let backend = backend_for(endpoint);
    let err = score(&backend, "Q: hi\nA:", " there").unwrap_err();
    assert!(matches!(err, ScoreError::TokenizationMismatch { .. }));
    handle.join().unwrap();
}

#[test]
fn missing_credential_env_fails_construction() {
    let result = HttpBackend::new(HttpBackendConfig {
        endpoint: "http://127.0.0.1:1/".into(),
        model: "m".into(),
        credential_env: Some("FEWSHOT_TEST_UNSET_CREDENTIAL".into()),
        ..HttpBackendConfig::default()
    });
    match result {
        Err(ScoreError::BackendRejected { .. }) => {}
        Err(other) => panic!("unexpected error: {other}"),
        Ok(_) => panic!("construction should fail without the credential"),
    }
}

#[test]
fn capability_reflects_config() {
    let backend = backend_for("http://127.0.0.1:1/".into());
    let cap = backend.capability();
    assert_eq!(cap.model, "test-model");
    assert_eq!(cap.max_concurrency, 2);
    assert!(cap.supports_scoring);
}
