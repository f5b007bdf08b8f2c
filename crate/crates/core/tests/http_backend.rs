//! HttpBackend against a throwaway local server speaking just enough HTTP/1.1.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use coe_core::gateway::{Backend, GatewayError, HttpBackend, RetryPolicy};
use coe_core::{ChatMessage, CompletionRequest, Gateway};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

enum Reply {
    Json(u16, Value),
    /// Close the socket without answering.
    Hangup,
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let path = request_line.split_whitespace().nth(1)?.to_string();
    let mut length = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (name, value) = line.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().ok()?,
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(Seen {
        path,
        auth,
        body: serde_json::from_slice(&body).ok()?,
    })
}

/// Serves `replies` in order, one per connection; returns the base URL and
/// the requests seen.
fn mock(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for reply in replies {
            let Ok((mut stream, _)) = listener.accept() else { return };
            if let Some(req) = read_request(&mut stream) {
                log.lock().unwrap().push(req);
            }
            match reply {
                Reply::Hangup => drop(stream),
                Reply::Json(status, body) => {
                    let body = body.to_string();
                    let head = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                        body.len()
                    );
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(body.as_bytes());
                }
            }
        }
    });
    (base, seen)
}

fn fast() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff: Duration::from_millis(5),
    }
}

fn completion(text: &str) -> Value {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]})
}

fn messages() -> Vec<ChatMessage> {
    vec![ChatMessage::system("say OK"), ChatMessage::user("go")]
}

#[test]
fn completion_wire_format() {
    let (base, seen) = mock(vec![Reply::Json(200, completion("OK"))]);
    let gateway = Gateway::new(Arc::new(HttpBackend::new(&base, Some("sk-test".into())).with_retry(fast())));
    assert_eq!(gateway.chat(messages()).unwrap(), "OK");

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "gpt-3.5-turbo");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "say OK"}));
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "go"}));

    let audit = gateway.audit_log();
    assert_eq!(audit.len(), 1);
    assert_eq!(audit[0].response.as_deref(), Some("OK"));
    assert_eq!(audit[0].finish_reason.as_deref(), Some("stop"));
}

#[test]
fn non_2xx_surfaces_status_and_body_without_retry() {
    let (base, seen) = mock(vec![Reply::Json(429, json!({"error": "rate limited"}))]);
    let backend = HttpBackend::new(&base, None).with_retry(fast());
    let err = backend.complete(&CompletionRequest::new("m", messages())).unwrap_err();
    match err {
        GatewayError::Status { status, body } => {
            assert_eq!(status, 429);
            assert!(body.contains("rate limited"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn empty_choices_is_an_error() {
    let (base, _) = mock(vec![Reply::Json(200, json!({"choices": []}))]);
    let backend = HttpBackend::new(&base, None).with_retry(fast());
    assert!(matches!(
        backend.complete(&CompletionRequest::new("m", messages())),
        Err(GatewayError::EmptyChoices)
    ));
}

#[test]
fn transport_failure_is_retried_then_succeeds_with_one_audit_entry() {
    let (base, seen) = mock(vec![Reply::Hangup, Reply::Json(200, completion("second time"))]);
    let gateway = Gateway::new(Arc::new(HttpBackend::new(&base, None).with_retry(fast())));
    assert_eq!(gateway.chat(messages()).unwrap(), "second time");
    assert_eq!(seen.lock().unwrap().len(), 2);
    assert_eq!(gateway.audit_len(), 1);
}

#[test]
fn transport_failure_gives_up_after_the_bound() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::new(&format!("http://127.0.0.1:{port}/v1"), None).with_retry(fast());
    match backend.complete(&CompletionRequest::new("m", messages())) {
        Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn moderation_wire_format_and_failure_policy() {
    let verdict = json!({"results": [{
        "flagged": true,
        "categories": {"violence": true},
        "category_scores": {"violence": 0.97, "hate": 0.01}
    }]});
    let (base, seen) = mock(vec![Reply::Json(200, verdict), Reply::Json(500, json!({"error": "down"}))]);
    let gateway = Gateway::new(Arc::new(HttpBackend::new(&base, None).with_retry(fast())));

    let v = gateway.moderate("something violent");
    assert!(v.flagged);
    assert_eq!(v.category_scores["violence"], 0.97);
    {
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].path, "/v1/moderations");
        assert_eq!(seen[0].body, json!({"input": "something violent"}));
    }

    // backend failure passes the text
    assert!(!gateway.moderate("hello there").flagged);
    // empty text never reaches the backend
    assert!(!gateway.moderate("").flagged);
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn missing_credential_variable() {
    let err = HttpBackend::from_env("http://localhost:1/v1", "COE_TEST_SURELY_UNSET_VAR").err().unwrap();
    assert!(matches!(err, GatewayError::MissingCredential(_)));
}
