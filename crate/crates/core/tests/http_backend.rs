//! HTTP client against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use xvqa_core::backends::{
    BackendError, HttpBackend, LlmBackend, LlmGenerateRequest, RetryPolicy, UnavailableReason,
};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: String,
}

fn read_request(stream: &mut TcpStream) -> Seen {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut len = 0;
    let mut authorization = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':').unwrap();
        match k.to_ascii_lowercase().as_str() {
            "content-length" => len = v.trim().parse().unwrap(),
            "authorization" => authorization = Some(v.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Seen { path, authorization, body: String::from_utf8(body).unwrap() }
}

/// Answers successive connections with the scripted `(status, body)` pairs.
fn serve(script: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let (mut s, _) = listener.accept().unwrap();
            log.lock().unwrap().push(read_request(&mut s));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            s.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn policy(retries: u32) -> RetryPolicy {
    RetryPolicy { retries, backoff_base_ms: 5, timeout_secs: 5 }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![
        (500, r#"{"error": "busy"}"#),
        (500, r#"{"error": "busy"}"#),
        (200, r#"{"text": "fine"}"#),
    ]);
    let b = HttpBackend::new(url, Some("tok".into()), policy(2));
    let r = b.llm_generate(&LlmGenerateRequest::new("hello")).unwrap();
    assert_eq!(r.text, "fine");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|s| s.path == "/v1/llm/generate"));
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer tok"));
    let body: serde_json::Value = serde_json::from_str(&seen[2].body).unwrap();
    assert_eq!(body["prompt"], "hello");
}

#[test]
fn gives_up_after_retry_budget() {
    let (url, seen) = serve(vec![(503, r#"{"error": "down"}"#), (503, r#"{"error": "down"}"#)]);
    let b = HttpBackend::new(url, None, policy(1));
    match b.llm_generate(&LlmGenerateRequest::new("x")) {
        Err(BackendError::Unavailable { attempts, reason: UnavailableReason::Status { code, message }, .. }) => {
            assert_eq!((attempts, code, message.as_str()), (2, 503, "down"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, r#"{"error": "bad prompt"}"#)]);
    let b = HttpBackend::new(url, None, policy(3));
    match b.llm_generate(&LlmGenerateRequest::new("x")) {
        Err(BackendError::Unavailable { attempts: 1, reason: UnavailableReason::Status { code: 400, .. }, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (url, _) = serve(vec![(200, r#"{"txt": 1}"#)]);
    let b = HttpBackend::new(url, None, policy(0));
    match b.llm_generate(&LlmGenerateRequest::new("x")) {
        Err(BackendError::Unavailable { reason: UnavailableReason::Protocol(_), .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn unreachable_host_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = HttpBackend::new(format!("http://127.0.0.1:{port}"), None, policy(1));
    match b.llm_generate(&LlmGenerateRequest::new("x")) {
        Err(BackendError::Unavailable { attempts: 2, reason: UnavailableReason::Transport(_), .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        let held: Vec<_> = listener.incoming().take(1).collect();
        thread::sleep(std::time::Duration::from_secs(3));
        drop(held);
    });
    let b = HttpBackend::new(url, None, RetryPolicy { retries: 0, backoff_base_ms: 1, timeout_secs: 1 });
    match b.llm_generate(&LlmGenerateRequest::new("x")) {
        Err(BackendError::Unavailable { reason: UnavailableReason::Timeout, .. }) => {}
        other => panic!("{other:?}"),
    }
}
