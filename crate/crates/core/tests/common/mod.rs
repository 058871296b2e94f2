#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use promptlearn::scoring::{HttpClient, RetryPolicy};

#[derive(Debug, Clone)]
pub struct Seen {
    pub path: String,
    pub body: String,
    pub authorization: Option<String>,
}

pub type Handler = dyn Fn(&str, &str, usize) -> (u16, String) + Send + Sync;

/// Loopback HTTP server answering every request through `handler(path,
/// body, call_index)`.
pub struct Stub {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
    pub calls: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    workers: Vec<thread::JoinHandle<()>>,
}

impl Stub {
    pub fn serve(handler: impl Fn(&str, &str, usize) -> (u16, String) + Send + Sync + 'static) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind loopback"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let handler: Arc<Handler> = Arc::new(handler);
        let seen = Arc::new(Mutex::new(Vec::new()));
        let calls = Arc::new(AtomicUsize::new(0));
        let workers = (0..4)
            .map(|_| {
                let (server, handler, seen, calls) = (server.clone(), handler.clone(), seen.clone(), calls.clone());
                thread::spawn(move || {
                    for mut request in server.incoming_requests() {
                        let mut body = String::new();
                        let _ = request.as_reader().read_to_string(&mut body);
                        let path = request.url().to_string();
                        let authorization = request
                            .headers()
                            .iter()
                            .find(|h| h.field.equiv("Authorization"))
                            .map(|h| h.value.to_string());
                        let index = calls.fetch_add(1, Ordering::SeqCst);
                        let (status, reply) = handler(&path, &body, index);
                        seen.lock().unwrap().push(Seen {
                            path,
                            body,
                            authorization,
                        });
                        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                        let response = tiny_http::Response::from_string(reply)
                            .with_status_code(status)
                            .with_header(header);
                        let _ = request.respond(response);
                    }
                })
            })
            .collect();
        Self {
            url: format!("http://127.0.0.1:{port}"),
            seen,
            calls,
            server,
            workers,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn seen(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Client with millisecond backoff so retry tests stay fast.
pub fn fast_client(max_retries: u32) -> HttpClient {
    HttpClient::new(
        Duration::from_secs(5),
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(1),
            ..RetryPolicy::default()
        },
        4,
    )
}

/// Chat-completions reply body carrying `content`.
pub fn chat_reply(content: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}
