//! Blocking JSON-over-HTTP client with bounded concurrency and retries.

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::mock::fnv1a;
use crate::error::{Error, Result};

/// Exponential backoff: `base * factor^attempt`, stretched by up to
/// `jitter` (a fraction) derived from the URL and attempt number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, url: &str, attempt: u32) -> Duration {
        let unit = (fnv1a(url) ^ u64::from(attempt).wrapping_mul(0x9e37_79b9_7f4a_7c15)) as f64 / u64::MAX as f64;
        let scale = self.factor.powi(attempt as i32) * (1.0 + self.jitter * unit);
        self.base_delay.mul_f64(scale)
    }
}

#[derive(Debug)]
struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: Arc<Limiter>,
    bearer: Option<String>,
}

impl HttpClient {
    pub fn new(timeout: Duration, retry: RetryPolicy, concurrency: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            retry,
            limiter: Arc::new(Limiter {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                max: concurrency.max(1),
            }),
            bearer: None,
        }
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token;
        self
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    /// POSTs `body` and decodes the JSON reply. Transport failures, 429 and
    /// 5xx are retried; other statuses and undecodable replies are not.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R> {
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                let delay = self.retry.delay(url, attempt - 1);
                log::debug!("retrying {url} in {delay:?} after: {last}");
                thread::sleep(delay);
            }
            match self.attempt(url, body, attempt + 1)? {
                Attempt::Done(reply) => return Ok(reply),
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(Error::Network {
            url: url.to_string(),
            attempts: self.retry.max_retries + 1,
            message: last,
        })
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B, attempt: u32) -> Result<Attempt<R>> {
        let _permit = self.limiter.acquire();
        let mut request = self.agent.post(url);
        if let Some(token) = &self.bearer {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.into_body().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        match status {
            200..=299 => serde_json::from_str(&text)
                .map(Attempt::Done)
                .map_err(|e| Error::Protocol {
                    url: url.to_string(),
                    message: format!("undecodable reply: {e}"),
                }),
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}"))),
            _ => Err(Error::Network {
                url: url.to_string(),
                attempts: attempt,
                message: format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_geometrically() {
        let p = RetryPolicy::default();
        let d0 = p.delay("http://x/score", 0);
        let d1 = p.delay("http://x/score", 1);
        let d2 = p.delay("http://x/score", 2);
        assert!(d0 >= Duration::from_millis(500) && d0 <= Duration::from_millis(625));
        assert!(d1 >= Duration::from_millis(1000) && d1 <= Duration::from_millis(1250));
        assert!(d2 >= Duration::from_millis(2000) && d2 <= Duration::from_millis(2500));
        assert_eq!(d1, p.delay("http://x/score", 1));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let limiter = Arc::new(Limiter {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max: 2,
        });
        let peak = Arc::new(AtomicUsize::new(0));
        let active = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limiter, peak, active) = (limiter.clone(), peak.clone(), active.clone());
                thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
