//! Blocking JSON-over-HTTP plumbing shared by the remote embedder and the
//! remote LLM: a swappable transport, retry with exponential backoff, and a
//! counting limiter bounding in-flight requests.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
}

pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// Transport backed by `ureq`.
#[derive(Debug, Default)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut request = agent.post(url);
        if let Some(key) = bearer {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Connection(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub factor: u32,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            base_backoff: Duration::from_millis(500),
            factor: 2,
            timeout: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.base_backoff * self.factor.saturating_pow(retry)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequestError {
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
}

/// Posts `body` until a 2xx arrives or the retry budget is spent. Timeouts,
/// connection failures and non-2xx statuses are all retried.
pub fn post_with_retry(
    transport: &dyn HttpTransport,
    limiter: &Limiter,
    policy: &RetryPolicy,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
) -> Result<HttpResponse, RequestError> {
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            std::thread::sleep(policy.backoff(attempt - 1));
        }
        let outcome = {
            let _permit = limiter.acquire();
            transport.post_json(url, bearer, body, policy.timeout)
        };
        match outcome {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp),
            Ok(resp) => last = format!("status {}", resp.status),
            Err(e) => last = e.to_string(),
        }
        tracing::warn!(url, attempt, %last, "http request failed");
    }
    Err(RequestError::RetriesExhausted {
        attempts: policy.max_retries + 1,
        last,
    })
}

/// Counting semaphore.
#[derive(Debug)]
pub struct Limiter {
    available: Mutex<usize>,
    released: Condvar,
}

impl Limiter {
    pub fn new(bound: usize) -> Self {
        Limiter {
            available: Mutex::new(bound.max(1)),
            released: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.released.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit { limiter: self }
    }
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.limiter.available.lock().unwrap_or_else(|e| e.into_inner());
        *available += 1;
        self.limiter.released.notify_one();
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Fake transport answering from a script and tracking peak concurrency.
    pub struct ScriptedTransport {
        responder: Box<dyn Fn(usize, &serde_json::Value) -> Result<HttpResponse, TransportError> + Send + Sync>,
        pub calls: AtomicUsize,
        in_flight: AtomicUsize,
        pub peak: AtomicUsize,
        delay: Duration,
    }

    impl ScriptedTransport {
        pub fn new(
            delay: Duration,
            responder: impl Fn(usize, &serde_json::Value) -> Result<HttpResponse, TransportError>
                + Send
                + Sync
                + 'static,
        ) -> Self {
            ScriptedTransport {
                responder: Box::new(responder),
                calls: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                delay,
            }
        }
    }

    impl HttpTransport for ScriptedTransport {
        fn post_json(
            &self,
            _url: &str,
            _bearer: Option<&str>,
            body: &serde_json::Value,
            _timeout: Duration,
        ) -> Result<HttpResponse, TransportError> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(self.delay);
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            (self.responder)(call, body)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::ScriptedTransport;
    use super::*;
    use std::sync::atomic::Ordering;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            base_backoff: Duration::from_millis(1),
            ..RetryPolicy::default()
        }
    }

    #[test]
    fn default_backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_millis(500));
        assert_eq!(p.backoff(1), Duration::from_millis(1000));
        assert_eq!(p.max_retries, 2);
        assert_eq!(p.timeout, Duration::from_secs(30));
    }

    #[test]
    fn three_server_errors_exhaust_retries() {
        let t = ScriptedTransport::new(Duration::ZERO, |_, _| {
            Ok(HttpResponse { status: 500, body: String::new() })
        });
        let err = post_with_retry(&t, &Limiter::new(1), &fast(), "u", None, &serde_json::json!({}))
            .unwrap_err();
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
        assert!(err.to_string().starts_with("retries exhausted"));
    }

    #[test]
    fn recovers_after_timeout() {
        let t = ScriptedTransport::new(Duration::ZERO, |call, _| {
            if call == 0 {
                Err(TransportError::Timeout)
            } else {
                Ok(HttpResponse { status: 200, body: "ok".into() })
            }
        });
        let resp = post_with_retry(&t, &Limiter::new(1), &fast(), "u", None, &serde_json::json!({}))
            .unwrap();
        assert_eq!(resp.body, "ok");
    }

    #[test]
    fn limiter_bounds_in_flight_requests() {
        let t = ScriptedTransport::new(Duration::from_millis(5), |_, _| {
            Ok(HttpResponse { status: 200, body: String::new() })
        });
        let limiter = Limiter::new(3);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| {
                    post_with_retry(&t, &limiter, &fast(), "u", None, &serde_json::json!({})).unwrap();
                });
            }
        });
        assert_eq!(t.calls.load(Ordering::SeqCst), 16);
        assert!(t.peak.load(Ordering::SeqCst) <= 3);
    }
}
