//! Blocking HTTP client for remote agent backends.

use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::{self, *};
use super::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Timeouts {
    pub perception: Duration,
    pub reasoning: Duration,
    pub action: Duration,
    pub evaluation: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            perception: Duration::from_secs(30),
            reasoning: Duration::from_secs(30),
            action: Duration::from_secs(300),
            evaluation: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Server root, e.g. `http://127.0.0.1:8080`.
    pub base_url: String,
    pub timeouts: Timeouts,
    /// Total attempts per call, including the first.
    pub max_attempts: u32,
    pub retry_backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            timeouts: Timeouts::default(),
            max_attempts: 3,
            retry_backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    /// Value of the protocol version header, if present.
    pub proto_version: Option<String>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Other(String),
}

/// Sends one JSON POST. Implementations must be usable from many threads.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: Vec<u8>, timeout: Duration) -> Result<HttpReply, TransportError>;
}

/// [`Transport`] backed by `reqwest`'s blocking client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, body: Vec<u8>, timeout: Duration) -> Result<HttpReply, TransportError> {
        let resp = self
            .client
            .post(url)
            .header(PROTO_HEADER, PROTO_VERSION)
            .header("content-type", "application/json")
            .timeout(timeout)
            .body(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Other(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let proto_version = resp
            .headers()
            .get(PROTO_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let body = resp
            .bytes()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Other(e.to_string())
                }
            })?
            .to_vec();
        Ok(HttpReply {
            status,
            proto_version,
            body,
        })
    }
}

/// Shared protocol client. Cheap to clone; safe to use from concurrent sessions.
#[derive(Clone)]
pub struct HttpClient {
    cfg: Arc<HttpConfig>,
    transport: Arc<dyn Transport>,
}

impl HttpClient {
    pub fn new(cfg: HttpConfig, transport: Arc<dyn Transport>) -> Self {
        HttpClient {
            cfg: Arc::new(cfg),
            transport,
        }
    }

    pub fn with_reqwest(cfg: HttpConfig) -> Result<Self, TransportError> {
        Ok(Self::new(cfg, Arc::new(ReqwestTransport::new()?)))
    }

    /// POST `body` to `endpoint`, retrying transport failures and 5xx
    /// replies with the same payload (and so the same request id).
    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        agent: &'static str,
        endpoint: &str,
        request_id: &str,
        timeout: Duration,
        body: &Req,
    ) -> BackendResult<Resp> {
        let url = format!("{}{}", self.cfg.base_url.trim_end_matches('/'), endpoint);
        let bytes = serde_json::to_vec(body).map_err(|e| BackendError::Protocol {
            agent,
            message: format!("cannot serialize request: {e}"),
        })?;
        let attempts = self.cfg.max_attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 && !self.cfg.retry_backoff.is_zero() {
                std::thread::sleep(self.cfg.retry_backoff * (attempt - 1));
            }
            let err = match self.transport.post_json(&url, bytes.clone(), timeout) {
                Ok(reply) if reply.status >= 500 => BackendError::Transport {
                    agent,
                    message: format!("server returned {}", reply.status),
                },
                Ok(reply) => {
                    log::debug!("{agent} {request_id}: attempt {attempt}/{attempts} -> {}", reply.status);
                    return parse_reply(agent, request_id, reply);
                }
                Err(e) => BackendError::Transport {
                    agent,
                    message: e.to_string(),
                },
            };
            log::warn!("{agent} {request_id}: attempt {attempt}/{attempts} failed: {err}");
            last = Some(err);
        }
        Err(last.expect("at least one attempt"))
    }
}

trait Echo {
    fn request_id(&self) -> &str;
}

macro_rules! echo {
    ($($t:ty),*) => {$(impl Echo for $t { fn request_id(&self) -> &str { &self.request_id } })*};
}
echo!(
    WirePerceptionResponse,
    WireReasoningResponse,
    WireActionResponse,
    WireEvaluationResponse
);

fn parse_reply<Resp: DeserializeOwned>(
    agent: &'static str,
    request_id: &str,
    reply: HttpReply,
) -> BackendResult<Resp> {
    let proto = |message: String| BackendError::Protocol { agent, message };
    if reply.status >= 400 {
        return Err(match serde_json::from_slice::<WireError>(&reply.body) {
            Ok(e) => BackendError::Remote {
                agent,
                code: e.code,
                message: e.message,
            },
            Err(_) => proto(format!("HTTP {} with a non-protocol body", reply.status)),
        });
    }
    match reply.proto_version.as_deref() {
        Some(PROTO_VERSION) => {}
        other => {
            return Err(proto(format!(
                "expected {PROTO_HEADER}: {PROTO_VERSION}, got {other:?}"
            )))
        }
    }
    serde_json::from_slice(&reply.body)
        .map_err(|e| proto(format!("bad {agent} response for {request_id}: {e}")))
}

/// All four agents over HTTP, sharing one client.
#[derive(Clone)]
pub struct HttpBackend {
    client: HttpClient,
}

impl HttpBackend {
    pub fn new(client: HttpClient) -> Self {
        HttpBackend { client }
    }

    fn call<W: Serialize, R: DeserializeOwned + Echo>(
        &self,
        agent: &'static str,
        endpoint: &str,
        timeout: Duration,
        encode: impl FnOnce(&str) -> BackendResult<W>,
    ) -> BackendResult<R> {
        let request_id = uuid::Uuid::new_v4().to_string();
        let body = encode(&request_id)?;
        let resp: R = self.client.post(agent, endpoint, &request_id, timeout, &body)?;
        if resp.request_id() != request_id {
            return Err(BackendError::Protocol {
                agent,
                message: format!(
                    "response request_id {} does not match {request_id}",
                    resp.request_id()
                ),
            });
        }
        Ok(resp)
    }
}

impl PerceptionAgent for HttpBackend {
    fn perceive(&self, req: &PerceptionRequest) -> BackendResult<PerceptionResponse> {
        let t = self.client.cfg.timeouts.perception;
        let resp: WirePerceptionResponse = self.call("perception", protocol::PERCEIVE, t, |id| {
            WirePerceptionRequest::encode(id, req)
        })?;
        let out = resp.decode()?;
        check_perception(req, &out)?;
        Ok(out)
    }
}

impl ReasoningAgent for HttpBackend {
    fn reason(&self, req: &ReasoningRequest) -> BackendResult<ReasoningResponse> {
        let t = self.client.cfg.timeouts.reasoning;
        let resp: WireReasoningResponse = self.call("reasoning", protocol::REASON, t, |id| {
            WireReasoningRequest::encode(id, req)
        })?;
        let out = resp.decode()?;
        check_reasoning(req, &out)?;
        Ok(out)
    }
}

impl ActionAgent for HttpBackend {
    fn act(&self, req: &ActionRequest) -> BackendResult<ActionResponse> {
        let t = self.client.cfg.timeouts.action;
        let resp: WireActionResponse = self.call("action", protocol::ACT, t, |id| {
            WireActionRequest::encode(id, req)
        })?;
        let out = resp.decode()?;
        check_action(req, &out)?;
        Ok(out)
    }
}

impl EvaluationAgent for HttpBackend {
    fn evaluate(&self, req: &EvaluationRequest) -> BackendResult<EvaluationResponse> {
        let t = self.client.cfg.timeouts.evaluation;
        let resp: WireEvaluationResponse = self.call("evaluation", protocol::EVALUATE, t, |id| {
            WireEvaluationRequest::encode(id, req)
        })?;
        let out = resp.decode()?;
        check_evaluation(&out)?;
        Ok(out)
    }
}

/// Serves every session from the same remote endpoints.
#[derive(Clone)]
pub struct HttpProvider {
    backend: HttpBackend,
}

impl HttpProvider {
    pub fn new(client: HttpClient) -> Self {
        HttpProvider {
            backend: HttpBackend::new(client),
        }
    }
}

impl BackendProvider for HttpProvider {
    fn session(&self, _session_id: &str) -> BackendResult<BackendSet> {
        Ok(BackendSet {
            perception: Box::new(self.backend.clone()),
            reasoning: Box::new(self.backend.clone()),
            action: Box::new(self.backend.clone()),
            evaluation: Box::new(self.backend.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::DimensionScores;
    use image::RgbImage;
    use std::sync::Mutex;

    /// Fails the first `failures` calls with a timeout, then answers with an
    /// evaluation response echoing the request id.
    struct Flaky {
        failures: usize,
        seen: Mutex<Vec<serde_json::Value>>,
        version: Option<String>,
        status: u16,
    }

    impl Flaky {
        fn new(failures: usize) -> Self {
            Flaky {
                failures,
                seen: Mutex::new(Vec::new()),
                version: Some(PROTO_VERSION.into()),
                status: 200,
            }
        }
    }

    impl Transport for Flaky {
        fn post_json(&self, _url: &str, body: Vec<u8>, _t: Duration) -> Result<HttpReply, TransportError> {
            let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let mut seen = self.seen.lock().unwrap();
            seen.push(v.clone());
            if seen.len() <= self.failures {
                return Err(TransportError::Timeout);
            }
            let resp = WireEvaluationResponse {
                request_id: v["request_id"].as_str().unwrap().into(),
                scores: DimensionScores::new(61.0, 72.0, 83.0),
            };
            Ok(HttpReply {
                status: self.status,
                proto_version: self.version.clone(),
                body: serde_json::to_vec(&resp).unwrap(),
            })
        }
    }

    fn eval_request() -> EvaluationRequest {
        let img = ImageRef::from_rgb("x", &RgbImage::new(4, 4));
        EvaluationRequest {
            source: img.clone(),
            edited: img,
            instruction: "brighten".into(),
        }
    }

    fn backend(t: Arc<Flaky>, attempts: u32) -> HttpBackend {
        let mut cfg = HttpConfig::new("http://unused");
        cfg.max_attempts = attempts;
        cfg.retry_backoff = Duration::ZERO;
        HttpBackend::new(HttpClient::new(cfg, t))
    }

    #[test]
    fn retries_reuse_request_id() {
        let t = Arc::new(Flaky::new(2));
        let resp = backend(t.clone(), 3).evaluate(&eval_request()).unwrap();
        assert_eq!(resp.scores, DimensionScores::new(61.0, 72.0, 83.0));
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert!(seen.iter().all(|v| v["request_id"] == seen[0]["request_id"]));
    }

    #[test]
    fn retry_budget_exhausted() {
        let t = Arc::new(Flaky::new(3));
        let err = backend(t.clone(), 3).evaluate(&eval_request()).unwrap_err();
        assert!(err.is_retryable());
        assert_eq!(t.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn missing_version_header_is_protocol_violation() {
        let mut f = Flaky::new(0);
        f.version = None;
        let err = backend(Arc::new(f), 3).evaluate(&eval_request()).unwrap_err();
        assert!(matches!(err, BackendError::Protocol { .. }));
    }

    #[test]
    fn server_errors_are_retried() {
        let mut f = Flaky::new(0);
        f.status = 503;
        let t = Arc::new(f);
        let err = backend(t.clone(), 2).evaluate(&eval_request()).unwrap_err();
        assert!(err.is_retryable());
        assert_eq!(t.seen.lock().unwrap().len(), 2);
    }
}
