//! Serves primitives from an external HTTP endpoint.
//!
//! Responses are recorded in full in the trace, so replay never contacts the
//! endpoint.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitives::{Call, Primitive, PrimitiveDescriptor, PrimitiveError, Registry};
use crate::workspace::{cost_of, hash_state, Modality, Payload, TaskSpec};

pub const WIRE_VERSION: u32 = 1;
pub const MAX_RETRIES: u8 = 5;
pub const INVOKE_PATH: &str = "/v1/invoke";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("remote error {status}: {body}")]
    RemoteError { status: u16, body: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
}

fn duration_ms<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(d.as_millis() as u64)
}

fn ms_duration<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
    u64::deserialize(d).map(Duration::from_millis)
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    pub base_url: String,
    #[serde(rename = "timeout_ms", serialize_with = "duration_ms", deserialize_with = "ms_duration")]
    pub timeout: Duration,
    #[serde(default)]
    pub max_retries: u8,
    /// Name of the environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl EndpointSpec {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            timeout,
            max_retries: 0,
            auth_token_env: None,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidEndpoint(m));
        if self.timeout.is_zero() {
            return bad("timeout must be positive".into());
        }
        if self.max_retries > MAX_RETRIES {
            return bad(format!("max_retries {} above {MAX_RETRIES}", self.max_retries));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url {:?} is not an http(s) URL", self.base_url));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be positive".into());
        }
        Ok(())
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url.trim_end_matches('/'))
    }

    fn token(&self) -> Option<String> {
        std::env::var(self.auth_token_env.as_ref()?).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvokeRequest {
    pub version: u32,
    pub primitive_id: String,
    pub task: TaskSpec,
    /// Hex content hash of the workspace the step reads.
    pub context_digest: String,
    pub seed: u64,
    #[serde(default)]
    pub params: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireItem {
    pub modality: String,
    pub payload: serde_json::Value,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvokeResponse {
    pub version: u32,
    pub items: Vec<WireItem>,
}

/// Checks a response body against the wire schema and workspace invariants.
pub fn parse_response(body: &str) -> Result<Vec<Payload>, BackendError> {
    let bad = |m: String| BackendError::SchemaViolation(m);
    let resp: InvokeResponse = serde_json::from_str(body).map_err(|e| bad(e.to_string()))?;
    if resp.version != WIRE_VERSION {
        return Err(bad(format!("version {} is not {WIRE_VERSION}", resp.version)));
    }
    resp.items
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            let modality =
                Modality::parse(&it.modality).ok_or_else(|| bad(format!("item {i}: unknown modality {:?}", it.modality)))?;
            let payload: Payload =
                serde_json::from_value(it.payload).map_err(|e| bad(format!("item {i}: {e}")))?;
            if payload.modality() != modality {
                return Err(bad(format!(
                    "item {i}: payload is {} but declared {}",
                    payload.modality().as_str(),
                    modality.as_str()
                )));
            }
            payload.validate().map_err(|e| bad(format!("item {i}: {e}")))?;
            let cost = cost_of(&payload).map_err(|e| bad(format!("item {i}: {e}")))?;
            if cost != it.cost {
                return Err(bad(format!("item {i}: declared cost {} but payload costs {cost}", it.cost)));
            }
            Ok(payload)
        })
        .collect()
}

fn is_timeout(e: &ureq::Error) -> bool {
    matches!(e, ureq::Error::Timeout(_))
        || matches!(e, ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut)
}

/// Posts one invocation, retrying transport failures and timeouts.
pub fn remote_invoke(ep: &EndpointSpec, req: &InvokeRequest) -> Result<Vec<Payload>, BackendError> {
    ep.validate()?;
    let agent = ep.agent();
    let mut last = BackendError::Transport("no attempt made".into());
    for _ in 0..=ep.max_retries {
        let mut r = agent.post(&ep.url(INVOKE_PATH)).header("content-type", "application/json");
        if let Some(t) = ep.token() {
            r = r.header("authorization", &format!("Bearer {t}"));
        }
        let body = serde_json::to_string(req).expect("request serializes");
        match r.send(body.as_bytes()) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| BackendError::Transport(e.to_string()))?;
                if status != 200 {
                    return Err(BackendError::RemoteError { status, body: text });
                }
                return parse_response(&text);
            }
            Err(e) if is_timeout(&e) => last = BackendError::Timeout(ep.timeout),
            Err(e) => last = BackendError::Transport(e.to_string()),
        }
    }
    Err(last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub healthy: bool,
    pub latency_ms: u64,
    pub detail: String,
}

/// Probes the health path once; never fails, never retries.
pub fn health_check(ep: &EndpointSpec) -> HealthStatus {
    let started = Instant::now();
    let done = |healthy: bool, detail: String| HealthStatus {
        healthy,
        latency_ms: started.elapsed().as_millis() as u64,
        detail,
    };
    if let Err(e) = ep.validate() {
        return done(false, e.to_string());
    }
    match ep.agent().get(&ep.url(HEALTH_PATH)).call() {
        Ok(resp) if resp.status().as_u16() == 200 => done(true, "ok".into()),
        Ok(resp) => done(false, format!("status {}", resp.status().as_u16())),
        Err(e) if is_timeout(&e) => done(false, format!("timed out after {:?}", ep.timeout)),
        Err(e) => done(false, e.to_string()),
    }
}

/// Counting gate bounding concurrent requests to one endpoint.
#[derive(Debug, Default)]
struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn run<T>(&self, cap: usize, f: impl FnOnce() -> T) -> T {
        let mut n = self.active.lock().expect("gate lock");
        while *n >= cap {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        drop(n);
        let out = f();
        *self.active.lock().expect("gate lock") -= 1;
        self.freed.notify_one();
        out
    }
}

/// A primitive served by an endpoint. Clones share one in-flight gate.
#[derive(Debug, Clone)]
pub struct RemotePrimitive {
    pub endpoint: EndpointSpec,
    pub primitive_id: String,
    gate: Arc<InFlight>,
}

impl RemotePrimitive {
    pub fn new(endpoint: EndpointSpec, primitive_id: &str) -> Self {
        Self {
            endpoint,
            primitive_id: primitive_id.to_string(),
            gate: Arc::default(),
        }
    }
}

impl Primitive for RemotePrimitive {
    fn run(&self, call: &Call<'_>) -> Result<Vec<Payload>, String> {
        let req = InvokeRequest {
            version: WIRE_VERSION,
            primitive_id: self.primitive_id.clone(),
            task: call.task.spec.clone(),
            context_digest: hash_state(call.workspace).to_hex(),
            seed: call.seed,
            params: call.params.0.clone(),
        };
        self.gate
            .run(self.endpoint.max_in_flight, || remote_invoke(&self.endpoint, &req))
            .map_err(|e| e.to_string())
    }
}

/// Adds `desc.id` to `registry`, served by `ep`.
pub fn register_remote(
    registry: &Registry,
    ep: &EndpointSpec,
    desc: PrimitiveDescriptor,
) -> Result<Registry, PrimitiveError> {
    ep.validate()
        .map_err(|e| PrimitiveError::InvalidDescriptor(format!("{}: {e}", desc.id)))?;
    let imp = RemotePrimitive::new(ep.clone(), &desc.id);
    registry.register_remote(desc, imp)
}
