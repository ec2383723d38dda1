//! Chat-completion client used for prompt-driven placement.
//!
//! A [`Gateway`] is either live (an HTTP endpoint reached through a
//! [`Transport`]) or mocked by a scripted list of replies. Mock mode never
//! touches the transport.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage_map::CoverageMap;
use crate::placement::PlacementProblem;

/// Environment variable holding the endpoint API key.
pub const API_KEY_ENV: &str = "SKYPLAN_LLM_API_KEY";
/// Size cap of the rendered RSRP digest, in bytes.
pub const DIGEST_LIMIT_BYTES: usize = 100_000;
pub const DEFAULT_DIGEST_STRIDE_M: f64 = 10.0;

pub const SYSTEM_PROMPT: &str = "You are a wireless network planning assistant. \
You place UAVs served by a multi-beam base station so that their sum rate is maximal. \
Answer with coordinates only in the requested format.";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("could not parse coordinates: {0}")]
    Parse(String),
    #[error("expected {expected} coordinate pairs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("map digest is {bytes} bytes, above the {limit} byte limit; use a stride of at least {suggested_stride} m")]
    DigestTooLarge { bytes: usize, limit: usize, suggested_stride: f64 },
}

impl GatewayError {
    fn retryable(&self) -> bool {
        !matches!(self, GatewayError::Config(_) | GatewayError::DigestTooLarge { .. })
    }
}

/// A string that never prints its content.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()).map(Self)
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub api_key: Option<Secret>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub mock_script: Option<Vec<String>>,
    /// Spacing of the RSRP digest sent with placement prompts (meters).
    pub digest_stride_m: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: None,
            model_name: String::new(),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            mock_script: None,
            digest_stride_m: DEFAULT_DIGEST_STRIDE_M,
        }
    }
}

impl GatewayConfig {
    pub fn mock(script: Vec<String>) -> Self {
        Self { mock_script: Some(script), ..Self::default() }
    }

    /// Live configuration with the key taken from [`API_KEY_ENV`].
    pub fn live(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            api_key: Secret::from_env(),
            ..Self::default()
        }
    }

    pub fn is_mock(&self) -> bool {
        self.mock_script.is_some()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.into()));
        if !(self.digest_stride_m > 0.0 && self.digest_stride_m.is_finite()) {
            return bad("digest stride must be > 0");
        }
        match &self.mock_script {
            Some(s) if s.is_empty() => bad("mock script must hold at least one response"),
            Some(_) => Ok(()),
            None => {
                if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    return bad("live mode requires an endpoint URL");
                }
                if self.api_key.is_none() {
                    return Err(GatewayError::Config(format!("live mode requires an API key in {API_KEY_ENV}")));
                }
                if self.model_name.is_empty() {
                    return bad("live mode requires a model name");
                }
                if self.timeout.is_zero() {
                    return bad("timeout must be > 0");
                }
                Ok(())
            }
        }
    }
}

/// Sends one JSON request body and returns the raw response body.
pub trait Transport: Send {
    fn post_json(&mut self, url: &str, api_key: &Secret, body: &str, timeout: Duration) -> Result<String, GatewayError>;
}

/// Blocking HTTP(S) transport.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(&mut self, url: &str, api_key: &Secret, body: &str, timeout: Duration) -> Result<String, GatewayError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(url)
            .header("Authorization", &format!("Bearer {}", api_key.expose()))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => GatewayError::Timeout(timeout),
                other => GatewayError::Transport(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let mut body = text;
            body.truncate(500);
            return Err(GatewayError::Http { status, body });
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementPrompt {
    pub uav_count: usize,
    pub task_text: String,
    pub map_digest: String,
    pub response_schema_text: String,
}

impl PlacementPrompt {
    pub fn user_message(&self) -> String {
        format!(
            "{}\n\nRSRP measurements (dBm) per beam:\n```csv\n{}```\n\n{}",
            self.task_text, self.map_digest, self.response_schema_text
        )
    }
}

/// Numbers with at most two fraction digits and no trailing zeros.
fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn build_prompt(problem: &PlacementProblem, map: &CoverageMap, stride: f64) -> Result<PlacementPrompt, GatewayError> {
    if !(stride >= map.resolution - 1e-9) || !stride.is_finite() {
        return Err(GatewayError::Config(format!(
            "digest stride {stride} m is below the map resolution {} m",
            map.resolution
        )));
    }
    let step = ((stride / map.resolution).round() as usize).max(1);
    let a = &problem.area;
    let k = problem.uav_count;
    let task_text = format!(
        "Task: choose positions for {k} UAVs at altitude {} m that maximize the sum of their downlink rates.\n\
         Each UAV is served by the beam with the strongest RSRP at its position; all other beams interfere.\n\
         UAVs served by the same beam share its bandwidth equally.\n\
         Total bandwidth per beam: {} MHz. Noise power: {} dBm.\n\
         Area: x in [{}, {}] m, y in [{}, {}] m.\n\
         Any two UAVs must be at least {} m apart.\n\
         Exactly {k} coordinate pairs are required.",
        num(problem.altitude),
        num(problem.channel.bandwidth_hz / 1e6),
        num(problem.channel.noise_power_dbm),
        num(a.x_min),
        num(a.x_max),
        num(a.y_min),
        num(a.y_max),
        num(problem.min_separation),
    );
    let mut digest = String::from("beam,x,y,rsrp\n");
    for b in 0..map.beam_count {
        for ix in (0..map.nx).step_by(step) {
            for iy in (0..map.ny).step_by(step) {
                let (x, y) = map.node_position(ix, iy);
                let v = map.node(b, ix, iy);
                if !v.is_finite() || !a.contains(x, y) {
                    continue;
                }
                digest.push_str(&format!("{b},{},{},{}\n", num(x), num(y), num(v)));
            }
        }
    }
    if digest.len() > DIGEST_LIMIT_BYTES {
        let factor = (digest.len() as f64 / DIGEST_LIMIT_BYTES as f64).sqrt();
        let suggested_stride = ((step as f64 * factor).ceil() * map.resolution).max(stride + map.resolution);
        return Err(GatewayError::DigestTooLarge { bytes: digest.len(), limit: DIGEST_LIMIT_BYTES, suggested_stride });
    }
    let response_schema_text = format!(
        "Reply with a single fenced JSON block holding an array of exactly {k} [x, y] pairs in meters, \
         for example:\n```json\n[{}]\n```",
        vec!["[x, y]"; k].join(", ")
    );
    Ok(PlacementPrompt { uav_count: k, task_text, map_digest: digest, response_schema_text })
}

/// Extracts the first fenced block that holds a JSON array and reads it as
/// `expected` numeric `[x, y]` pairs.
pub fn parse_coordinates(text: &str, expected: usize) -> Result<Vec<(f64, f64)>, GatewayError> {
    let mut rest = text;
    let mut array = None;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let Some(end) = after.find("```") else { break };
        let body = after[..end].trim_start_matches(|c: char| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if let Ok(v @ serde_json::Value::Array(_)) = serde_json::from_str::<serde_json::Value>(body.trim()) {
            array = Some(v);
            break;
        }
        rest = &after[end + 3..];
    }
    let Some(serde_json::Value::Array(items)) = array else {
        return Err(GatewayError::Parse("no fenced JSON array in response".into()));
    };
    let pairs = items
        .iter()
        .map(|item| match item.as_array().map(Vec::as_slice) {
            Some([x, y]) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Ok((x, y)),
                _ => Err(GatewayError::Parse(format!("non-numeric pair {item}"))),
            },
            _ => Err(GatewayError::Parse(format!("expected an [x, y] pair, got {item}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if pairs.len() != expected {
        return Err(GatewayError::Arity { expected, got: pairs.len() });
    }
    Ok(pairs)
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
}

fn reply_content(body: &str) -> Result<String, GatewayError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::Parse(format!("response is not JSON: {e}")))?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::Parse("response lacks choices[0].message.content".into()))
}

/// One handle per conversation partner; requests are sequential.
pub struct Gateway {
    cfg: GatewayConfig,
    transport: Box<dyn Transport>,
    mock_cursor: usize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).field("mock_cursor", &self.mock_cursor).finish()
    }
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        Self::with_transport(cfg, Box::new(HttpTransport))
    }

    pub fn with_transport(cfg: GatewayConfig, transport: Box<dyn Transport>) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(Self { cfg, transport, mock_cursor: 0 })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// Single completion; mock scripts replay in order and repeat their last
    /// entry.
    pub fn complete(&mut self, system: &str, user: &str) -> Result<String, GatewayError> {
        if let Some(script) = &self.cfg.mock_script {
            let reply = script[self.mock_cursor.min(script.len() - 1)].clone();
            self.mock_cursor += 1;
            return Ok(reply);
        }
        let req = ChatRequest {
            model: &self.cfg.model_name,
            messages: [ChatMessage { role: "system", content: system }, ChatMessage { role: "user", content: user }],
            temperature: 0.0,
        };
        let body = serde_json::to_string(&req).map_err(|e| GatewayError::Transport(e.to_string()))?;
        let url = self.cfg.endpoint_url.as_deref().unwrap_or_default();
        let key = self.cfg.api_key.as_ref().ok_or_else(|| GatewayError::Config("missing API key".into()))?;
        let raw = self.transport.post_json(url, key, &body, self.cfg.timeout)?;
        reply_content(&raw)
    }

    /// Requests coordinates, retrying transport and parse failures up to
    /// `max_retries` times. The last error is returned when all attempts fail.
    pub fn request_placement(&mut self, prompt: &PlacementPrompt) -> Result<Vec<(f64, f64)>, GatewayError> {
        let user = prompt.user_message();
        let mut last = None;
        for _ in 0..=self.cfg.max_retries {
            let result = self.complete(SYSTEM_PROMPT, &user).and_then(|r| parse_coordinates(&r, prompt.uav_count));
            match result {
                Ok(c) => return Ok(c),
                Err(e) if e.retryable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
