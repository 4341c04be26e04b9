//! Forecaster backends and response parsing.
//!
//! Backends answer in the same scale as the prompt they were given: with
//! normalization active they see token indices and must reply with token
//! indices. Mapping replies back to domain units is the caller's job.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::Prompt;

pub const API_KEY_ENV: &str = "TOKON_API_KEY";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRequest {
    pub prompt: Prompt,
    pub horizon: usize,
    pub series_id: String,
    /// Context values in prompt scale.
    pub context: Vec<f64>,
    /// Ground truth in prompt scale; only the quantizing oracle reads it.
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub raw_text: String,
    pub parsed_values: Vec<f64>,
    pub attempts: u32,
    pub failed: bool,
}

impl ForecastResponse {
    fn failure(raw_text: String, attempts: u32) -> Self {
        Self { raw_text, parsed_values: Vec::new(), attempts, failed: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteLlm,
    NaiveLast,
    SeasonalNaive,
    QuantizingOracle,
    Replay,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::RemoteLlm => "remote-llm",
            BackendKind::NaiveLast => "naive-last",
            BackendKind::SeasonalNaive => "seasonal-naive",
            BackendKind::QuantizingOracle => "quantizing-oracle",
            BackendKind::Replay => "replay",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "remote-llm" | "remote" => BackendKind::RemoteLlm,
            "naive-last" => BackendKind::NaiveLast,
            "seasonal-naive" => BackendKind::SeasonalNaive,
            "quantizing-oracle" | "oracle" => BackendKind::QuantizingOracle,
            "replay" => BackendKind::Replay,
            other => return Err(Error::InvalidConfig(format!("unknown backend `{other}`"))),
        })
    }
}

/// Backend selection and settings. Never holds the API key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub api_base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub parallelism: usize,
    pub seasonal_period: Option<usize>,
    pub replay_path: Option<PathBuf>,
    pub requests_per_minute: Option<f64>,
    pub retry_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            api_base_url: DEFAULT_API_BASE.into(),
            model_name: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_retries: 2,
            parallelism: 1,
            seasonal_period: None,
            replay_path: None,
            requests_per_minute: None,
            retry_backoff_ms: 500,
            timeout_secs: 120,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::InvalidConfig("parallelism must be positive".into()));
        }
        match self.kind {
            BackendKind::SeasonalNaive if self.seasonal_period.unwrap_or(0) == 0 => {
                Err(Error::InvalidConfig("seasonal-naive needs a positive seasonal_period".into()))
            }
            BackendKind::Replay if self.replay_path.is_none() => {
                Err(Error::InvalidConfig("replay backend needs replay_path".into()))
            }
            BackendKind::RemoteLlm if self.api_base_url.is_empty() || self.model_name.is_empty() => {
                Err(Error::InvalidConfig("remote backend needs api_base_url and model_name".into()))
            }
            BackendKind::RemoteLlm if !self.temperature.is_finite() || self.temperature < 0.0 => {
                Err(Error::InvalidConfig("temperature must be finite and non-negative".into()))
            }
            BackendKind::RemoteLlm if self.requests_per_minute.is_some_and(|r| !(r > 0.0)) => {
                Err(Error::InvalidConfig("requests_per_minute must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

pub trait Forecaster: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// One attempt; returns the reply text.
    fn complete(&self, req: &ForecastRequest) -> Result<String>;

    /// Re-queries allowed after a parse failure or transient error.
    fn max_retries(&self) -> u32 {
        0
    }

    fn backoff(&self, _attempt: u32) -> Duration {
        Duration::ZERO
    }

    fn parallelism(&self) -> usize {
        1
    }
}

/// Builds the backend described by `cfg`. The remote backend reads its key
/// from [`API_KEY_ENV`].
pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn Forecaster>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::NaiveLast => Box::new(NaiveLast),
        BackendKind::SeasonalNaive => Box::new(SeasonalNaive { period: cfg.seasonal_period.expect("validated") }),
        BackendKind::QuantizingOracle => Box::new(QuantizingOracle),
        BackendKind::Replay => Box::new(Replay::load(cfg.replay_path.as_ref().expect("validated"))?),
        BackendKind::RemoteLlm => Box::new(RemoteLlm::from_env(cfg)?),
    })
}

/// Runs one request with the backend's retry policy. Only authentication
/// failures are returned as errors; anything else yields a failed response.
pub fn forecast(backend: &dyn Forecaster, req: &ForecastRequest) -> Result<ForecastResponse> {
    if req.horizon == 0 {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let mut attempts = 0;
    let mut last_text = String::new();
    loop {
        attempts += 1;
        let retryable = match backend.complete(req) {
            Ok(text) => match parse_numeric_response(&text, req.horizon) {
                Ok(parsed_values) => {
                    return Ok(ForecastResponse { raw_text: text, parsed_values, attempts, failed: false })
                }
                Err(e) => {
                    log::debug!("series {}: {e}", req.series_id);
                    last_text = text;
                    true
                }
            },
            Err(e @ Error::Auth(_)) => return Err(e),
            Err(e) => {
                log::warn!("series {}: attempt {attempts}: {e}", req.series_id);
                e.is_retryable()
            }
        };
        if !retryable || attempts > backend.max_retries() {
            return Ok(ForecastResponse::failure(last_text, attempts));
        }
        std::thread::sleep(backend.backoff(attempts));
    }
}

/// Forecasts every request with up to `backend.parallelism()` in flight.
/// Responses come back in input order.
pub fn forecast_batch(backend: &dyn Forecaster, reqs: &[ForecastRequest]) -> Result<Vec<ForecastResponse>> {
    let workers = backend.parallelism().clamp(1, reqs.len().max(1));
    if workers == 1 {
        return reqs.iter().map(|r| forecast(backend, r)).collect();
    }
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<ForecastResponse>>>> = Mutex::new((0..reqs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= reqs.len() {
                    break;
                }
                let out = forecast(backend, &reqs[i]);
                if out.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                slots.lock().expect("slot lock")[i] = Some(out);
            });
        }
    });
    let slots = slots.into_inner().expect("slot lock");
    if let Some(Err(_)) = slots.iter().flatten().find(|r| r.is_err()) {
        let err = slots.into_iter().flatten().find_map(|r| r.err()).expect("found above");
        return Err(err);
    }
    Ok(slots.into_iter().map(|s| s.expect("every slot filled").expect("no errors")).collect())
}

/// Extracts every maximal decimal number (optional sign, digits, optional
/// fraction) in order and keeps the first `horizon`.
///
/// A sign only counts when it does not follow an alphanumeric character, so
/// ranges and dates such as `2014-01` do not produce negative numbers.
pub fn parse_numeric_response(raw_text: &str, horizon: usize) -> Result<Vec<f64>> {
    let numbers = scan_numbers(raw_text);
    if numbers.is_empty() {
        return Err(Error::NoNumbers);
    }
    if numbers.len() < horizon {
        return Err(Error::TooFewNumbers { found: numbers.len(), needed: horizon });
    }
    Ok(numbers.into_iter().take(horizon).collect())
}

fn scan_numbers(text: &str) -> Vec<f64> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let signed = matches!(b[i], b'-' | b'+')
            && b.get(i + 1).is_some_and(u8::is_ascii_digit)
            && (i == 0 || !(b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'.'));
        if !signed && !b[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        if signed {
            i += 1;
        }
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if let Ok(v) = text[start..i].parse::<f64>() {
            if v.is_finite() {
                out.push(v);
            }
        }
    }
    out
}

/// Renders values so that [`parse_numeric_response`] reads them back exactly.
pub fn render_values(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveLast;

impl Forecaster for NaiveLast {
    fn kind(&self) -> BackendKind {
        BackendKind::NaiveLast
    }

    fn complete(&self, req: &ForecastRequest) -> Result<String> {
        let last = *req.context.last().ok_or(Error::EmptyInput)?;
        Ok(render_values(&vec![last; req.horizon]))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SeasonalNaive {
    pub period: usize,
}

impl Forecaster for SeasonalNaive {
    fn kind(&self) -> BackendKind {
        BackendKind::SeasonalNaive
    }

    fn complete(&self, req: &ForecastRequest) -> Result<String> {
        let n = req.context.len();
        if self.period == 0 || self.period > n {
            return Err(Error::InvalidParams(format!(
                "seasonal period {} does not fit context of length {n}",
                self.period
            )));
        }
        let season = &req.context[n - self.period..];
        let values: Vec<f64> = (0..req.horizon).map(|h| season[h % self.period]).collect();
        Ok(render_values(&values))
    }
}

/// Answers with the ground truth as it appears in the prompt's scale, so
/// after mapping back to domain units its only error is quantization.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuantizingOracle;

impl Forecaster for QuantizingOracle {
    fn kind(&self) -> BackendKind {
        BackendKind::QuantizingOracle
    }

    fn complete(&self, req: &ForecastRequest) -> Result<String> {
        let truth =
            req.reference.as_ref().ok_or_else(|| Error::InvalidParams("oracle request carries no reference".into()))?;
        Ok(render_values(truth))
    }
}

/// Canned replies keyed by series id.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    replies: HashMap<String, String>,
}

impl Replay {
    pub fn new(replies: HashMap<String, String>) -> Self {
        Self { replies }
    }

    /// Reads `series_id<TAB>raw_text` lines; `\n`, `\t` and `\\` in the text
    /// are unescaped. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut replies = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, raw) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
                line: idx + 1,
                reason: "expected `series_id<TAB>raw_text`".into(),
            })?;
            replies.insert(id.to_string(), unescape(raw));
        }
        Ok(Self { replies })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Forecaster for Replay {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, req: &ForecastRequest) -> Result<String> {
        self.replies.get(&req.series_id).cloned().ok_or_else(|| Error::ReplayMissing(req.series_id.clone()))
    }
}

/// One replay fixture line for `series_id` and `raw_text`, without newline.
pub fn replay_line(series_id: &str, raw_text: &str) -> String {
    format!("{series_id}\t{}", escape(raw_text))
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\t', "\\t").replace('\r', "\\r")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Token bucket refilled continuously at `per_minute / 60` tokens a second.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: f64) -> Self {
        let capacity = per_minute.max(1.0);
        Self { capacity, per_second: per_minute / 60.0, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Blocks until a request may be issued.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                let (tokens, last) = *state;
                let refilled = (tokens + now.duration_since(last).as_secs_f64() * self.per_second).min(self.capacity);
                if refilled >= 1.0 {
                    *state = (refilled - 1.0, now);
                    return;
                }
                *state = (refilled, now);
                Duration::from_secs_f64((1.0 - refilled) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completions client: `POST {api_base_url}/chat/completions` with
/// bearer auth and a single user message.
pub struct RemoteLlm {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    model: String,
    temperature: f64,
    max_retries: u32,
    backoff_ms: u64,
    parallelism: usize,
    limiter: Option<RateLimiter>,
}

impl fmt::Debug for RemoteLlm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteLlm")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"<redacted>")
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl RemoteLlm {
    pub fn from_env(cfg: &BackendConfig) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Auth(format!("environment variable {API_KEY_ENV} is not set")))?;
        Self::new(cfg, key)
    }

    pub fn new(cfg: &BackendConfig, api_key: String) -> Result<Self> {
        cfg.validate()?;
        if api_key.trim().is_empty() {
            return Err(Error::Auth("API key is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Network(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", cfg.api_base_url.trim_end_matches('/')),
            api_key,
            model: cfg.model_name.clone(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            backoff_ms: cfg.retry_backoff_ms,
            parallelism: cfg.parallelism,
            limiter: cfg.requests_per_minute.map(RateLimiter::per_minute),
        })
    }
}

impl Forecaster for RemoteLlm {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteLlm
    }

    fn complete(&self, req: &ForecastRequest) -> Result<String> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage { role: "user", content: &req.prompt.text }],
            temperature: self.temperature,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Error::Network(e.without_url().to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(Error::Auth(format!("endpoint rejected credentials ({status})")));
        }
        if !status.is_success() {
            return Err(Error::Network(format!("endpoint returned {status}")));
        }
        let reply: ChatReply =
            resp.json().map_err(|e| Error::Network(format!("malformed reply body: {}", e.without_url())))?;
        Ok(reply.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
    }

    fn max_retries(&self) -> u32 {
        self.max_retries
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1 << attempt.saturating_sub(1).min(6)))
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }
}
