//! Client for an external text-generation service.
//!
//! Wire protocol: one `POST` per request to the endpoint URL with the JSON body
//!
//! ```text
//! {"prompt": "...", "max_new_tokens": 256, "temperature": 0.0, "stop": ["### Response:"]}
//! ```
//!
//! and the headers `content-type: application/json`, `x-request-id: <sample_id>`
//! and, when an API key is configured, `authorization: Bearer <key>`. A
//! successful reply is HTTP 2xx with the body `{"text": "..."}`; other fields
//! are ignored.
//!
//! Results are appended to the output JSONL as they complete, so a killed run
//! can be resumed: ids already present are skipped and a torn trailing line is
//! discarded. Once every request has resolved, the file is rewritten sorted by
//! `sample_id`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "CITEGEN_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("request {sample_id}: {reason}")]
    InvalidRequest { sample_id: String, reason: String },
    #[error("duplicate request id {0}")]
    DuplicateId(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("http client: {0}")]
    Http(#[from] reqwest::Error),
    #[error("async runtime: {0}")]
    Runtime(std::io::Error),
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ClientError + '_ {
    move |source| ClientError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub sample_id: String,
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    /// Greedy decoding, 256 new tokens, no stop sequences.
    pub fn new(sample_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        GenerationRequest {
            sample_id: sample_id.into(),
            prompt: prompt.into(),
            max_new_tokens: 256,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(ClientError::InvalidRequest {
                sample_id: self.sample_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.sample_id.is_empty() {
            return fail("empty sample_id");
        }
        if self.prompt.is_empty() {
            return fail("empty prompt");
        }
        if self.max_new_tokens == 0 {
            return fail("max_new_tokens must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be a finite non-negative number");
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_new_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub sample_id: String,
    pub text: String,
    /// Wall time of the successful attempt; kept out of the output file.
    #[serde(skip)]
    pub latency_ms: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub sample_id: String,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Endpoint {
    /// Reads the API key from [`API_KEY_ENV`] when set.
    pub fn from_env(url: impl Into<String>) -> Self {
        Endpoint {
            url: url.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    /// Upper bound on requests in flight.
    pub parallel: usize,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            parallel: 4,
            max_attempts: 3,
            initial_backoff_ms: 250,
            max_backoff_ms: 8_000,
            timeout_ms: 120_000,
        }
    }
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        if self.parallel == 0 {
            return Err(ClientError::InvalidPolicy("parallel must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(ClientError::InvalidPolicy("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// Delay before attempt `next` (2-based): doubling from the initial value.
    pub fn backoff(&self, next: u32) -> Duration {
        let exp = next.saturating_sub(2).min(20);
        let ms = self.initial_backoff_ms.saturating_mul(1 << exp);
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    /// Every completed result, resumed ones included, sorted by `sample_id`.
    pub results: Vec<GenerationResult>,
    pub failures: Vec<FailureRecord>,
    /// Requests skipped because the output already held them.
    pub resumed: usize,
    /// Requests sent to the endpoint in this run.
    pub attempted: usize,
}

impl BatchOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn failures_path(out: &Path) -> PathBuf {
    sibling(out, "failures.jsonl")
}

pub fn latency_path(out: &Path) -> PathBuf {
    sibling(out, "latency.jsonl")
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

/// Reads the completed results of an earlier run. Lines that do not parse
/// (a record torn by an interrupted write) are dropped; for repeated ids the
/// first line wins.
pub fn read_completed(out: &Path) -> Result<Vec<GenerationResult>> {
    let file = match File::open(out) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(out)(e)),
    };
    let mut seen = HashSet::new();
    let mut results = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(out))?;
        if let Ok(r) = serde_json::from_str::<GenerationResult>(&line) {
            if seen.insert(r.sample_id.clone()) {
                results.push(r);
            }
        }
    }
    Ok(results)
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let tmp = sibling(path, "tmp");
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("plain structs serialize");
        buf.push(b'\n');
    }
    fs::write(&tmp, &buf).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

async fn send_once(http: &reqwest::Client, endpoint: &Endpoint, req: &GenerationRequest) -> Attempt {
    let body = WireRequest {
        prompt: &req.prompt,
        max_new_tokens: req.max_new_tokens,
        temperature: req.temperature,
        stop: &req.stop_sequences,
    };
    let mut builder = http
        .post(&endpoint.url)
        .header("x-request-id", &req.sample_id)
        .json(&body);
    if let Some(key) = &endpoint.api_key {
        builder = builder.bearer_auth(key);
    }
    let response = match builder.send().await {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(format!("transport: {e}")),
    };
    let status = response.status();
    if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
        return Attempt::Retry(format!("status {status}"));
    }
    if !status.is_success() {
        return Attempt::Fatal(format!("status {status}"));
    }
    let bytes = match response.bytes().await {
        Ok(b) => b,
        Err(e) => return Attempt::Retry(format!("reading body: {e}")),
    };
    match serde_json::from_slice::<WireResponse>(&bytes) {
        Ok(w) => Attempt::Done(w.text),
        Err(e) => Attempt::Fatal(format!("malformed response: {e}")),
    }
}

async fn run_one(
    http: &reqwest::Client,
    endpoint: &Endpoint,
    policy: &Policy,
    req: &GenerationRequest,
) -> std::result::Result<GenerationResult, FailureRecord> {
    let mut last = String::new();
    for attempt in 1..=policy.max_attempts {
        if attempt > 1 {
            tokio::time::sleep(policy.backoff(attempt)).await;
        }
        let started = Instant::now();
        match send_once(http, endpoint, req).await {
            Attempt::Done(text) => {
                return Ok(GenerationResult {
                    sample_id: req.sample_id.clone(),
                    text,
                    latency_ms: started.elapsed().as_millis() as u64,
                    attempt,
                })
            }
            Attempt::Retry(e) => last = e,
            Attempt::Fatal(e) => {
                return Err(FailureRecord {
                    sample_id: req.sample_id.clone(),
                    attempts: attempt,
                    error: e,
                })
            }
        }
    }
    Err(FailureRecord {
        sample_id: req.sample_id.clone(),
        attempts: policy.max_attempts,
        error: last,
    })
}

#[derive(Serialize)]
struct LatencyRow<'a> {
    sample_id: &'a str,
    latency_ms: u64,
    attempt: u32,
}

/// Sends every request not already completed in `out`, at most
/// `policy.parallel` at a time, appending each result to `out` as it lands.
/// Failures are written to [`failures_path`] and do not abort the batch.
pub async fn generate_batch(
    requests: &[GenerationRequest],
    endpoint: &Endpoint,
    policy: &Policy,
    out: &Path,
) -> Result<BatchOutcome> {
    policy.validate()?;
    let mut ids = HashSet::new();
    for r in requests {
        r.validate()?;
        if !ids.insert(r.sample_id.as_str()) {
            return Err(ClientError::DuplicateId(r.sample_id.clone()));
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let previous = read_completed(out)?;
    // Drop any torn tail before appending.
    write_lines(out, &previous)?;
    let done: HashSet<&str> = previous.iter().map(|r| r.sample_id.as_str()).collect();
    let pending: Vec<&GenerationRequest> = requests
        .iter()
        .filter(|r| !done.contains(r.sample_id.as_str()))
        .collect();
    let resumed = requests.len() - pending.len();

    let http = reqwest::Client::builder()
        .timeout(Duration::from_millis(policy.timeout_ms))
        .build()?;
    let mut log = OpenOptions::new().append(true).open(out).map_err(io_err(out))?;
    let latency_file = latency_path(out);
    let mut latency_log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&latency_file)
        .map_err(io_err(&latency_file))?;

    let mut results: BTreeMap<String, GenerationResult> =
        previous.into_iter().map(|r| (r.sample_id.clone(), r)).collect();
    let mut failures = Vec::new();
    let attempted = pending.len();
    let mut completions = stream::iter(pending)
        .map(|req| run_one(&http, endpoint, policy, req))
        .buffer_unordered(policy.parallel);
    while let Some(outcome) = completions.next().await {
        match outcome {
            Ok(result) => {
                let mut line = serde_json::to_vec(&result).expect("plain structs serialize");
                line.push(b'\n');
                log.write_all(&line).map_err(io_err(out))?;
                log.flush().map_err(io_err(out))?;
                let mut timing = serde_json::to_vec(&LatencyRow {
                    sample_id: &result.sample_id,
                    latency_ms: result.latency_ms,
                    attempt: result.attempt,
                })
                .expect("plain structs serialize");
                timing.push(b'\n');
                latency_log.write_all(&timing).map_err(io_err(&latency_file))?;
                results.insert(result.sample_id.clone(), result);
            }
            Err(failure) => failures.push(failure),
        }
    }
    drop(log);

    let results: Vec<GenerationResult> = results.into_values().collect();
    failures.sort_by(|a: &FailureRecord, b| a.sample_id.cmp(&b.sample_id));
    let failure_file = failures_path(out);
    if failures.is_empty() {
        write_lines(out, &results)?;
        match fs::remove_file(&failure_file) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&failure_file)(e)),
        }
    } else {
        write_lines(&failure_file, &failures)?;
    }
    Ok(BatchOutcome {
        results,
        failures,
        resumed,
        attempted,
    })
}

/// [`generate_batch`] on a private multi-threaded runtime.
pub fn generate_batch_blocking(
    requests: &[GenerationRequest],
    endpoint: &Endpoint,
    policy: &Policy,
    out: &Path,
) -> Result<BatchOutcome> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(ClientError::Runtime)?;
    runtime.block_on(generate_batch(requests, endpoint, policy, out))
}
