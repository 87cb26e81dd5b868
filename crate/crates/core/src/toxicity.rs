//! Toxicity scoring: a rate-limited client for remote scorers speaking the
//! Perspective wire protocol, a deterministic offline stub for tests and
//! air-gapped runs, and the strict `score > threshold` classifier.
//!
//! Every scorer failure leaves the record unscored — a first-class, auditable
//! outcome — rather than silently normal.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::normalize;
use crate::label::Label;

static PROFANITY_SEED_RAW: &str = include_str!("../data/profanity_seed.txt");

/// Classification threshold: antisocial iff score is strictly greater.
pub const DEFAULT_TOXICITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ToxicityError {
    #[error("invalid scorer configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("rate limited by scorer after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("scorer request timed out")]
    Timeout,
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// Remote scorer settings. The API key is a secret: it never appears in
/// `Debug` output and is expected to come from the environment, not from
/// config files.
#[derive(Clone, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub endpoint_url: String,
    #[serde(skip_serializing, default)]
    pub api_key: String,
    pub max_qps: u32,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub threshold: f64,
    pub cache_path: Option<PathBuf>,
    /// First 429 backoff delay; doubles per retry with jitter.
    pub backoff_base_secs: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            endpoint_url: "https://commentanalyzer.googleapis.com/v1alpha1/comments:analyze"
                .to_string(),
            api_key: String::new(),
            max_qps: 10,
            max_retries: 5,
            timeout_secs: 10.0,
            threshold: DEFAULT_TOXICITY_THRESHOLD,
            cache_path: None,
            backoff_base_secs: 1.0,
        }
    }
}

impl fmt::Debug for ScorerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScorerConfig")
            .field("endpoint_url", &self.endpoint_url)
            .field("api_key", &"<redacted>")
            .field("max_qps", &self.max_qps)
            .field("max_retries", &self.max_retries)
            .field("timeout_secs", &self.timeout_secs)
            .field("threshold", &self.threshold)
            .field("cache_path", &self.cache_path)
            .field("backoff_base_secs", &self.backoff_base_secs)
            .finish()
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), ToxicityError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ToxicityError::InvalidConfig(
                "threshold must be in [0, 1]".to_string(),
            ));
        }
        if self.max_qps < 1 {
            return Err(ToxicityError::InvalidConfig("max_qps must be >= 1".to_string()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(ToxicityError::InvalidConfig("timeout must be > 0".to_string()));
        }
        if !(self.backoff_base_secs > 0.0) {
            return Err(ToxicityError::InvalidConfig(
                "backoff base must be > 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// Which path produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Remote,
    Stub,
    Cached,
}

/// A toxicity score in `[0, 1]` for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityScore {
    pub source_id: String,
    pub score: f64,
    pub scorer: ScorerKind,
}

/// Strict-threshold classification: antisocial iff `score > threshold`.
/// A score of exactly `threshold` is normal.
pub fn classify_score(score: f64, threshold: f64) -> Label {
    if score > threshold {
        Label::Antisocial
    } else {
        Label::Normal
    }
}

pub fn classify(score: &ToxicityScore, threshold: f64) -> Label {
    classify_score(score.score, threshold)
}

fn profanity_seed_set() -> &'static std::collections::HashSet<&'static str> {
    static SET: std::sync::OnceLock<std::collections::HashSet<&'static str>> =
        std::sync::OnceLock::new();
    SET.get_or_init(|| {
        PROFANITY_SEED_RAW
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Deterministic offline score: a 0.1 baseline blended with seed-list hits,
/// `0.1 + 0.9 * min(1, 0.2 * hits)`, where hits counts normalized token
/// occurrences found in the bundled profanity seed list. Zero hits score the
/// bare baseline; five or more saturate at 1.0.
pub fn stub_score_value(text: &str) -> f64 {
    let seeds = profanity_seed_set();
    let hits = normalize(text)
        .iter()
        .filter(|t| seeds.contains(t.as_str()))
        .count();
    0.1 + 0.9 * (0.2 * hits as f64).min(1.0)
}

pub fn score_stub(source_id: &str, text: &str) -> ToxicityScore {
    ToxicityScore {
        source_id: source_id.to_string(),
        score: stub_score_value(text),
        scorer: ScorerKind::Stub,
    }
}

/// Sliding-window rate limiter: at most `max_per_window` acquisitions in any
/// trailing window. Internally synchronized; `acquire` blocks until a slot
/// frees up.
struct RateLimiter {
    max_per_window: u32,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    fn new(max_per_window: u32, window: Duration) -> RateLimiter {
        RateLimiter {
            max_per_window,
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = Instant::now();
                while issued
                    .front()
                    .is_some_and(|&t| now.duration_since(t) >= self.window)
                {
                    issued.pop_front();
                }
                if issued.len() < self.max_per_window as usize {
                    issued.push_back(now);
                    return;
                }
                self.window - now.duration_since(*issued.front().unwrap())
            };
            // Small pad so the oldest entry has actually aged out on retry.
            std::thread::sleep(wait + Duration::from_millis(5));
        }
    }
}

/// Content-hash keyed score cache persisted as line-delimited JSON
/// `{sha256, score}`. Keyed by text hash, not record id, so retweets with
/// identical text are scored once.
struct ScoreCache {
    map: Mutex<HashMap<String, f64>>,
    file: Option<Mutex<File>>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    sha256: String,
    score: f64,
}

fn text_digest(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

impl ScoreCache {
    fn open(path: Option<&PathBuf>) -> Result<ScoreCache, ToxicityError> {
        let mut map = HashMap::new();
        let file = match path {
            None => None,
            Some(path) => {
                if path.exists() {
                    let reader = BufReader::new(File::open(path)?);
                    for (idx, line) in reader.lines().enumerate() {
                        let line = line?;
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<CacheLine>(&line) {
                            Ok(entry) => {
                                map.insert(entry.sha256, entry.score);
                            }
                            Err(e) => {
                                log::warn!(
                                    "skipping corrupt cache line {}:{}: {e}",
                                    path.display(),
                                    idx + 1
                                );
                            }
                        }
                    }
                }
                Some(Mutex::new(
                    OpenOptions::new().create(true).append(true).open(path)?,
                ))
            }
        };
        Ok(ScoreCache {
            map: Mutex::new(map),
            file,
        })
    }

    fn get(&self, digest: &str) -> Option<f64> {
        self.map.lock().unwrap().get(digest).copied()
    }

    fn insert(&self, digest: String, score: f64) -> Result<(), ToxicityError> {
        if let Some(file) = &self.file {
            let mut file = file.lock().unwrap();
            serde_json::to_writer(
                &mut *file,
                &CacheLine {
                    sha256: digest.clone(),
                    score,
                },
            )
            .map_err(io::Error::from)?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        self.map.lock().unwrap().insert(digest, score);
        Ok(())
    }
}

#[derive(Serialize)]
struct AnalyzeRequest<'a> {
    comment: Comment<'a>,
    languages: [&'static str; 1],
    #[serde(rename = "requestedAttributes")]
    requested_attributes: RequestedAttributes,
}

#[derive(Serialize)]
struct Comment<'a> {
    text: &'a str,
}

#[derive(Serialize)]
struct RequestedAttributes {
    #[serde(rename = "TOXICITY")]
    toxicity: EmptyAttribute,
}

#[derive(Serialize)]
struct EmptyAttribute {}

/// Serialized request body for a comment, exactly as sent on the wire.
pub fn analyze_request_body(text: &str) -> String {
    serde_json::to_string(&AnalyzeRequest {
        comment: Comment { text },
        languages: ["en"],
        requested_attributes: RequestedAttributes {
            toxicity: EmptyAttribute {},
        },
    })
    .expect("request serialization cannot fail")
}

#[derive(Deserialize)]
struct AnalyzeResponse {
    #[serde(rename = "attributeScores")]
    attribute_scores: AttributeScores,
}

#[derive(Deserialize)]
struct AttributeScores {
    #[serde(rename = "TOXICITY")]
    toxicity: AttributeScore,
}

#[derive(Deserialize)]
struct AttributeScore {
    #[serde(rename = "summaryScore")]
    summary_score: SummaryScore,
}

#[derive(Deserialize)]
struct SummaryScore {
    value: f64,
}

/// Rate-limited, caching client for a remote toxicity scorer. Shareable
/// across worker threads; the limiter and cache are internally synchronized.
pub struct ToxicityClient {
    config: ScorerConfig,
    http: reqwest::blocking::Client,
    limiter: RateLimiter,
    cache: ScoreCache,
}

impl ToxicityClient {
    pub fn new(config: ScorerConfig) -> Result<ToxicityClient, ToxicityError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ToxicityError::Transport(e.to_string()))?;
        let limiter = RateLimiter::new(config.max_qps, Duration::from_secs(1));
        let cache = ScoreCache::open(config.cache_path.as_ref())?;
        Ok(ToxicityClient {
            config,
            http,
            limiter,
            cache,
        })
    }

    /// Scores raw text. Cached responses answer without any HTTP call; cache
    /// misses POST to the scorer with 429-backoff (base delay doubling per
    /// retry, with jitter) and never exceed `max_qps` issued requests in any
    /// one-second window.
    pub fn score(&self, source_id: &str, text: &str) -> Result<ToxicityScore, ToxicityError> {
        let digest = text_digest(text);
        if let Some(score) = self.cache.get(&digest) {
            return Ok(ToxicityScore {
                source_id: source_id.to_string(),
                score,
                scorer: ScorerKind::Cached,
            });
        }

        let mut attempts = 0u32;
        loop {
            attempts += 1;
            self.limiter.acquire();
            match self.request_once(text) {
                Ok(score) => {
                    self.cache.insert(digest, score)?;
                    return Ok(ToxicityScore {
                        source_id: source_id.to_string(),
                        score,
                        scorer: ScorerKind::Remote,
                    });
                }
                Err(RequestOutcome::RateLimited) => {
                    if attempts > self.config.max_retries {
                        return Err(ToxicityError::RateLimited { attempts });
                    }
                    let exp = self.config.backoff_base_secs * 2f64.powi(attempts as i32 - 1);
                    let jitter = rand::thread_rng().gen_range(0.5..1.5);
                    std::thread::sleep(Duration::from_secs_f64(exp * jitter));
                }
                Err(RequestOutcome::Fatal(err)) => return Err(err),
            }
        }
    }

    fn request_once(&self, text: &str) -> Result<f64, RequestOutcome> {
        let response = self
            .http
            .post(&self.config.endpoint_url)
            .query(&[("key", self.config.api_key.as_str())])
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(analyze_request_body(text))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    RequestOutcome::Fatal(ToxicityError::Timeout)
                } else {
                    RequestOutcome::Fatal(ToxicityError::Transport(e.to_string()))
                }
            })?;

        let status = response.status();
        if status.as_u16() == 429 {
            return Err(RequestOutcome::RateLimited);
        }
        if !status.is_success() {
            return Err(RequestOutcome::Fatal(ToxicityError::Protocol(format!(
                "unexpected status {status}"
            ))));
        }
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                RequestOutcome::Fatal(ToxicityError::Timeout)
            } else {
                RequestOutcome::Fatal(ToxicityError::Transport(e.to_string()))
            }
        })?;
        let parsed: AnalyzeResponse = serde_json::from_str(&body).map_err(|e| {
            RequestOutcome::Fatal(ToxicityError::Protocol(format!("malformed response: {e}")))
        })?;
        let score = parsed.attribute_scores.toxicity.summary_score.value;
        if !(0.0..=1.0).contains(&score) {
            return Err(RequestOutcome::Fatal(ToxicityError::Protocol(format!(
                "summary score {score} outside [0, 1]"
            ))));
        }
        Ok(score)
    }
}

enum RequestOutcome {
    RateLimited,
    Fatal(ToxicityError),
}
