//! Shared test support: a scripted fake scorer server and fixture helpers.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use antisocial::corpus::TokenSequence;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// One canned response for the fake scorer.
#[derive(Debug, Clone)]
pub struct ScriptedResponse {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl ScriptedResponse {
    pub fn ok(score: f64) -> ScriptedResponse {
        ScriptedResponse {
            status: 200,
            body: format!(
                r#"{{"attributeScores":{{"TOXICITY":{{"summaryScore":{{"value":{score},"type":"PROBABILITY"}}}}}},"languages":["en"]}}"#
            ),
            delay: Duration::ZERO,
        }
    }

    pub fn too_many_requests() -> ScriptedResponse {
        ScriptedResponse {
            status: 429,
            body: r#"{"error":{"code":429,"message":"rate limit"}}"#.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> ScriptedResponse {
        self.delay = delay;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub at: Instant,
    pub path_and_query: String,
    pub body: String,
}

/// Minimal scripted HTTP/1.1 server that records every request it receives.
/// Scripted responses are consumed in order; the fallback answers afterwards.
pub struct FakeScorer {
    url: String,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    shutdown: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl FakeScorer {
    pub fn start(script: Vec<ScriptedResponse>, fallback: ScriptedResponse) -> FakeScorer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind fake scorer");
        let addr = listener.local_addr().unwrap();
        let requests: Arc<Mutex<Vec<RecordedRequest>>> = Arc::default();
        let shutdown = Arc::new(AtomicBool::new(false));

        let thread_requests = Arc::clone(&requests);
        let thread_shutdown = Arc::clone(&shutdown);
        let mut queue: VecDeque<ScriptedResponse> = script.into();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let step = queue.pop_front().unwrap_or_else(|| fallback.clone());
                if let Err(e) = serve_one(stream, &step, &thread_requests) {
                    eprintln!("fake scorer connection error: {e}");
                }
            }
        });

        FakeScorer {
            url: format!("http://{addr}/v1/comments:analyze"),
            requests,
            shutdown,
            addr,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        self.url.clone()
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for FakeScorer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Nudge the accept loop so it observes the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(
    stream: TcpStream,
    step: &ScriptedResponse,
    requests: &Mutex<Vec<RecordedRequest>>,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path_and_query = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or_default()
        .to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    requests.lock().unwrap().push(RecordedRequest {
        at: Instant::now(),
        path_and_query,
        body: String::from_utf8_lossy(&body).into_owned(),
    });

    if !step.delay.is_zero() {
        std::thread::sleep(step.delay);
    }
    let reason = match step.status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        step.status,
        reason,
        step.body.len(),
        step.body
    )?;
    stream.flush()?;
    Ok(())
}

/// Synthetic corpus where `x` and `y` always co-occur inside the training
/// window while `z` never appears near `x`.
pub fn planted_corpus() -> Vec<TokenSequence> {
    let fillers = ["f1", "f2", "f3", "f4", "f5", "f6"];
    let others = ["g1", "g2", "g3", "g4", "g5", "g6"];
    let mut corpus = Vec::new();
    for i in 0..250 {
        corpus.push(TokenSequence {
            source_id: format!("p{i}a"),
            tokens: ["x", "y", fillers[i % 6], fillers[(i + 1) % 6]]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        });
        corpus.push(TokenSequence {
            source_id: format!("p{i}b"),
            tokens: ["z", others[i % 6], others[(i + 2) % 6]]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        });
    }
    corpus
}
