//! Client side of the external scorer protocol.
//!
//! An endpoint is either `tcp://host:port` or a command line (optionally
//! prefixed with `stdio:`) that is spawned and spoken to over its standard
//! input and output. Replies are read on a background thread so every wait is
//! bounded by the configured timeout.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::protocol::{ImagePayload, Message, PROTOCOL_VERSION};
use super::{Detection, Evaluation, ScoreReport, Scorer, TaskScore};
use crate::error::{Error, Result, ScorerError};
use crate::lightfield::{Annotation, BBox, Image};

/// Environment variable overriding the reply timeout, in milliseconds.
pub const TIMEOUT_ENV: &str = "LIDAS_SCORER_TIMEOUT_MS";

const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ImageEncoding {
    #[default]
    #[serde(rename = "png-base64")]
    PngBase64,
    #[serde(rename = "path")]
    Path,
}

impl ImageEncoding {
    fn wire_name(self) -> &'static str {
        match self {
            ImageEncoding::PngBase64 => "png-base64",
            ImageEncoding::Path => "path",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalParams {
    pub endpoint: String,
    pub tasks: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub encoding: ImageEncoding,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl ExternalParams {
    pub fn new(endpoint: impl Into<String>, tasks: Vec<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            tasks,
            timeout_ms: timeout_from_env().unwrap_or(DEFAULT_TIMEOUT_MS),
            encoding: ImageEncoding::PngBase64,
        }
    }
}

/// Timeout override from [`TIMEOUT_ENV`], if set and numeric.
pub fn timeout_from_env() -> Option<u64> {
    std::env::var(TIMEOUT_ENV).ok()?.trim().parse().ok()
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    tcp: Option<TcpStream>,
}

impl Connection {
    fn open(endpoint: &str) -> Result<Self, ScorerError> {
        let (tx, rx) = mpsc::channel();
        let spawn_reader = |reader: Box<dyn std::io::Read + Send>| {
            let tx = tx.clone();
            std::thread::spawn(move || {
                for line in BufReader::new(reader).lines() {
                    let stop = line.is_err();
                    if tx.send(line).is_err() || stop {
                        break;
                    }
                }
            });
        };
        if let Some(addr) = endpoint.strip_prefix("tcp://") {
            let stream = TcpStream::connect(addr).map_err(ScorerError::Transport)?;
            let read_half = stream.try_clone().map_err(ScorerError::Transport)?;
            spawn_reader(Box::new(read_half));
            Ok(Self {
                tcp: Some(stream.try_clone().map_err(ScorerError::Transport)?),
                writer: Box::new(stream),
                lines: rx,
                child: None,
            })
        } else {
            let cmdline = endpoint.strip_prefix("stdio:").unwrap_or(endpoint);
            let mut parts = cmdline.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| ScorerError::Protocol("empty scorer endpoint".into()))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(ScorerError::Transport)?;
            let stdout = child.stdout.take().expect("piped stdout");
            let stdin = child.stdin.take().expect("piped stdin");
            spawn_reader(Box::new(stdout));
            Ok(Self {
                writer: Box::new(stdin),
                lines: rx,
                child: Some(child),
                tcp: None,
            })
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), ScorerError> {
        self.writer
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(ScorerError::Transport)
    }

    fn recv(&self, deadline: Instant, timeout_ms: u64) -> Result<Message, ScorerError> {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(remaining) {
            Ok(Ok(line)) => Message::parse(&line),
            Ok(Err(e)) => Err(ScorerError::Transport(e)),
            Err(RecvTimeoutError::Timeout) => Err(ScorerError::Timeout(timeout_ms)),
            Err(RecvTimeoutError::Disconnected) => Err(ScorerError::Closed),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // The reader thread holds a clone of the socket; shut it down so
        // both the thread and the server see the end of the stream.
        if let Some(s) = self.tcp.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(mut child) = self.child.take() {
            // Closing stdin asks the server to exit; do not wait on a hung one.
            self.writer = Box::new(std::io::sink());
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Opaque scorer served by another process.
pub struct ExternalScorer {
    params: ExternalParams,
    conn: Option<Connection>,
    next_id: u64,
    /// Tasks the server announced in its `ready` reply.
    pub server_tasks: Vec<String>,
}

impl ExternalScorer {
    /// Connects and completes the handshake.
    pub fn connect(params: ExternalParams) -> Result<Self> {
        let mut s = Self {
            params,
            conn: None,
            next_id: 1,
            server_tasks: Vec::new(),
        };
        s.reconnect()?;
        Ok(s)
    }

    fn reconnect(&mut self) -> Result<(), ScorerError> {
        self.conn = None;
        let mut conn = Connection::open(&self.params.endpoint)?;
        conn.send(&Message::Hello {
            version: PROTOCOL_VERSION,
            tasks: self.params.tasks.clone(),
        })?;
        let deadline = Instant::now() + Duration::from_millis(self.params.timeout_ms);
        match conn.recv(deadline, self.params.timeout_ms)? {
            Message::Ready { tasks } => {
                if let Some(missing) = self.params.tasks.iter().find(|t| !tasks.contains(t)) {
                    return Err(ScorerError::Protocol(format!(
                        "server did not enable requested task `{missing}`"
                    )));
                }
                self.server_tasks = tasks;
            }
            Message::Error { message, .. } if message.to_lowercase().contains("version") => {
                return Err(ScorerError::VersionMismatch(message));
            }
            Message::Error { id, message } => return Err(ScorerError::Remote { id, message }),
            other => {
                return Err(ScorerError::Protocol(format!(
                    "expected `ready`, got {other:?}"
                )))
            }
        }
        self.conn = Some(conn);
        Ok(())
    }

    pub fn params(&self) -> &ExternalParams {
        &self.params
    }

    /// Sends one score request and waits for its reply.
    pub fn score(&mut self, image: &Image) -> Result<ScoreReport, ScorerError> {
        if self.conn.is_none() {
            self.reconnect()?;
        }
        let start = Instant::now();
        let id = self.next_id;
        self.next_id += 1;
        let (payload, temp) = encode_image(image, self.params.encoding)?;
        let result = self.round_trip(id, payload);
        if let Some(p) = temp {
            let _ = std::fs::remove_file(p);
        }
        if result.is_err() {
            // The stream may hold a late reply; start fresh next time.
            self.conn = None;
        }
        let mut report = result?;
        report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(report)
    }

    fn round_trip(&mut self, id: u64, image: ImagePayload) -> Result<ScoreReport, ScorerError> {
        let timeout_ms = self.params.timeout_ms;
        let conn = self.conn.as_mut().expect("connected");
        conn.send(&Message::Score {
            id,
            image,
            tasks: self.params.tasks.clone(),
        })?;
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        match conn.recv(deadline, timeout_ms)? {
            Message::ScoreResult {
                id: rid,
                scores,
                detections,
                mask_path,
                ..
            } => {
                if rid != id {
                    return Err(ScorerError::Protocol(format!(
                        "reply id {rid} does not match request {id}"
                    )));
                }
                report_from_wire(scores, detections, mask_path)
            }
            Message::Error { id, message } => Err(ScorerError::Remote { id, message }),
            other => Err(ScorerError::Protocol(format!("expected `result`, got {other:?}"))),
        }
    }
}

fn report_from_wire(
    scores: BTreeMap<String, f64>,
    detections: Vec<super::protocol::WireDetection>,
    mask_path: Option<String>,
) -> Result<ScoreReport, ScorerError> {
    if let Some((task, v)) = scores.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ScorerError::Protocol(format!("non-finite score {v} for `{task}`")));
    }
    let detections = detections
        .into_iter()
        .map(|d| {
            if !(0.0..=1.0).contains(&d.conf) {
                return Err(ScorerError::Protocol(format!("confidence {} outside [0, 1]", d.conf)));
            }
            let [x1, y1, x2, y2] = d.bbox;
            Ok(Detection {
                class_id: d.cls,
                bbox: BBox::new(x1, y1, x2, y2),
                confidence: d.conf,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreReport {
        scores: scores
            .into_iter()
            .map(|(task, value)| TaskScore {
                task,
                value,
                higher_is_better: true,
            })
            .collect(),
        detections,
        mask_path,
        timing_ms: 0.0,
    })
}

fn encode_image(
    image: &Image,
    encoding: ImageEncoding,
) -> Result<(ImagePayload, Option<std::path::PathBuf>), ScorerError> {
    let png = image
        .encode_png8()
        .map_err(|e| ScorerError::Protocol(format!("cannot encode image: {e}")))?;
    let name = encoding.wire_name().to_string();
    match encoding {
        ImageEncoding::PngBase64 => Ok((
            ImagePayload {
                encoding: name,
                data: base64::engine::general_purpose::STANDARD.encode(png),
            },
            None,
        )),
        ImageEncoding::Path => {
            static COUNTER: AtomicU64 = AtomicU64::new(0);
            let path = std::env::temp_dir().join(format!(
                "lightloop-{}-{}.png",
                std::process::id(),
                COUNTER.fetch_add(1, Ordering::Relaxed)
            ));
            std::fs::write(&path, png).map_err(ScorerError::Transport)?;
            Ok((
                ImagePayload {
                    encoding: name,
                    data: path.to_string_lossy().into_owned(),
                },
                Some(path),
            ))
        }
    }
}

impl Scorer for ExternalScorer {
    fn name(&self) -> &str {
        "external"
    }

    fn differentiable(&self) -> bool {
        false
    }

    fn evaluate(
        &mut self,
        image: &Image,
        _annotations: &[Annotation],
        _want_gradient: bool,
    ) -> Result<Evaluation> {
        let report = self.score(image).map_err(Error::Scorer)?;
        let total = self
            .params
            .tasks
            .iter()
            .map(|t| report.score(t))
            .sum::<Option<f64>>()
            .ok_or_else(|| {
                Error::Scorer(ScorerError::Protocol(
                    "reply lacks a score for a requested task".into(),
                ))
            })?;
        Ok(Evaluation {
            report,
            total,
            gradient: None,
        })
    }
}
