//! Socket replay of CAN logs and online window scoring.
//!
//! Wire format: one ASCII line per frame,
//! `timestamp,can_id_hex,dlc,d0,d1,d2,d3,d4,d5,d6,d7\n`, with payload bytes
//! as two hex digits. Labels are never transmitted.

use std::collections::VecDeque;
use std::io::{BufRead, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::artifact::ModelArtifact;
use crate::canlog::{AttackKind, CanFrame, MAX_EXTENDED_ID};
use crate::error::{Error, Result};
use crate::metrics::{latency_summary, LatencySummary};
use crate::neural::Matrix;
use crate::pipeline::ScoringPipeline;

pub const WIRE_FIELDS: usize = 11;
/// Minimum CAN cycle time on a 500 kbit/s bus.
pub const DEADLINE_US: f64 = 10_000.0;

/// Wire line for a frame, including the trailing newline.
pub fn format_wire(frame: &CanFrame) -> String {
    let p = &frame.payload;
    format!(
        "{},{:03x},{},{:02x},{:02x},{:02x},{:02x},{:02x},{:02x},{:02x},{:02x}\n",
        frame.timestamp, frame.can_id, frame.dlc, p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]
    )
}

/// Parses one wire line (with or without the newline). `line_no` is used in
/// error positions.
pub fn parse_wire(line: &str, line_no: usize) -> Result<CanFrame> {
    let err = |column: usize, message: String| Error::Parse {
        row: line_no,
        column,
        message,
    };
    let line = line.strip_suffix('\n').unwrap_or(line);
    if !line.is_ascii() {
        return Err(err(0, "non-ASCII bytes".into()));
    }
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != WIRE_FIELDS {
        return Err(err(0, format!("expected {WIRE_FIELDS} fields, found {}", fields.len())));
    }
    let timestamp: f64 = fields[0]
        .parse()
        .ok()
        .filter(|t: &f64| t.is_finite())
        .ok_or_else(|| err(0, format!("bad timestamp {:?}", fields[0])))?;
    let can_id = u32::from_str_radix(fields[1], 16)
        .ok()
        .filter(|&id| id <= MAX_EXTENDED_ID)
        .ok_or_else(|| err(1, format!("bad CAN ID {:?}", fields[1])))?;
    let dlc: u8 = fields[2]
        .parse()
        .ok()
        .filter(|&d| d <= 8)
        .ok_or_else(|| err(2, format!("bad DLC {:?}", fields[2])))?;
    let mut payload = [0u8; 8];
    for (i, f) in fields[3..].iter().enumerate() {
        if f.len() != 2 {
            return Err(err(3 + i, format!("byte {f:?} is not two hex digits")));
        }
        payload[i] = u8::from_str_radix(f, 16).map_err(|_| err(3 + i, format!("bad byte {f:?}")))?;
    }
    if payload[dlc as usize..].iter().any(|&b| b != 0) {
        return Err(err(3 + dlc as usize, "non-zero byte past DLC".into()));
    }
    CanFrame::new(timestamp, can_id, &payload[..dlc as usize], AttackKind::None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pacing {
    /// Reproduce the log's inter-frame gaps.
    AsTimestamped,
    FixedGap(Duration),
    MaxSpeed,
}

pub fn bind(endpoint: &str) -> Result<TcpListener> {
    TcpListener::bind(endpoint).map_err(|e| Error::Net(format!("cannot listen on {endpoint}: {e}")))
}

/// Connects, retrying until `wait` has elapsed.
pub fn connect(endpoint: &str, wait: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + wait;
    loop {
        let addrs = endpoint
            .to_socket_addrs()
            .map_err(|e| Error::Net(format!("bad endpoint {endpoint}: {e}")))?;
        let mut last = None;
        for addr in addrs {
            match TcpStream::connect(addr) {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        if Instant::now() >= deadline {
            let reason = last.map_or_else(|| "no address".to_string(), |e| e.to_string());
            return Err(Error::Net(format!("cannot connect to {endpoint}: {reason}")));
        }
        thread::sleep(Duration::from_millis(50));
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServeReport {
    pub clients: usize,
    pub completed: usize,
    pub disconnected: usize,
    pub frames_sent: usize,
}

fn send_log(stream: TcpStream, frames: &[CanFrame], pacing: Pacing) -> std::io::Result<usize> {
    stream.set_nodelay(true)?;
    let mut out = BufWriter::new(stream);
    let start = Instant::now();
    let t0 = frames.first().map_or(0.0, |f| f.timestamp);
    for (k, frame) in frames.iter().enumerate() {
        let due = match pacing {
            Pacing::MaxSpeed => None,
            Pacing::FixedGap(gap) => Some(gap * k as u32),
            Pacing::AsTimestamped => Some(Duration::from_secs_f64((frame.timestamp - t0).max(0.0))),
        };
        if let Some(due) = due {
            out.flush()?;
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
        }
        out.write_all(format_wire(frame).as_bytes())?;
    }
    out.flush()?;
    Ok(frames.len())
}

/// Serves the log to each accepted client in turn, closing the connection at
/// the end of the log. Stops after `max_clients` connections when given.
pub fn replay_serve(
    listener: &TcpListener,
    frames: &[CanFrame],
    pacing: Pacing,
    max_clients: Option<usize>,
) -> Result<ServeReport> {
    let mut report = ServeReport::default();
    while max_clients.is_none_or(|m| report.clients < m) {
        let (stream, peer) = listener
            .accept()
            .map_err(|e| Error::Net(format!("accept failed: {e}")))?;
        report.clients += 1;
        info!("client {peer} connected");
        match send_log(stream, frames, pacing) {
            Ok(n) => {
                report.completed += 1;
                report.frames_sent += n;
            }
            Err(e) => {
                warn!("client {peer} dropped: {e}");
                report.disconnected += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub window_index: usize,
    pub class: usize,
    pub class_name: String,
    pub probability: f64,
    pub reconstruction_error: f64,
    /// Arrival of the window's last frame to verdict emission.
    pub latency_us: f64,
    /// Time inside scale -> encode -> classify.
    pub model_us: f64,
    pub deadline_met: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Frames per window; must match the artifact.
    pub window: usize,
    /// Frames between consecutive windows: `window` for the tumbling windows
    /// used in training, 1 for a sliding window.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub frames: usize,
    pub verdicts: usize,
    pub malformed_lines: usize,
    pub skipped_windows: usize,
    pub discarded_trailing_frames: usize,
    pub deadline_violations: usize,
    pub latency_us: LatencySummary,
    pub model_us: LatencySummary,
    pub class_counts: Vec<(String, usize)>,
    pub connection_error: Option<String>,
    pub notes: Vec<String>,
}

struct WindowScorer<'a> {
    pipeline: ScoringPipeline<'a>,
    layout: crate::features::FrameLayout,
    names: Vec<String>,
}

impl WindowScorer<'_> {
    fn score(&self, frames: impl Iterator<Item = CanFrame>, index: usize, arrival: Instant) -> Result<Verdict> {
        let mut features = Vec::new();
        for f in frames {
            self.layout.push_features(&f, &mut features);
        }
        let start = Instant::now();
        let raw = Matrix::from_vec(1, features.len(), features)?;
        let scores = self.pipeline.score(&raw)?;
        let recon = self.pipeline.reconstruction_errors(&scores.scaled)?[0];
        let class = scores.classes[0];
        let probability = scores.probabilities.row(0)[class];
        let done = Instant::now();
        let latency_us = done.duration_since(arrival).as_secs_f64() * 1e6;
        Ok(Verdict {
            window_index: index,
            class,
            class_name: self.names[class].clone(),
            probability,
            reconstruction_error: recon,
            latency_us,
            model_us: done.duration_since(start).as_secs_f64() * 1e6,
            deadline_met: latency_us < DEADLINE_US,
        })
    }
}

/// Reads wire lines until EOF, scoring every completed window and passing
/// each verdict to `sink` in window order. A malformed line drops the
/// window being filled; accumulation restarts at the next line.
pub fn score_stream<R: BufRead>(
    mut input: R,
    artifact: &ModelArtifact,
    options: ScoreOptions,
    mut sink: impl FnMut(&Verdict) -> Result<()>,
) -> Result<StreamSummary> {
    let n = options.window;
    let layout = artifact.profile.layout();
    if n == 0 || options.stride == 0 || options.stride > n {
        return Err(Error::Config(
            "window and stride must satisfy 1 <= stride <= window".into(),
        ));
    }
    if n * layout.width() != artifact.scaler.width() {
        return Err(Error::Config(format!(
            "window of {n} frames gives {} features, the artifact expects {}",
            n * layout.width(),
            artifact.scaler.width()
        )));
    }
    let scorer = WindowScorer {
        pipeline: ScoringPipeline { artifact },
        layout,
        names: artifact.classes().names(),
    };
    let mut summary = StreamSummary {
        frames: 0,
        verdicts: 0,
        malformed_lines: 0,
        skipped_windows: 0,
        discarded_trailing_frames: 0,
        deadline_violations: 0,
        latency_us: latency_summary(&[]),
        model_us: latency_summary(&[]),
        class_counts: scorer.names.iter().map(|c| (c.clone(), 0)).collect(),
        connection_error: None,
        notes: Vec::new(),
    };
    let mut latencies = Vec::new();
    let mut model_times = Vec::new();
    let mut buffer: VecDeque<CanFrame> = VecDeque::with_capacity(n);
    let mut since_last = 0;
    let mut next_index = 0;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        match input.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => {
                warn!("connection error: {e}");
                summary.connection_error = Some(e.to_string());
                break;
            }
        }
        let arrival = Instant::now();
        line_no += 1;
        let frame = match parse_wire(&line, line_no) {
            Ok(f) => f,
            Err(e) => {
                warn!("{e}; window dropped");
                summary.malformed_lines += 1;
                if !buffer.is_empty() || since_last > 0 {
                    summary.skipped_windows += 1;
                    next_index += 1;
                }
                buffer.clear();
                since_last = 0;
                continue;
            }
        };
        summary.frames += 1;
        if buffer.len() == n {
            buffer.pop_front();
        }
        buffer.push_back(frame);
        since_last += 1;
        let ready =
            buffer.len() == n && (next_index == 0 && since_last == n || next_index > 0 && since_last >= options.stride);
        if !ready {
            continue;
        }
        let verdict = scorer.score(buffer.iter().cloned(), next_index, arrival)?;
        sink(&verdict)?;
        latencies.push(verdict.latency_us);
        model_times.push(verdict.model_us);
        if !verdict.deadline_met {
            summary.deadline_violations += 1;
        }
        summary.class_counts[verdict.class].1 += 1;
        summary.verdicts += 1;
        next_index += 1;
        since_last = 0;
        if options.stride == n {
            buffer.clear();
        }
    }
    if since_last > 0 {
        summary.discarded_trailing_frames = since_last;
        summary
            .notes
            .push(format!("partial trailing window of {since_last} frames discarded"));
    }
    summary.latency_us = latency_summary(&latencies);
    summary.model_us = latency_summary(&model_times);
    Ok(summary)
}

impl StreamSummary {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }
}
