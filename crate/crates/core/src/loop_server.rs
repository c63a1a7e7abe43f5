// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Closed-loop optimization: the optimizer runs here, an external client
//! (experiment or simulator) scores every pulse.
//!
//! Wire format is one JSON object per line, lock-step:
//!
//! ```text
//! server: {"type":"session_open","session":"<id>","config":{...}}
//! server: {"type":"pulse_request","session":"<id>","iter":0,"pulses":[{"times":[..],"values":[..]}]}
//! client: {"type":"fom_reply","session":"<id>","iter":0,"J":0.93,"err":0.01}
//! ...
//! server: {"type":"session_close","session":"<id>","reason":"target reached","best_J":0.9999}
//! ```
//!
//! The exchange-directory transport carries the same messages as files:
//! `pulse_<iter>.csv` (plus `pulse_<iter>_<k>.csv` for further controls)
//! followed by a `pulse_<iter>.ready` marker, answered by `fom_<iter>.json`.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objectives::Constraint;
use crate::optimizer::{
    self, Algorithm, Evaluation, FomEvaluator, OptimizationRecord, Problem, SearchConfig,
    Termination,
};
use crate::pulses::{Pulse, TimeGrid};
use crate::seed;

/// A pulse as sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePulse {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl From<&Pulse> for WirePulse {
    fn from(p: &Pulse) -> Self {
        Self {
            times: p.grid().times(),
            values: p.values().to_vec(),
        }
    }
}

impl WirePulse {
    /// Rebuilds the pulse, checking that the time stamps form a uniform grid.
    pub fn to_pulse(&self) -> Result<Pulse> {
        if self.times.len() != self.values.len() {
            return Err(Error::PulseFormat(format!(
                "{} time stamps for {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times.len() < 2 || self.times[0] != 0.0 {
            return Err(Error::PulseFormat(
                "need at least two samples starting at time 0".into(),
            ));
        }
        let grid = TimeGrid::new(self.times[self.times.len() - 1], self.times.len())?;
        for (i, &t) in self.times.iter().enumerate() {
            if (t - grid.time(i)).abs() > 1e-9 * grid.duration().max(1.0) {
                return Err(Error::PulseFormat(format!(
                    "time stamp {i} ({t}) is off the uniform grid"
                )));
            }
        }
        Pulse::new(grid, self.values.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LoopMessage {
    SessionOpen {
        session: String,
        config: serde_json::Value,
    },
    PulseRequest {
        session: String,
        iter: usize,
        pulses: Vec<WirePulse>,
    },
    FomReply {
        session: String,
        iter: usize,
        #[serde(rename = "J")]
        j: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        err: Option<f64>,
    },
    SessionClose {
        session: String,
        reason: String,
        /// Absent when nothing was evaluated.
        #[serde(rename = "best_J", default, skip_serializing_if = "Option::is_none")]
        best_j: Option<f64>,
    },
    Error {
        session: String,
        message: String,
    },
}

impl LoopMessage {
    pub fn session(&self) -> &str {
        match self {
            LoopMessage::SessionOpen { session, .. }
            | LoopMessage::PulseRequest { session, .. }
            | LoopMessage::FomReply { session, .. }
            | LoopMessage::SessionClose { session, .. }
            | LoopMessage::Error { session, .. } => session,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LoopMessage::SessionOpen { .. } => "session_open",
            LoopMessage::PulseRequest { .. } => "pulse_request",
            LoopMessage::FomReply { .. } => "fom_reply",
            LoopMessage::SessionClose { .. } => "session_close",
            LoopMessage::Error { .. } => "error",
        }
    }
}

/// Why a line failed to decode.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unexpected end of message: {0}")]
    UnexpectedEnd(String),
    #[error("missing field \"{field}\"")]
    MissingField { field: String },
    #[error("malformed message: {0}")]
    Malformed(String),
}

impl From<DecodeError> for Error {
    fn from(e: DecodeError) -> Self {
        Error::Protocol(e.to_string())
    }
}

/// One line, without the trailing newline.
pub fn encode(msg: &LoopMessage) -> Result<String> {
    Ok(serde_json::to_string(msg)?)
}

pub fn decode(line: &str) -> Result<LoopMessage, DecodeError> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n'])).map_err(|e| {
        if e.is_eof() {
            return DecodeError::UnexpectedEnd(e.to_string());
        }
        let text = e.to_string();
        match text
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split_once('`'))
        {
            Some((field, _)) => DecodeError::MissingField {
                field: field.to_string(),
            },
            None => DecodeError::Malformed(text),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Listen on `host:port`.
    Tcp { addr: String },
    /// Poll a shared directory.
    ExchangeDir { dir: PathBuf },
}

fn default_timeout() -> f64 {
    60.0
}

fn default_algorithm() -> Algorithm {
    Algorithm::Dcrab
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub search: SearchConfig,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    /// One guess pulse per control; also fixes the pulse grid.
    pub guess: Vec<Pulse>,
    #[serde(default)]
    pub constraint: Constraint,
    pub transport: Transport,
    /// Seconds to wait for each reply.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(invalid(format!(
                "timeout must be > 0 seconds, got {}",
                self.timeout
            )));
        }
        self.search.validate()
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }

    fn problem(&self) -> Problem {
        Problem::new(self.guess.clone(), self.constraint)
    }
}

fn new_session_id(seed_value: u64) -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    format!(
        "{:016x}",
        seed::derive(seed_value, &[nanos, n, std::process::id() as u64])
    )
}

fn best_j(record: &OptimizationRecord) -> Option<f64> {
    record.final_j.is_finite().then_some(record.final_j)
}

/// Result of one closed-loop session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub session: String,
    pub record: OptimizationRecord,
}

/// Line-oriented connection with a persistent partial-line buffer so that
/// read timeouts never lose bytes.
struct LineConn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pending: Vec<u8>,
}

impl LineConn {
    fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            pending: Vec::new(),
        })
    }

    fn send(&mut self, msg: &LoopMessage) -> Result<()> {
        let mut line = encode(msg)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    /// `Ok(None)` on timeout.
    fn recv_line(&mut self, deadline: Instant) -> Result<Option<String>> {
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            self.reader
                .get_ref()
                .set_read_timeout(Some(deadline - now))?;
            match self.reader.read_until(b'\n', &mut self.pending) {
                Ok(0) => return Err(Error::Protocol("peer closed the connection".into())),
                Ok(_) if self.pending.ends_with(b"\n") => {
                    let line = String::from_utf8(std::mem::take(&mut self.pending))
                        .map_err(|_| Error::Protocol("message is not UTF-8".into()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    return Ok(Some(line));
                }
                // EOF in the middle of a line
                Ok(_) => {
                    let partial = String::from_utf8_lossy(&self.pending).into_owned();
                    return Err(decode(&partial).err().map_or_else(
                        || Error::Protocol("peer closed the connection".into()),
                        Error::from,
                    ));
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    continue
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Scores pulses by asking the connected client.
struct TcpEvaluator<'a> {
    conn: &'a mut LineConn,
    session: &'a str,
    timeout: Duration,
}

fn check_reply(session: &str, iter: usize, msg: LoopMessage) -> Result<Option<Evaluation>> {
    match msg {
        LoopMessage::FomReply {
            session: s,
            iter: i,
            j,
            err,
        } => {
            if s != session {
                return Err(Error::Protocol(format!(
                    "reply for session {s}, expected {session}"
                )));
            }
            if i < iter {
                // late duplicate of an answered request
                log::warn!("ignoring stale reply for iteration {i}");
                return Ok(None);
            }
            if i != iter {
                return Err(Error::Protocol(format!(
                    "reply for iteration {i}, expected {iter}"
                )));
            }
            if !j.is_finite() {
                return Err(Error::Protocol(format!(
                    "non-finite J in reply to iteration {iter}"
                )));
            }
            if let Some(e) = err {
                if !(e.is_finite() && e >= 0.0) {
                    return Err(Error::Protocol(format!(
                        "invalid standard error {e} in reply to iteration {iter}"
                    )));
                }
            }
            Ok(Some(Evaluation { j, err }))
        }
        LoopMessage::Error { message, .. } => {
            Err(Error::Protocol(format!("client reported: {message}")))
        }
        other => Err(Error::Protocol(format!(
            "unexpected {} message from client",
            other.kind()
        ))),
    }
}

impl FomEvaluator for TcpEvaluator<'_> {
    fn evaluate(&mut self, iter: usize, pulses: &[Pulse]) -> Result<Evaluation> {
        let request = LoopMessage::PulseRequest {
            session: self.session.to_string(),
            iter,
            pulses: pulses.iter().map(WirePulse::from).collect(),
        };
        for attempt in 0..2 {
            if attempt == 1 {
                log::warn!(
                    "no reply to iteration {iter} within {:?}; resending once",
                    self.timeout
                );
            }
            self.conn.send(&request)?;
            let deadline = Instant::now() + self.timeout;
            while let Some(line) = self.conn.recv_line(deadline)? {
                let msg = decode(&line)?;
                if let Some(e) = check_reply(self.session, iter, msg)? {
                    return Ok(e);
                }
            }
        }
        Err(Error::Timeout(format!(
            "no reply to iteration {iter} after one retry"
        )))
    }
}

/// Runs the optimizer against `evaluator`, turning evaluator failures into
/// a partial record.
fn drive(config: &SessionConfig, evaluator: &mut dyn FomEvaluator) -> Result<OptimizationRecord> {
    optimizer::run(
        config.algorithm,
        &config.problem(),
        &config.search,
        config.seed,
        evaluator,
    )
}

/// TCP endpoint hosting closed-loop sessions.
pub struct TcpServer {
    listener: TcpListener,
}

impl TcpServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts one client and runs a full session with it.
    pub fn accept_session(&self, config: &SessionConfig) -> Result<SessionOutcome> {
        config.validate()?;
        let (stream, peer) = self.listener.accept()?;
        log::info!("client connected from {peer}");
        run_tcp_session(stream, config)
    }

    /// Accepts `sessions` clients and runs them concurrently, one thread
    /// each. Results come back in connection order.
    pub fn serve_sessions(
        &self,
        config: &SessionConfig,
        sessions: usize,
    ) -> Result<Vec<Result<SessionOutcome>>> {
        config.validate()?;
        thread::scope(|scope| {
            let mut handles = Vec::with_capacity(sessions);
            for _ in 0..sessions {
                let (stream, _) = self.listener.accept()?;
                handles.push(scope.spawn(move || run_tcp_session(stream, config)));
            }
            Ok(handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Protocol("session thread panicked".into())))
                })
                .collect())
        })
    }
}

/// Runs one session on an accepted connection.
pub fn run_tcp_session(stream: TcpStream, config: &SessionConfig) -> Result<SessionOutcome> {
    let session = new_session_id(config.seed);
    let mut conn = LineConn::new(stream)?;
    conn.send(&LoopMessage::SessionOpen {
        session: session.clone(),
        config: serde_json::to_value(config)?,
    })?;
    let outcome = {
        let mut evaluator = TcpEvaluator {
            conn: &mut conn,
            session: &session,
            timeout: config.timeout(),
        };
        drive(config, &mut evaluator)
    };
    let record = match outcome {
        Ok(record) => record,
        Err(e) => {
            let _ = conn.send(&LoopMessage::Error {
                session: session.clone(),
                message: e.to_string(),
            });
            let _ = conn.send(&LoopMessage::SessionClose {
                session: session.clone(),
                reason: format!("error: {e}"),
                best_j: None,
            });
            return Err(e);
        }
    };
    if let Termination::Aborted(why) = &record.termination {
        let _ = conn.send(&LoopMessage::Error {
            session: session.clone(),
            message: why.clone(),
        });
    }
    // the client may already be gone on error paths
    let _ = conn.send(&LoopMessage::SessionClose {
        session: session.clone(),
        reason: record.termination.to_string(),
        best_j: best_j(&record),
    });
    Ok(SessionOutcome { session, record })
}

/// Runs one session over the configured transport.
pub fn serve(config: &SessionConfig) -> Result<SessionOutcome> {
    config.validate()?;
    match &config.transport {
        Transport::Tcp { addr } => {
            let server = TcpServer::bind(addr.as_str())?;
            log::info!("listening on {}", server.local_addr()?);
            server.accept_session(config)
        }
        Transport::ExchangeDir { dir } => serve_exchange_dir(dir, config),
    }
}

const POLL: Duration = Duration::from_millis(2);

/// Manifest identifying the session that owns an exchange directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeManifest {
    pub session: String,
    pub controls: usize,
}

pub fn pulse_file(dir: &Path, iter: usize, control: usize) -> PathBuf {
    if control == 0 {
        dir.join(format!("pulse_{iter}.csv"))
    } else {
        dir.join(format!("pulse_{iter}_{control}.csv"))
    }
}

pub fn ready_file(dir: &Path, iter: usize) -> PathBuf {
    dir.join(format!("pulse_{iter}.ready"))
}

pub fn fom_file(dir: &Path, iter: usize) -> PathBuf {
    dir.join(format!("fom_{iter}.json"))
}

/// Writes `contents` to `path` through a temporary sibling and a rename,
/// refusing to replace an existing file.
pub fn write_new_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if path.exists() {
        return Err(Error::Protocol(format!(
            "{} already exists; exchange files are never overwritten",
            path.display()
        )));
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| invalid("bad exchange file name"))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn is_exchange_file(name: &str) -> bool {
    (name.starts_with("pulse_") || name.starts_with("fom_")) || name == "session_close.json"
}

struct DirEvaluator<'a> {
    dir: &'a Path,
    session: &'a str,
    timeout: Duration,
}

impl DirEvaluator<'_> {
    fn poll_reply(&self, iter: usize, deadline: Instant) -> Result<Option<Evaluation>> {
        let path = fom_file(self.dir, iter);
        while Instant::now() < deadline {
            match std::fs::read_to_string(&path) {
                Ok(text) => match decode(&text) {
                    Ok(msg) => {
                        if let LoopMessage::FomReply { session, .. } = &msg {
                            if session != self.session {
                                return Err(Error::Protocol(format!(
                                    "{} belongs to session {session}, not {}",
                                    path.display(),
                                    self.session
                                )));
                            }
                        }
                        return match check_reply(self.session, iter, msg)? {
                            Some(e) => Ok(Some(e)),
                            None => Err(Error::Protocol(format!(
                                "{} answers an earlier iteration",
                                path.display()
                            ))),
                        };
                    }
                    // still being written by a non-atomic client
                    Err(DecodeError::UnexpectedEnd(_)) => {}
                    Err(e) => return Err(e.into()),
                },
                Err(e) if e.kind() == ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
            thread::sleep(POLL);
        }
        Ok(None)
    }
}

impl FomEvaluator for DirEvaluator<'_> {
    fn evaluate(&mut self, iter: usize, pulses: &[Pulse]) -> Result<Evaluation> {
        for (k, p) in pulses.iter().enumerate() {
            write_new_atomic(&pulse_file(self.dir, iter, k), p.to_csv().as_bytes())?;
        }
        write_new_atomic(&ready_file(self.dir, iter), self.session.as_bytes())?;
        // the marker cannot be re-sent, so the single retry is a second wait
        for attempt in 0..2 {
            if attempt == 1 {
                log::warn!(
                    "no {} within {:?}; waiting once more",
                    fom_file(self.dir, iter).display(),
                    self.timeout
                );
            }
            if let Some(e) = self.poll_reply(iter, Instant::now() + self.timeout)? {
                return Ok(e);
            }
        }
        Err(Error::Timeout(format!(
            "no reply to iteration {iter} after one retry"
        )))
    }
}

/// Runs one session through a shared directory.
pub fn serve_exchange_dir(dir: &Path, config: &SessionConfig) -> Result<SessionOutcome> {
    config.validate()?;
    std::fs::create_dir_all(dir)?;
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if is_exchange_file(&name) {
            let owner = std::fs::read_to_string(dir.join("session.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<ExchangeManifest>(&t).ok())
                .map_or_else(
                    || "an unknown session".to_string(),
                    |m| format!("session {}", m.session),
                );
            return Err(Error::Protocol(format!(
                "{} holds {name} from {owner}; use an empty directory",
                dir.display()
            )));
        }
    }
    let session = new_session_id(config.seed);
    let manifest = ExchangeManifest {
        session: session.clone(),
        controls: config.guess.len(),
    };
    let manifest_path = dir.join("session.json");
    if manifest_path.exists() {
        std::fs::remove_file(&manifest_path)?;
    }
    write_new_atomic(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    let outcome = {
        let mut evaluator = DirEvaluator {
            dir,
            session: &session,
            timeout: config.timeout(),
        };
        drive(config, &mut evaluator)
    };
    let (reason, best) = match &outcome {
        Ok(record) => (record.termination.to_string(), best_j(record)),
        Err(e) => (format!("error: {e}"), None),
    };
    let close = LoopMessage::SessionClose {
        session: session.clone(),
        reason,
        best_j: best,
    };
    write_new_atomic(&dir.join("session_close.json"), encode(&close)?.as_bytes())?;
    Ok(SessionOutcome {
        session,
        record: outcome?,
    })
}

/// What a client saw during one session.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSummary {
    pub session: String,
    pub evaluations: usize,
    pub close_reason: String,
    pub best_j: Option<f64>,
    pub errors: Vec<String>,
}

/// Connects to `addr` and answers every pulse request with `fom`.
///
/// `fom` returns `(J, standard error)`. Returns once the server closes the
/// session.
pub fn run_tcp_client<F>(addr: impl ToSocketAddrs, mut fom: F) -> Result<ClientSummary>
where
    F: FnMut(usize, &[Pulse]) -> Result<(f64, Option<f64>)>,
{
    let stream = TcpStream::connect(addr)?;
    let mut conn = LineConn::new(stream)?;
    let forever = Instant::now() + Duration::from_secs(24 * 3600);
    let mut summary = ClientSummary {
        session: String::new(),
        evaluations: 0,
        close_reason: String::new(),
        best_j: None,
        errors: Vec::new(),
    };
    loop {
        let line = conn
            .recv_line(forever)?
            .ok_or_else(|| Error::Timeout("server went quiet".into()))?;
        match decode(&line)? {
            LoopMessage::SessionOpen { session, .. } => summary.session = session,
            LoopMessage::PulseRequest {
                session,
                iter,
                pulses,
            } => {
                let pulses = pulses
                    .iter()
                    .map(WirePulse::to_pulse)
                    .collect::<Result<Vec<_>>>()?;
                let (j, err) = fom(iter, &pulses)?;
                summary.evaluations += 1;
                conn.send(&LoopMessage::FomReply {
                    session,
                    iter,
                    j,
                    err,
                })?;
            }
            LoopMessage::SessionClose { reason, best_j, .. } => {
                summary.close_reason = reason;
                summary.best_j = best_j;
                return Ok(summary);
            }
            LoopMessage::Error { message, .. } => summary.errors.push(message),
            LoopMessage::FomReply { .. } => {
                return Err(Error::Protocol("server sent a fom_reply".into()));
            }
        }
    }
}

/// Serves an exchange directory from the client side: waits for each
/// `.ready` marker, scores the pulses with `fom` and writes the reply.
/// Returns when `session_close.json` appears or `idle` passes without news.
pub fn run_exchange_dir_client<F>(dir: &Path, idle: Duration, mut fom: F) -> Result<ClientSummary>
where
    F: FnMut(usize, &[Pulse]) -> Result<(f64, Option<f64>)>,
{
    let mut last_news = Instant::now();
    let manifest_path = dir.join("session.json");
    let manifest: ExchangeManifest = loop {
        if let Ok(text) = std::fs::read_to_string(&manifest_path) {
            if let Ok(m) = serde_json::from_str(&text) {
                break m;
            }
        }
        if last_news.elapsed() > idle {
            return Err(Error::Timeout(format!("no manifest in {}", dir.display())));
        }
        thread::sleep(POLL);
    };
    let mut summary = ClientSummary {
        session: manifest.session.clone(),
        evaluations: 0,
        close_reason: String::new(),
        best_j: None,
        errors: Vec::new(),
    };
    let mut iter = 0usize;
    last_news = Instant::now();
    loop {
        if ready_file(dir, iter).exists() {
            let pulses = (0..manifest.controls)
                .map(|k| Pulse::read_csv(pulse_file(dir, iter, k)))
                .collect::<Result<Vec<_>>>()?;
            let (j, err) = fom(iter, &pulses)?;
            let reply = LoopMessage::FomReply {
                session: manifest.session.clone(),
                iter,
                j,
                err,
            };
            write_new_atomic(&fom_file(dir, iter), encode(&reply)?.as_bytes())?;
            summary.evaluations += 1;
            iter += 1;
            last_news = Instant::now();
            continue;
        }
        if let Ok(text) = std::fs::read_to_string(dir.join("session_close.json")) {
            if let Ok(LoopMessage::SessionClose { reason, best_j, .. }) = decode(&text) {
                summary.close_reason = reason;
                summary.best_j = best_j;
                return Ok(summary);
            }
        }
        if last_news.elapsed() > idle {
            return Err(Error::Timeout(format!(
                "no pulse {iter} in {}",
                dir.display()
            )));
        }
        thread::sleep(POLL);
    }
}
