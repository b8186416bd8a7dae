//! Client for readers living in another process.
//!
//! Wire format: one UTF-8 JSON object per line in each direction.
//!
//! ```text
//! -> {"id":"..","type":"span","question":"..","tokens":[..]}
//! -> {"id":"..","type":"choice","question":"..","tokens":[..],"options":[..]}
//! <- {"id":"..","start_logits":[..],"end_logits":[..]}
//! <- {"id":"..","option_logits":[..]}
//! <- {"id":"..","error":".."}
//! -> {"type":"shutdown"}
//! ```
//!
//! Responses are matched to requests by id, so a server may answer out of
//! order. Up to `max_inflight` requests are pipelined; each waits at most
//! `timeout` for its answer.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{ChoiceQuery, ChoiceScores, Reader, ReaderError, SpanQuery, SpanScores};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub question: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Where an external reader lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `exec:program arg ...`, spoken to over the child's stdin/stdout.
    Command(Vec<String>),
}

impl std::str::FromStr for Endpoint {
    type Err = ReaderError;

    fn from_str(s: &str) -> Result<Self, ReaderError> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_owned()));
        }
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if !argv.is_empty() {
                return Ok(Endpoint::Command(argv));
            }
        }
        Err(ReaderError::Connect(format!(
            "unrecognized endpoint `{s}`; expected tcp://host:port or exec:<command>"
        )))
    }
}

type Pending = Arc<Mutex<HashMap<String, Sender<WireResponse>>>>;

pub struct ExternalReader {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
    closed: Arc<AtomicBool>,
    slots: Arc<(Mutex<usize>, Condvar)>,
    max_inflight: usize,
    timeout: Duration,
    counter: AtomicU64,
    child: Mutex<Option<Child>>,
    socket: Option<TcpStream>,
    listener: Option<JoinHandle<()>>,
    name: String,
}

impl ExternalReader {
    pub fn connect(endpoint: &Endpoint, timeout: Duration, max_inflight: usize) -> Result<Self, ReaderError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| ReaderError::Connect(format!("{addr}: {e}")))?;
                stream.set_nodelay(true).ok();
                stream.set_write_timeout(Some(timeout)).ok();
                let clone = || stream.try_clone().map_err(|e| ReaderError::Connect(e.to_string()));
                let (read_half, control) = (clone()?, clone()?);
                let mut reader = Self::from_streams(Box::new(read_half), Box::new(stream), None, timeout, max_inflight, format!("tcp://{addr}"));
                reader.socket = Some(control);
                Ok(reader)
            }
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| ReaderError::Connect(format!("{}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self::from_streams(Box::new(stdout), Box::new(stdin), Some(child), timeout, max_inflight, format!("exec:{}", argv.join(" "))))
            }
        }
    }

    /// Speaks the protocol over an arbitrary byte-stream pair.
    pub fn from_streams(
        input: Box<dyn Read + Send>,
        output: Box<dyn Write + Send>,
        child: Option<Child>,
        timeout: Duration,
        max_inflight: usize,
        name: String,
    ) -> Self {
        let pending: Pending = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        let listener = {
            let pending = Arc::clone(&pending);
            let closed = Arc::clone(&closed);
            thread::spawn(move || listen(input, pending, closed))
        };
        Self {
            writer: Mutex::new(output),
            pending,
            closed,
            slots: Arc::new((Mutex::new(0), Condvar::new())),
            max_inflight: max_inflight.max(1),
            timeout,
            counter: AtomicU64::new(0),
            child: Mutex::new(child),
            socket: None,
            listener: Some(listener),
            name,
        }
    }

    fn acquire(&self, deadline: Instant) -> Result<(), ReaderError> {
        let (lock, cv) = &*self.slots;
        let mut used = lock.lock().expect("inflight lock");
        while *used >= self.max_inflight {
            let now = Instant::now();
            if now >= deadline {
                return Err(ReaderError::Timeout("waiting for an inflight slot".into()));
            }
            used = cv.wait_timeout(used, deadline - now).expect("inflight lock").0;
        }
        *used += 1;
        Ok(())
    }

    fn release(&self) {
        let (lock, cv) = &*self.slots;
        *lock.lock().expect("inflight lock") -= 1;
        cv.notify_one();
    }

    /// Sends one request and waits for its response.
    pub fn round_trip(&self, mut request: WireRequest) -> Result<WireResponse, ReaderError> {
        let deadline = Instant::now() + self.timeout;
        self.acquire(deadline)?;
        let result = self.send_and_wait(&mut request, deadline);
        self.release();
        let resp = result?;
        match resp.error {
            Some(e) => Err(ReaderError::Failure(format!("{}: {e}", request.id))),
            None => Ok(resp),
        }
    }

    fn send_and_wait(&self, request: &mut WireRequest, deadline: Instant) -> Result<WireResponse, ReaderError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(ReaderError::Failure("reader connection closed".into()));
        }
        request.id = format!("{}#{}", request.id, self.counter.fetch_add(1, Ordering::SeqCst));
        let (tx, rx) = mpsc::channel();
        self.pending.lock().expect("pending lock").insert(request.id.clone(), tx);
        let mut line = serde_json::to_vec(&*request).map_err(|e| ReaderError::Failure(e.to_string()))?;
        line.push(b'\n');
        let written = {
            let mut w = self.writer.lock().expect("writer lock");
            w.write_all(&line).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.pending.lock().expect("pending lock").remove(&request.id);
            return Err(ReaderError::Failure(format!("write failed: {e}")));
        }
        let wait = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok(resp) => Ok(resp),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                self.pending.lock().expect("pending lock").remove(&request.id);
                Err(ReaderError::Timeout(request.id.clone()))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(ReaderError::Failure(format!("connection closed before {} was answered", request.id)))
            }
        }
    }

    fn shutdown(&mut self) {
        if let Ok(mut w) = self.writer.lock() {
            let _ = w.write_all(b"{\"type\":\"shutdown\"}\n").and_then(|_| w.flush());
        }
        // Closing our write half lets stdin-driven servers see EOF.
        if let Ok(mut w) = self.writer.lock() {
            *w = Box::new(std::io::sink());
        }
        if let Some(sock) = &self.socket {
            let _ = sock.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut child) = self.child.lock().ok().and_then(|mut c| c.take()) {
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }
}

fn listen(input: Box<dyn Read + Send>, pending: Pending, closed: Arc<AtomicBool>) {
    let reader = BufReader::new(input);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<WireResponse>(&line) {
            Ok(resp) => {
                let tx = pending.lock().expect("pending lock").remove(&resp.id);
                match tx {
                    Some(tx) => {
                        let _ = tx.send(resp);
                    }
                    None => debug!("dropping response for unknown or expired id {}", resp.id),
                }
            }
            Err(e) => warn!("ignoring malformed reader response ({e}): {line}"),
        }
    }
    closed.store(true, Ordering::SeqCst);
    // Dropping the senders wakes every waiter with a disconnect.
    pending.lock().expect("pending lock").clear();
}

impl Drop for ExternalReader {
    fn drop(&mut self) {
        self.shutdown();
        if let Some(h) = self.listener.take() {
            // The listener ends once the peer closes its side; do not wait on
            // a peer that keeps the connection open.
            if self.closed.load(Ordering::SeqCst) {
                let _ = h.join();
            }
        }
    }
}

fn to_scalars<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::of).collect()
}

impl<T: Scalar> Reader<T> for ExternalReader {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_span(&self, q: &SpanQuery<'_>) -> Result<SpanScores<T>, ReaderError> {
        let resp = self.round_trip(WireRequest {
            id: q.id.to_owned(),
            kind: "span".into(),
            question: q.question.to_owned(),
            tokens: q.context.tokens.iter().map(|t| t.text.clone()).collect(),
            options: None,
        })?;
        let (Some(start), Some(end)) = (resp.start_logits, resp.end_logits) else {
            return Err(ReaderError::Failure(format!("{}: span response lacks start/end logits", resp.id)));
        };
        let scores = SpanScores {
            start_logits: to_scalars(start),
            end_logits: to_scalars(end),
        };
        scores.validate(q.context.len())?;
        Ok(scores)
    }

    fn score_choice(&self, q: &ChoiceQuery<'_>) -> Result<ChoiceScores<T>, ReaderError> {
        let resp = self.round_trip(WireRequest {
            id: q.id.to_owned(),
            kind: "choice".into(),
            question: q.question.to_owned(),
            tokens: q.context.tokens.iter().map(|t| t.text.clone()).collect(),
            options: Some(q.options.to_vec()),
        })?;
        let Some(logits) = resp.option_logits else {
            return Err(ReaderError::Failure(format!("{}: choice response lacks option logits", resp.id)));
        };
        let scores = ChoiceScores { option_logits: to_scalars(logits) };
        scores.validate(q.options.len())?;
        Ok(scores)
    }
}
