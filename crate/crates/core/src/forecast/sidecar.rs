//! Client for an external forecaster process speaking `odca-forecast/1`:
//! newline-delimited JSON over the child's stdin/stdout, handshake first.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ForecastRequest, Forecaster, SampleMatrix};
use crate::error::{Error, Result};

pub const PROTOCOL: &str = "odca-forecast/1";

const STDERR_TAIL: usize = 20;

#[derive(Serialize)]
struct WireRequest<'a> {
    id: u64,
    context: &'a [f64],
    horizon: usize,
    n_samples: usize,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    id: Option<u64>,
    #[serde(default)]
    samples: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Deserialize)]
struct Handshake {
    protocol: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    stderr: Arc<Mutex<VecDeque<String>>>,
    next_id: u64,
    broken: bool,
}

impl Worker {
    fn diagnostics(&self) -> String {
        let tail = self.stderr.lock().map(|t| t.iter().cloned().collect::<Vec<_>>().join(" | "));
        match tail {
            Ok(s) if !s.is_empty() => format!(" (stderr: {s})"),
            _ => String::new(),
        }
    }

    fn recv(&mut self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(line),
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                Err(Error::Backend(format!(
                    "sidecar timed out after {timeout:?}{}",
                    self.diagnostics()
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                let status = self.child.try_wait().ok().flatten();
                Err(Error::Backend(format!(
                    "sidecar closed its output (exit status {status:?}){}",
                    self.diagnostics()
                )))
            }
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of sidecar processes; each process serves one request at a time.
pub struct SidecarForecaster {
    path: PathBuf,
    workers: Vec<Mutex<Worker>>,
    cursor: AtomicUsize,
    timeout: Duration,
}

impl std::fmt::Debug for SidecarForecaster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SidecarForecaster")
            .field("path", &self.path)
            .field("workers", &self.workers.len())
            .finish()
    }
}

fn command_for(path: &Path) -> Command {
    if path.extension().is_some_and(|e| e == "py") {
        let mut c = Command::new("python3");
        c.arg("-u").arg(path);
        c
    } else {
        Command::new(path)
    }
}

fn spawn_worker(path: &Path, timeout: Duration) -> Result<Worker> {
    let mut child = command_for(path)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Backend(format!("cannot start sidecar {}: {e}", path.display())))?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");

    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let tail = Arc::new(Mutex::new(VecDeque::with_capacity(STDERR_TAIL)));
    let tail_w = Arc::clone(&tail);
    thread::spawn(move || {
        for line in BufReader::new(stderr).lines() {
            let Ok(line) = line else { break };
            if let Ok(mut t) = tail_w.lock() {
                if t.len() == STDERR_TAIL {
                    t.pop_front();
                }
                t.push_back(line);
            }
        }
    });

    let mut worker = Worker {
        child,
        stdin,
        lines: rx,
        stderr: tail,
        next_id: 0,
        broken: false,
    };
    let first = worker.recv(timeout)?;
    let hs: Handshake = serde_json::from_str(&first)
        .map_err(|e| Error::Backend(format!("bad handshake {first:?}: {e}")))?;
    if let Some(err) = hs.error {
        return Err(Error::Backend(format!("sidecar failed to start: {err}{}", worker.diagnostics())));
    }
    if hs.protocol.as_deref() != Some(PROTOCOL) {
        return Err(Error::Backend(format!(
            "sidecar speaks {:?}, expected {PROTOCOL}",
            hs.protocol
        )));
    }
    Ok(worker)
}

impl SidecarForecaster {
    pub fn spawn(path: &Path, pool_size: usize, timeout: Duration) -> Result<Self> {
        let workers = (0..pool_size.max(1))
            .map(|_| spawn_worker(path, timeout).map(Mutex::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            path: path.to_path_buf(),
            workers,
            cursor: AtomicUsize::new(0),
            timeout,
        })
    }

    fn request(&self, worker: &mut Worker, req: &ForecastRequest<'_>) -> Result<SampleMatrix> {
        if worker.broken {
            return Err(Error::Backend("sidecar worker is no longer usable".into()));
        }
        let id = worker.next_id;
        worker.next_id += 1;
        let line = serde_json::to_string(&WireRequest {
            id,
            context: req.context,
            horizon: req.horizon,
            n_samples: req.n_samples,
            seed: req.seed,
        })?;
        if let Err(e) = writeln!(worker.stdin, "{line}").and_then(|_| worker.stdin.flush()) {
            worker.broken = true;
            return Err(Error::Backend(format!("write to sidecar failed: {e}{}", worker.diagnostics())));
        }
        let reply = worker.recv(self.timeout)?;
        let resp: WireResponse = serde_json::from_str(&reply)
            .map_err(|e| Error::Backend(format!("unparseable sidecar reply {reply:?}: {e}")))?;
        if resp.id != Some(id) {
            worker.broken = true;
            return Err(Error::Backend(format!(
                "sidecar answered id {:?} to request {id}",
                resp.id
            )));
        }
        if let Some(err) = resp.error {
            return Err(Error::Backend(format!("sidecar error: {err}")));
        }
        let rows = resp
            .samples
            .ok_or_else(|| Error::Backend("sidecar reply lacks samples".into()))?;
        SampleMatrix::from_rows(rows)
    }
}

impl Forecaster for SidecarForecaster {
    fn name(&self) -> &str {
        "sidecar"
    }

    fn draw(&self, req: &ForecastRequest<'_>) -> Result<SampleMatrix> {
        let n = self.workers.len();
        let start = self.cursor.fetch_add(1, Ordering::Relaxed);
        // prefer an idle worker, otherwise wait on the round-robin choice
        for k in 0..n {
            if let Ok(mut w) = self.workers[(start + k) % n].try_lock() {
                return self.request(&mut w, req);
            }
        }
        let mut w = self.workers[start % n]
            .lock()
            .map_err(|_| Error::Backend("sidecar worker lock poisoned".into()))?;
        self.request(&mut w, req)
    }
}
