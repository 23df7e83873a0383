//! Subprocess-backed models over a line-delimited JSON protocol.
//!
//! The client writes one request per line to the child's stdin and reads one
//! response per line from its stdout. Requests are never pipelined.
//!
//! ```text
//! > {"id":0,"kind":"hello"}
//! < {"id":0,"kind":"hello_ack","vocab_size":3}
//! > {"id":1,"kind":"predict","tokens":[0,3,3]}
//! < {"id":1,"kind":"dists","dists":[[1.0,0.0,0.0],[0.2,0.5,0.3],[0.3,0.3,0.4]]}
//! < {"id":7,"kind":"error","message":"..."}
//! ```
//!
//! Masked positions carry `vocab_size` as their token id. Each `dists` row
//! must have `vocab_size` nonnegative entries summing to 1 within 1e-6; rows
//! off by more than 1e-9 are renormalized.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::distribution::{Distribution, PositionDistributions, SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::models::{CallCounter, DenoisingModel};
use crate::sequence::{MaskedSequence, Token, VocabSpec};

/// Rows off unit mass by more than this are rejected; smaller drift past
/// [`SUM_TOLERANCE`] is renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Hello,
    Predict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: i64,
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<Token>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseBody {
    HelloAck { vocab_size: usize },
    Dists { dists: Vec<Vec<f64>> },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: i64,
    #[serde(flatten)]
    pub body: ResponseBody,
}

/// Checks a `dists` payload against the request and renormalizes rows.
pub fn validate_dists(rows: Vec<Vec<f64>>, len: usize, vocab: VocabSpec) -> Result<PositionDistributions> {
    if rows.len() != len {
        return Err(Error::Protocol(format!("expected {len} distribution rows, got {}", rows.len())));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != vocab.size() {
                return Err(Error::Protocol(format!(
                    "position {i}: expected {} probabilities, got {}",
                    vocab.size(),
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Protocol(format!("position {i}: probabilities must be finite and >= 0")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
                return Err(Error::Protocol(format!("position {i}: probabilities sum to {sum}")));
            }
            let dist = if (sum - 1.0).abs() <= SUM_TOLERANCE {
                Distribution::new(row)
            } else {
                Distribution::from_weights(row)
            };
            dist.map_err(|e| Error::Protocol(format!("position {i}: {e}")))
        })
        .collect()
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: i64,
    broken: Option<String>,
}

impl Channel {
    fn round_trip(&mut self, request: &Request, timeout: Duration) -> Result<ResponseBody> {
        if let Some(why) = &self.broken {
            return Err(Error::ModelUnavailable(why.clone()));
        }
        let result = self.exchange(request, timeout);
        if let Err(Error::ModelUnavailable(why) | Error::Protocol(why)) = &result {
            // The stream may be out of step now; refuse further use.
            self.broken = Some(format!("earlier failure: {why}"));
        }
        result
    }

    fn exchange(&mut self, request: &Request, timeout: Duration) -> Result<ResponseBody> {
        let mut line = serde_json::to_string(request).map_err(|e| Error::Protocol(e.to_string()))?;
        line.push('\n');
        let stdin = self.stdin.as_mut().expect("stdin open while channel lives");
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::ModelUnavailable(format!("cannot write to model process: {e}")))?;
        let reply = match self.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(Error::ModelUnavailable(format!("cannot read from model process: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::ModelUnavailable(format!(
                    "no response within {} ms",
                    timeout.as_millis()
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::ModelUnavailable("model process closed its output".into()))
            }
        };
        let response: Response = serde_json::from_str(&reply)
            .map_err(|e| Error::Protocol(format!("malformed response {reply:?}: {e}")))?;
        if response.id != request.id {
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {}",
                response.id, request.id
            )));
        }
        if let ResponseBody::Error { message } = response.body {
            return Err(Error::Protocol(format!("model process reported: {message}")));
        }
        Ok(response.body)
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A [`DenoisingModel`] served by a child process.
pub struct ExternalModel {
    command: String,
    vocab: VocabSpec,
    timeout: Duration,
    channel: Mutex<Channel>,
    calls: CallCounter,
}

impl ExternalModel {
    /// Spawns `sh -c command` and performs the handshake. When `expected` is
    /// given, a different declared vocabulary is a configuration error.
    pub fn spawn(command: &str, timeout: Duration, expected: Option<VocabSpec>) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ModelUnavailable(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut channel = Channel {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            broken: None,
        };
        let hello = Request {
            id: 0,
            kind: RequestKind::Hello,
            tokens: None,
        };
        let vocab = match channel.round_trip(&hello, timeout)? {
            ResponseBody::HelloAck { vocab_size } => VocabSpec::new(vocab_size)?,
            other => return Err(Error::Protocol(format!("expected hello_ack, got {other:?}"))),
        };
        if let Some(want) = expected {
            if want != vocab {
                return Err(Error::config(format!(
                    "external model declares vocab_size {}, but the run uses {}",
                    vocab.size(),
                    want.size()
                )));
            }
        }
        Ok(Self {
            command: command.to_owned(),
            vocab,
            timeout,
            channel: Mutex::new(channel),
            calls: CallCounter::default(),
        })
    }
}

impl DenoisingModel for ExternalModel {
    fn vocab(&self) -> VocabSpec {
        self.vocab
    }

    fn predict(&self, seq: &MaskedSequence) -> Result<PositionDistributions> {
        if seq.vocab() != self.vocab {
            return Err(Error::Dimension {
                expected: self.vocab.size(),
                got: seq.vocab().size(),
            });
        }
        self.calls.bump();
        let mut ch = self.channel.lock().expect("external model lock poisoned");
        let request = Request {
            id: ch.next_id,
            kind: RequestKind::Predict,
            tokens: Some(seq.tokens().to_vec()),
        };
        ch.next_id += 1;
        match ch.round_trip(&request, self.timeout)? {
            ResponseBody::Dists { dists } => validate_dists(dists, seq.len(), self.vocab),
            other => Err(Error::Protocol(format!("expected dists, got {other:?}"))),
        }
    }

    fn call_count(&self) -> u64 {
        self.calls.get()
    }

    fn describe(&self) -> String {
        format!("external({})", self.command)
    }
}

fn answer(model: &dyn DenoisingModel, line: &str) -> Response {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|id| id.as_i64()))
                .unwrap_or(-1);
            return Response {
                id,
                body: ResponseBody::Error {
                    message: format!("malformed request: {e}"),
                },
            };
        }
    };
    let body = match (request.kind, request.tokens) {
        (RequestKind::Hello, _) => ResponseBody::HelloAck {
            vocab_size: model.vocab().size(),
        },
        (RequestKind::Predict, None) => ResponseBody::Error {
            message: "predict request without tokens".into(),
        },
        (RequestKind::Predict, Some(tokens)) => match MaskedSequence::new(model.vocab(), tokens)
            .and_then(|seq| model.predict(&seq))
        {
            Ok(d) => ResponseBody::Dists {
                dists: d.iter().map(|p| p.probs().to_vec()).collect(),
            },
            Err(e) => ResponseBody::Error { message: e.to_string() },
        },
    };
    Response { id: request.id, body }
}

/// Serves `model` until `input` closes. Malformed requests get an `error`
/// response carrying their id (or -1) and the loop continues.
pub fn serve<R: BufRead, W: Write>(model: &dyn DenoisingModel, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = answer(model, &line);
        serde_json::to_writer(&mut output, &response).map_err(|e| Error::Io(e.into()))?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
