use super::{check_theta, PriorBox, Simulator, SimulatorError};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

/// One line sent to the child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub theta: Vec<f64>,
    pub seed: u64,
}

/// One line read back: either `x` or `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

impl Session {
    fn spawn(command: &[String]) -> Result<Self, SimulatorError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| SimulatorError::Config("empty simulator command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(SimulatorError::Spawn)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            next_id: 0,
        })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A child process speaking newline-delimited JSON on stdin/stdout.
///
/// The child is started on first use and restarted after any failed call.
pub struct ExternalSimulator {
    command: Vec<String>,
    prior: PriorBox,
    x_dim: usize,
    timeout: Duration,
    session: Mutex<Option<Session>>,
}

impl std::fmt::Debug for ExternalSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalSimulator")
            .field("command", &self.command)
            .field("prior", &self.prior)
            .field("x_dim", &self.x_dim)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalSimulator {
    pub fn new(command: Vec<String>, prior: PriorBox, x_dim: usize, timeout: Duration) -> Result<Self, SimulatorError> {
        if command.is_empty() {
            return Err(SimulatorError::Config("empty simulator command".into()));
        }
        if x_dim == 0 {
            return Err(SimulatorError::Config("output dimension must be positive".into()));
        }
        Ok(Self {
            command,
            prior,
            x_dim,
            timeout,
            session: Mutex::new(None),
        })
    }

    fn call(&self, session: &mut Session, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        let id = session.next_id;
        session.next_id += 1;
        let mut line = serde_json::to_string(&Request {
            id,
            theta: theta.to_vec(),
            seed,
        })
        .expect("requests serialize");
        line.push('\n');
        session
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| session.stdin.flush())
            .map_err(|e| SimulatorError::Exited(e.to_string()))?;
        let raw = match session.lines.recv_timeout(self.timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => return Err(SimulatorError::Exited(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(SimulatorError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(SimulatorError::Exited("stdout closed".into())),
        };
        let response: Response = serde_json::from_str(&raw).map_err(|e| SimulatorError::Malformed {
            raw: raw.clone(),
            reason: e.to_string(),
        })?;
        if response.id != id {
            return Err(SimulatorError::Malformed {
                reason: format!("response id {} does not match request id {id}", response.id),
                raw,
            });
        }
        match (response.x, response.error) {
            (_, Some(e)) => Err(SimulatorError::Reported(e)),
            (Some(x), None) => {
                if x.len() != self.x_dim {
                    return Err(SimulatorError::OutputDim {
                        expected: self.x_dim,
                        got: x.len(),
                        raw,
                    });
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(SimulatorError::Malformed {
                        raw,
                        reason: "non-finite output".into(),
                    });
                }
                Ok(x)
            }
            (None, None) => Err(SimulatorError::Malformed {
                raw,
                reason: "neither x nor error present".into(),
            }),
        }
    }
}

impl Simulator for ExternalSimulator {
    fn name(&self) -> &str {
        "external"
    }

    fn prior(&self) -> &PriorBox {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        check_theta(&self.prior, theta)?;
        let mut guard = self.session.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Session::spawn(&self.command)?);
        }
        let result = self.call(guard.as_mut().expect("session started"), theta, seed);
        if result.is_err() {
            // the child may be wedged or out of step; start afresh next time
            *guard = None;
        }
        result
    }
}
