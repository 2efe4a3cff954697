use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::protocol::{ErrorLine, Handshake, MaskedScoreRequest, MaskedScoreResponse};
use super::MaskedScorer;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    broken: bool,
}

impl Connection {
    fn next_line(&mut self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => {
                self.broken = true;
                Err(Error::Protocol(format!("reading from bridge: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                Err(Error::Timeout(timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                Err(Error::Protocol("bridge closed its output".into()))
            }
        }
    }
}

/// Client side of protocol v1. One request is in flight at a time; callers
/// that need parallelism open several backends.
pub struct RemoteBackend {
    conn: Mutex<Connection>,
    model: String,
    timeout: Duration,
    child: Option<Child>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Connects over an arbitrary byte stream pair and performs the handshake.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut conn = Connection {
            writer: Box::new(writer),
            lines: rx,
            broken: false,
        };
        let hello = Handshake::parse(&conn.next_line(timeout)?)?;
        Ok(RemoteBackend {
            conn: Mutex::new(conn),
            model: hello.hello.model,
            timeout,
            child: None,
        })
    }

    /// Launches `command_line` (shell-style quoting) and talks to it over
    /// its standard streams. Its stderr is inherited.
    pub fn spawn(command_line: &str, timeout: Duration) -> Result<Self> {
        let argv = shlex::split(command_line)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::Invalid(format!("cannot parse bridge command `{command_line}`")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start bridge `{}`: {e}", argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match RemoteBackend::from_streams(stdout, stdin, timeout) {
            Ok(mut b) => {
                b.child = Some(child);
                Ok(b)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Serves `scorer` on a background thread and connects to it through
    /// in-process pipes. Every byte crosses the same wire format as a real bridge.
    pub fn loopback<S: MaskedScorer + Send + 'static>(scorer: S, timeout: Duration) -> Result<Self> {
        let (req_rx, req_tx) = std::io::pipe()?;
        let (resp_rx, resp_tx) = std::io::pipe()?;
        thread::spawn(move || {
            let name = scorer.name().to_string();
            let _ = serve(&scorer, &name, BufReader::new(req_rx), resp_tx);
        });
        RemoteBackend::from_streams(resp_rx, req_tx, timeout)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn score_remote(&self, request: &MaskedScoreRequest) -> Result<MaskedScoreResponse> {
        request.validate()?;
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if conn.broken {
            return Err(Error::Protocol(
                "connection is unusable after an earlier failure".into(),
            ));
        }
        let mut line = request.to_line()?;
        line.push('\n');
        if let Err(e) = conn.writer.write_all(line.as_bytes()).and_then(|_| conn.writer.flush()) {
            conn.broken = true;
            return Err(Error::Protocol(format!("writing to bridge: {e}")));
        }
        let reply = conn.next_line(self.timeout)?;
        let response = MaskedScoreResponse::parse_line(&reply)?;
        response.validate_against(request)?;
        Ok(response)
    }
}

impl Drop for RemoteBackend {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl MaskedScorer for RemoteBackend {
    fn score(&self, request: &MaskedScoreRequest) -> Result<MaskedScoreResponse> {
        self.score_remote(request)
    }

    fn name(&self) -> &str {
        &self.model
    }
}

fn write_line(out: &mut impl Write, line: &str) -> Result<()> {
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Bridge side of protocol v1: handshake, then one response or error line
/// per request line until `input` closes.
pub fn serve(scorer: &dyn MaskedScorer, model_name: &str, input: impl BufRead, mut output: impl Write) -> Result<()> {
    write_line(&mut output, &serde_json::to_string(&Handshake::new(model_name))?)?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<MaskedScoreRequest>(&line) {
            Ok(req) => match scorer.score(&req) {
                Ok(resp) => resp.to_line()?,
                Err(e) => serde_json::to_string(&ErrorLine {
                    request_id: Some(req.request_id),
                    error: e.to_string(),
                })?,
            },
            Err(e) => {
                let request_id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("request_id")?.as_str().map(String::from));
                serde_json::to_string(&ErrorLine {
                    request_id,
                    error: format!("malformed request: {e}"),
                })?
            }
        };
        write_line(&mut output, &reply)?;
    }
    Ok(())
}
