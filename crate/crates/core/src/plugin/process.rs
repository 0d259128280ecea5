use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{PluginCommand, PluginError, PluginKind, PROTOCOL_VERSION};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// A running plugin with a strictly alternating request/response channel.
///
/// Stdout is drained by a reader thread so that a silent plugin can be timed
/// out; the call itself is synchronous.
#[derive(Debug)]
pub struct PluginProcess {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    dead: Option<PluginError>,
}

impl PluginProcess {
    pub fn spawn(command: &PluginCommand, timeout: Duration) -> Result<Self, PluginError> {
        let display = command.display();
        let mut child = Command::new(&command.program)
            .args(&command.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PluginError::Spawn {
                command: display.clone(),
                reason: e.to_string(),
            })?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("plugin-stdout".into())
            .spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let mut line = String::new();
                    match reader.read_line(&mut line) {
                        Ok(0) => break,
                        Ok(_) => {
                            if tx.send(Ok(line)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            })
            .map_err(|e| PluginError::Spawn {
                command: display.clone(),
                reason: e.to_string(),
            })?;
        Ok(Self {
            command: display,
            child,
            stdin,
            lines: rx,
            timeout,
            dead: None,
        })
    }

    /// Spawns and performs the `hello` handshake; returns the process and
    /// the descriptor object the plugin announced.
    pub fn launch(
        command: &PluginCommand,
        kind: PluginKind,
        timeout: Duration,
    ) -> Result<(Self, Value), PluginError> {
        let mut process = Self::spawn(command, timeout)?;
        let reply = process.request(&json!({
            "type": "hello",
            "protocol": PROTOCOL_VERSION,
            "kind": kind.wire_name(),
        }))?;
        expect_type(&reply, "hello_ok")?;
        match reply.get("protocol") {
            Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION) => {}
            other => {
                let found = other.map_or_else(|| "none".to_string(), Value::to_string);
                let err = PluginError::VersionMismatch {
                    expected: PROTOCOL_VERSION,
                    found,
                };
                process.invalidate(err.clone());
                return Err(err);
            }
        }
        let descriptor = reply
            .get("descriptor")
            .filter(|d| d.is_object())
            .cloned()
            .ok_or_else(|| PluginError::Contract("hello_ok without a descriptor object".into()))?;
        Ok((process, descriptor))
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn is_alive(&self) -> bool {
        self.dead.is_none()
    }

    /// Sends one request and waits for its response line.
    pub fn request(&mut self, message: &Value) -> Result<Value, PluginError> {
        if let Some(err) = &self.dead {
            return Err(err.clone());
        }
        let request = message
            .get("type")
            .and_then(Value::as_str)
            .unwrap_or("?")
            .to_string();
        let mut line = serde_json::to_string(message).expect("JSON values serialize");
        line.push('\n');
        let written = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(std::io::ErrorKind::BrokenPipe.into()),
        };
        if written.is_err() {
            return Err(self.died(request));
        }
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => {
                let value = parse_line(&line).inspect_err(|e| self.invalidate(e.clone()))?;
                if value.get("type").and_then(Value::as_str) == Some("error") {
                    let message = value
                        .get("message")
                        .and_then(Value::as_str)
                        .unwrap_or("unspecified error");
                    return Err(PluginError::Remote(message.to_string()));
                }
                Ok(value)
            }
            Ok(Err(e)) => {
                let err = PluginError::Io(e.to_string());
                self.invalidate(err.clone());
                Err(err)
            }
            Err(RecvTimeoutError::Timeout) => {
                let err = PluginError::Timeout {
                    request,
                    timeout_ms: self.timeout.as_millis() as u64,
                };
                self.invalidate(err.clone());
                Err(err)
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.died(request)),
        }
    }

    fn died(&mut self, request: String) -> PluginError {
        let status = match self.child.wait_timeout_ms(500) {
            Some(s) => s,
            None => "still running, stdout closed".into(),
        };
        let err = PluginError::Died { request, status };
        self.invalidate(err.clone());
        err
    }

    /// Marks the handle dead and kills the process.
    pub fn invalidate(&mut self, reason: PluginError) {
        if self.dead.is_none() {
            self.dead = Some(reason);
        }
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

trait WaitBriefly {
    fn wait_timeout_ms(&mut self, ms: u64) -> Option<String>;
}

impl WaitBriefly for Child {
    fn wait_timeout_ms(&mut self, ms: u64) -> Option<String> {
        let deadline = std::time::Instant::now() + Duration::from_millis(ms);
        loop {
            match self.try_wait() {
                Ok(Some(status)) => return Some(status.to_string()),
                Ok(None) if std::time::Instant::now() < deadline => {
                    thread::sleep(Duration::from_millis(5))
                }
                _ => return None,
            }
        }
    }
}

fn parse_line(line: &str) -> Result<Value, PluginError> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    match serde_json::from_str::<Value>(trimmed) {
        Ok(v) if v.is_object() => Ok(v),
        Ok(_) => Err(PluginError::Parse {
            line: trimmed.to_string(),
            offset: 0,
            reason: "expected a JSON object".into(),
        }),
        Err(e) => Err(PluginError::Parse {
            line: trimmed.to_string(),
            offset: byte_offset(trimmed, e.line(), e.column()),
            reason: e.to_string(),
        }),
    }
}

/// serde_json reports 1-based line and column; lines here are single.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let preceding: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (preceding + column.saturating_sub(1)).min(text.len())
}

pub(crate) fn expect_type(reply: &Value, expected: &str) -> Result<(), PluginError> {
    match reply.get("type").and_then(Value::as_str) {
        Some(t) if t == expected => Ok(()),
        Some(t) => Err(PluginError::Contract(format!(
            "expected a `{expected}` message, got `{t}`"
        ))),
        None => Err(PluginError::Contract(format!(
            "expected a `{expected}` message, got one without a type"
        ))),
    }
}
