//! Out-of-process environments and agents.
//!
//! A plugin is any executable that speaks one JSON object per line on
//! stdin/stdout. The host writes a request, waits for exactly one response
//! line, and only then writes the next request.
//!
//! ```text
//! host → {"type":"hello","protocol":1,"kind":"environment"}
//! host ← {"type":"hello_ok","protocol":1,"descriptor":{...}}
//! host → {"type":"reset","seed":42}
//! host ← {"type":"obs","observation":[...],"reward":0,"done":false}
//! ```

mod agent;
pub mod conformance;
mod env;
mod process;

pub use agent::{PluginAgent, PluginAgentInfo, BLOB_SECTION};
pub use env::PluginEnv;
pub use process::{PluginProcess, DEFAULT_TIMEOUT};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PluginKind {
    Environment,
    Agent,
}

impl PluginKind {
    pub fn wire_name(self) -> &'static str {
        match self {
            PluginKind::Environment => "environment",
            PluginKind::Agent => "agent",
        }
    }
}

/// How to launch a plugin: program plus arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl PluginCommand {
    pub fn new(
        program: impl Into<String>,
        args: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    /// Splits a whitespace-separated command line. No shell quoting.
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
        })
    }

    pub fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PluginError {
    #[error("failed to start plugin `{command}`: {reason}")]
    Spawn { command: String, reason: String },
    #[error("plugin did not answer `{request}` within {timeout_ms} ms; process killed")]
    Timeout { request: String, timeout_ms: u64 },
    #[error("malformed JSON from plugin at byte {offset}: {reason}; line: {line:?}")]
    Parse {
        line: String,
        offset: usize,
        reason: String,
    },
    #[error("plugin speaks protocol {found}, host requires {expected}")]
    VersionMismatch { expected: u64, found: String },
    #[error("plugin contract violation: {0}")]
    Contract(String),
    #[error("plugin process exited ({status}) while handling `{request}`")]
    Died { request: String, status: String },
    #[error("plugin reported an error: {0}")]
    Remote(String),
    #[error("plugin I/O failure: {0}")]
    Io(String),
}
