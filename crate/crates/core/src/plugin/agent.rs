use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::process::expect_type;
use super::{PluginCommand, PluginError, PluginKind, PluginProcess};
use crate::agents::{Agent, AgentError, Hyperparameters, Mode, SectionData, WeightSection};
use crate::envkit::{EnvDescriptor, Observation, Transition};

pub const BLOB_SECTION: &str = "plugin.blob";

/// What an agent plugin announces at handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PluginAgentInfo {
    pub id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default = "both_kinds")]
    pub supported_obs: Vec<String>,
}

fn both_kinds() -> Vec<String> {
    vec!["discrete".into(), "continuous".into()]
}

impl PluginAgentInfo {
    pub fn from_wire(raw: Value) -> Result<Self, PluginError> {
        let info: Self = serde_json::from_value(raw)
            .map_err(|e| PluginError::Contract(format!("invalid agent descriptor: {e}")))?;
        if info.id.trim().is_empty() {
            return Err(PluginError::Contract(
                "agent descriptor has an empty id".into(),
            ));
        }
        if let Some(bad) = info
            .supported_obs
            .iter()
            .find(|k| *k != "discrete" && *k != "continuous")
        {
            return Err(PluginError::Contract(format!(
                "unknown observation kind `{bad}` in agent descriptor"
            )));
        }
        Ok(info)
    }
}

/// An [`Agent`] backed by a plugin process.
///
/// After the handshake the host sends one `configure` message carrying the
/// environment descriptor and hyperparameters.
#[derive(Debug)]
pub struct PluginAgent {
    process: PluginProcess,
    info: PluginAgentInfo,
    action_count: usize,
}

impl PluginAgent {
    /// Handshake only; returns the announced descriptor alongside the
    /// unconfigured process.
    pub fn handshake(
        command: &PluginCommand,
        timeout: Duration,
    ) -> Result<(PluginProcess, PluginAgentInfo), PluginError> {
        let (mut process, raw) = PluginProcess::launch(command, PluginKind::Agent, timeout)?;
        match PluginAgentInfo::from_wire(raw) {
            Ok(info) => Ok((process, info)),
            Err(e) => {
                process.invalidate(e.clone());
                Err(e)
            }
        }
    }

    pub fn launch(
        command: &PluginCommand,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
        timeout: Duration,
    ) -> Result<Self, PluginError> {
        let (process, info) = Self::handshake(command, timeout)?;
        Self::configure(process, info, env, hp)
    }

    pub fn configure(
        mut process: PluginProcess,
        info: PluginAgentInfo,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
    ) -> Result<Self, PluginError> {
        let reply = process.request(&json!({
            "type": "configure",
            "env": env,
            "hyperparameters": hp,
        }))?;
        let mut agent = Self {
            process,
            info,
            action_count: env.action_count,
        };
        agent.checked(|_| expect_type(&reply, "ack"))?;
        Ok(agent)
    }

    pub fn info(&self) -> &PluginAgentInfo {
        &self.info
    }

    fn checked<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, PluginError>,
    ) -> Result<T, PluginError> {
        let out = f(self);
        if let Err(e) = &out {
            if !matches!(e, PluginError::Remote(_)) {
                self.process.invalidate(e.clone());
            }
        }
        out
    }

    fn call(&mut self, message: Value, expected: &str) -> Result<Value, PluginError> {
        let reply = self.process.request(&message)?;
        self.checked(|_| expect_type(&reply, expected))?;
        Ok(reply)
    }
}

impl Agent for PluginAgent {
    fn id(&self) -> &str {
        &self.info.id
    }

    fn choose_action(
        &mut self,
        observation: &Observation,
        mode: Mode,
    ) -> Result<usize, AgentError> {
        let reply = self.call(
            json!({
                "type": "choose_action",
                "observation": observation.to_wire(),
                "mode": mode.as_str(),
            }),
            "action",
        )?;
        let action_count = self.action_count;
        Ok(
            self.checked(|_| match reply.get("action").and_then(Value::as_u64) {
                Some(a) if (a as usize) < action_count => Ok(a as usize),
                Some(a) => Err(PluginError::Contract(format!(
                    "agent chose action {a} but the environment has {action_count} actions"
                ))),
                None => Err(PluginError::Contract(format!(
                    "action message needs a non-negative integer action, got {}",
                    reply.get("action").unwrap_or(&Value::Null)
                ))),
            })?,
        )
    }

    fn observe(&mut self, t: &Transition) -> Result<(), AgentError> {
        self.call(
            json!({
                "type": "observe",
                "transition": {
                    "observation": t.observation.to_wire(),
                    "action": t.action,
                    "reward": t.reward,
                    "nextObservation": t.next_observation.to_wire(),
                    "done": t.done,
                },
            }),
            "ack",
        )?;
        Ok(())
    }

    fn update(&mut self) -> Result<Option<f64>, AgentError> {
        let reply = self.call(json!({ "type": "update" }), "updated")?;
        Ok(self.checked(|_| match reply.get("loss") {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|l| l.is_finite())
                .map(Some)
                .ok_or_else(|| {
                    PluginError::Contract(format!("loss must be a finite number, got {v}"))
                }),
        })?)
    }

    fn save(&mut self) -> Result<Vec<WeightSection>, AgentError> {
        let reply = self.call(json!({ "type": "save" }), "saved")?;
        let bytes = self.checked(|_| {
            let text = reply.get("blob").and_then(Value::as_str).ok_or_else(|| {
                PluginError::Contract("saved message needs a base64 blob string".into())
            })?;
            BASE64
                .decode(text)
                .map_err(|e| PluginError::Contract(format!("blob is not valid base64: {e}")))
        })?;
        Ok(vec![WeightSection::bytes(BLOB_SECTION, bytes)])
    }

    fn load(&mut self, sections: &[WeightSection]) -> Result<(), AgentError> {
        let blob = match sections {
            [WeightSection {
                name,
                data: SectionData::Bytes(b),
            }] if name == BLOB_SECTION => b,
            _ => {
                return Err(AgentError::Weights(format!(
                    "plugin agents expect a single `{BLOB_SECTION}` byte section"
                )))
            }
        };
        self.call(
            json!({ "type": "load", "blob": BASE64.encode(blob) }),
            "ack",
        )?;
        Ok(())
    }
}
