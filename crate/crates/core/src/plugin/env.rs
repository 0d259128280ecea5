use std::time::Duration;

use serde_json::{json, Value};

use super::process::expect_type;
use super::{PluginCommand, PluginError, PluginKind, PluginProcess};
use crate::envkit::{
    EnvDescriptor, EnvError, Environment, Frame, Lifecycle, Observation, StepResult,
};

/// An [`Environment`] backed by a plugin process. Every response is checked
/// against the descriptor announced at handshake.
#[derive(Debug)]
pub struct PluginEnv {
    process: PluginProcess,
    descriptor: EnvDescriptor,
    lifecycle: Lifecycle,
}

impl PluginEnv {
    pub fn launch(command: &PluginCommand, timeout: Duration) -> Result<Self, PluginError> {
        let (mut process, raw) = PluginProcess::launch(command, PluginKind::Environment, timeout)?;
        let descriptor = match parse_descriptor(raw) {
            Ok(d) => d,
            Err(e) => {
                process.invalidate(e.clone());
                return Err(e);
            }
        };
        Ok(Self {
            process,
            descriptor,
            lifecycle: Lifecycle::default(),
        })
    }

    fn call(&mut self, message: Value) -> Result<StepResult, PluginError> {
        let reply = self.process.request(&message)?;
        let checked = self.check_obs(&reply);
        if let Err(e) = &checked {
            self.process.invalidate(e.clone());
        }
        checked
    }

    fn check_obs(&self, reply: &Value) -> Result<StepResult, PluginError> {
        expect_type(reply, "obs")?;
        let values: Vec<f64> = reply
            .get("observation")
            .and_then(Value::as_array)
            .ok_or_else(|| {
                PluginError::Contract("obs message without an observation array".into())
            })?
            .iter()
            .map(|v| {
                v.as_f64().ok_or_else(|| {
                    PluginError::Contract(format!("non-numeric observation element {v}"))
                })
            })
            .collect::<Result<_, _>>()?;
        let observation =
            Observation::from_wire(&values, &self.descriptor.obs_kind).map_err(|e| {
                PluginError::Contract(format!("environment `{}`: {e}", self.descriptor.id))
            })?;
        let reward = reply
            .get("reward")
            .and_then(Value::as_f64)
            .filter(|r| r.is_finite())
            .ok_or_else(|| {
                PluginError::Contract("obs message needs a finite numeric reward".into())
            })?;
        let done = reply
            .get("done")
            .and_then(Value::as_bool)
            .ok_or_else(|| PluginError::Contract("obs message needs a boolean done flag".into()))?;
        let frame = reply.get("frame").cloned().map_or_else(
            || Frame::Custom {
                payload: json!({ "observation": values }),
            },
            frame_from_wire,
        );
        Ok(StepResult {
            observation,
            reward,
            done,
            frame,
        })
    }
}

fn parse_descriptor(raw: Value) -> Result<EnvDescriptor, PluginError> {
    let descriptor: EnvDescriptor = serde_json::from_value(raw)
        .map_err(|e| PluginError::Contract(format!("invalid environment descriptor: {e}")))?;
    descriptor
        .validate()
        .map_err(|e| PluginError::Contract(format!("invalid environment descriptor: {e}")))?;
    Ok(descriptor)
}

fn frame_from_wire(value: Value) -> Frame {
    serde_json::from_value(value.clone()).unwrap_or(Frame::Custom { payload: value })
}

impl Environment for PluginEnv {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<StepResult, EnvError> {
        let result = self.call(json!({ "type": "reset", "seed": seed }))?;
        self.lifecycle.begin();
        self.lifecycle.finish_if(result.done);
        Ok(result)
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.lifecycle.step(action, self.descriptor.action_count)?;
        let result = self.call(json!({ "type": "step", "action": action }))?;
        self.lifecycle.finish_if(result.done);
        Ok(result)
    }

    fn render(&mut self) -> Result<Frame, EnvError> {
        let reply = self.process.request(&json!({ "type": "render" }))?;
        expect_type(&reply, "frame")?;
        Ok(reply.get("frame").cloned().map_or(
            Frame::Custom {
                payload: Value::Null,
            },
            frame_from_wire,
        ))
    }
}
