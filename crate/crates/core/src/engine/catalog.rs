use std::collections::BTreeMap;
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::agents::{self, Agent, AgentDescriptor, Hyperparameters};
use crate::envkit::{self, EnvDescriptor, Environment};
use crate::plugin::{PluginAgent, PluginAgentInfo, PluginCommand, PluginEnv, PluginKind};

#[derive(Debug, Clone)]
struct EnvPlugin {
    command: PluginCommand,
    descriptor: EnvDescriptor,
}

#[derive(Debug, Clone)]
struct AgentPlugin {
    command: PluginCommand,
    info: PluginAgentInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegisteredPlugin {
    pub id: String,
    pub kind: PluginKind,
    pub command: PluginCommand,
}

/// Resolves environment and agent ids, built-in first, then registered
/// plugins.
#[derive(Debug)]
pub struct Catalog {
    envs: RwLock<BTreeMap<String, EnvPlugin>>,
    agents: RwLock<BTreeMap<String, AgentPlugin>>,
    plugin_timeout: Duration,
}

impl Catalog {
    pub fn new(plugin_timeout: Duration) -> Self {
        Self {
            envs: RwLock::default(),
            agents: RwLock::default(),
            plugin_timeout,
        }
    }

    pub fn plugin_timeout(&self) -> Duration {
        self.plugin_timeout
    }

    pub fn environments(&self) -> Vec<EnvDescriptor> {
        let mut out = envkit::builtin_descriptors();
        out.extend(
            self.envs
                .read()
                .expect("catalog lock")
                .values()
                .map(|p| p.descriptor.clone()),
        );
        out
    }

    pub fn agents(&self) -> Vec<AgentDescriptor> {
        let mut out = agents::builtin_descriptors();
        out.extend(
            self.agents
                .read()
                .expect("catalog lock")
                .values()
                .map(plugin_agent_descriptor),
        );
        out
    }

    pub fn env_descriptor(&self, id: &str) -> Result<EnvDescriptor, EngineError> {
        if let Some(env) = envkit::make_builtin(id) {
            return Ok(env.descriptor().clone());
        }
        self.envs
            .read()
            .expect("catalog lock")
            .get(id)
            .map(|p| p.descriptor.clone())
            .ok_or_else(|| EngineError::NotFound(format!("unknown environment `{id}`")))
    }

    pub fn agent_descriptor(&self, id: &str) -> Result<AgentDescriptor, EngineError> {
        if let Some(d) = agents::builtin_descriptor(id) {
            return Ok(d);
        }
        self.agents
            .read()
            .expect("catalog lock")
            .get(id)
            .map(plugin_agent_descriptor)
            .ok_or_else(|| EngineError::NotFound(format!("unknown agent `{id}`")))
    }

    pub fn is_plugin_agent(&self, id: &str) -> bool {
        self.agents.read().expect("catalog lock").contains_key(id)
    }

    pub fn make_env(&self, id: &str) -> Result<Box<dyn Environment>, EngineError> {
        if let Some(env) = envkit::make_builtin(id) {
            return Ok(env);
        }
        let plugin = self
            .envs
            .read()
            .expect("catalog lock")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::NotFound(format!("unknown environment `{id}`")))?;
        let env = PluginEnv::launch(&plugin.command, self.plugin_timeout)?;
        if env.descriptor() != &plugin.descriptor {
            return Err(EngineError::Plugin(format!(
                "environment plugin `{id}` announced a different descriptor than at registration"
            )));
        }
        Ok(Box::new(env))
    }

    pub fn make_agent(
        &self,
        id: &str,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
    ) -> Result<Box<dyn Agent>, EngineError> {
        if agents::builtin_descriptor(id).is_some() {
            return Ok(agents::make_agent(id, env, hp)?);
        }
        let plugin = self
            .agents
            .read()
            .expect("catalog lock")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::NotFound(format!("unknown agent `{id}`")))?;
        Ok(Box::new(PluginAgent::launch(
            &plugin.command,
            env,
            hp,
            self.plugin_timeout,
        )?))
    }

    /// Launches the plugin once to read its descriptor, then registers it
    /// under the id it announces. Re-registering a plugin id replaces it;
    /// built-in ids cannot be shadowed.
    pub fn register(
        &self,
        kind: PluginKind,
        command: PluginCommand,
    ) -> Result<RegisteredPlugin, EngineError> {
        let id = match kind {
            PluginKind::Environment => {
                let env = PluginEnv::launch(&command, self.plugin_timeout)?;
                let descriptor = env.descriptor().clone();
                let id = descriptor.id.clone();
                reject_builtin(&id, envkit::make_builtin(&id).is_some())?;
                self.envs.write().expect("catalog lock").insert(
                    id.clone(),
                    EnvPlugin {
                        command: command.clone(),
                        descriptor,
                    },
                );
                id
            }
            PluginKind::Agent => {
                let (_, info) = PluginAgent::handshake(&command, self.plugin_timeout)?;
                let id = info.id.clone();
                reject_builtin(&id, agents::builtin_descriptor(&id).is_some())?;
                self.agents.write().expect("catalog lock").insert(
                    id.clone(),
                    AgentPlugin {
                        command: command.clone(),
                        info,
                    },
                );
                id
            }
        };
        Ok(RegisteredPlugin { id, kind, command })
    }
}

fn reject_builtin(id: &str, builtin: bool) -> Result<(), EngineError> {
    if builtin {
        Err(EngineError::BadRequest(format!(
            "plugin id `{id}` clashes with a built-in"
        )))
    } else {
        Ok(())
    }
}

fn plugin_agent_descriptor(p: &AgentPlugin) -> AgentDescriptor {
    AgentDescriptor {
        id: p.info.id.clone(),
        display_name: p
            .info
            .display_name
            .clone()
            .unwrap_or_else(|| p.info.id.clone()),
        supported_obs: p.info.supported_obs.clone(),
        recurrent: false,
        description: format!("Plugin agent `{}`", p.command.display()),
        default_hyperparameters: Hyperparameters::default(),
        tooltips: Hyperparameters::tooltips(),
    }
}
