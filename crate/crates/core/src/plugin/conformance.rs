//! Runs the full message matrix against a plugin and reports one verdict per
//! message type.

use std::fmt;
use std::time::Duration;

use serde::Serialize;

use super::{PluginAgent, PluginCommand, PluginEnv, PluginKind};
use crate::agents::{Agent, AgentError, Hyperparameters, Mode};
use crate::envkit::{make_builtin, EnvError, Environment, Transition};

const PROBE_STEPS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub message: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub kind: PluginKind,
    pub command: String,
    pub checks: Vec<CheckOutcome>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} plugin `{}`", self.kind.wire_name(), self.command)?;
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "  {verdict} {:<14} {}", c.message, c.detail)?;
        }
        write!(
            f,
            "{}",
            if self.passed() {
                "conformant"
            } else {
                "NOT conformant"
            }
        )
    }
}

struct Recorder {
    checks: Vec<CheckOutcome>,
}

impl Recorder {
    fn record<T, E: fmt::Display>(
        &mut self,
        message: &str,
        result: Result<T, E>,
        ok: impl FnOnce(&T) -> String,
    ) -> Option<T> {
        let (passed, detail, value) = match result {
            Ok(v) => (true, ok(&v), Some(v)),
            Err(e) => (false, e.to_string(), None),
        };
        self.checks.push(CheckOutcome {
            message: message.to_string(),
            passed,
            detail,
        });
        value
    }

    fn skip(&mut self, messages: &[&str], reason: &str) {
        for m in messages {
            self.checks.push(CheckOutcome {
                message: m.to_string(),
                passed: false,
                detail: format!("not run: {reason}"),
            });
        }
    }
}

pub fn check_environment(command: &PluginCommand, timeout: Duration) -> ConformanceReport {
    let mut rec = Recorder { checks: Vec::new() };
    let rest = ["reset", "step", "render"];
    let Some(mut env) = rec.record("hello", PluginEnv::launch(command, timeout), |e| {
        format!(
            "descriptor `{}` with {} actions",
            e.descriptor().id,
            e.descriptor().action_count
        )
    }) else {
        rec.skip(&rest, "handshake failed");
        return finish(PluginKind::Environment, command, rec);
    };
    let actions = env.descriptor().action_count;
    let cap = env.descriptor().max_episode_steps.min(PROBE_STEPS);

    if rec
        .record("reset", env.reset(Some(0)), |r| {
            format!("observation {:?}", r.observation.to_wire())
        })
        .is_none()
    {
        rec.skip(&rest[1..], "reset failed");
        return finish(PluginKind::Environment, command, rec);
    }
    let stepped = (|| -> Result<usize, EnvError> {
        let mut steps = 0;
        for i in 0..cap {
            steps += 1;
            if env.step(i % actions)?.done {
                break;
            }
        }
        Ok(steps)
    })();
    rec.record("step", stepped, |n| format!("{n} valid step responses"));
    rec.record("render", env.render(), |_| "frame received".to_string());
    finish(PluginKind::Environment, command, rec)
}

/// Drives an agent plugin on a built-in environment matching its declared
/// observation kinds.
pub fn check_agent(command: &PluginCommand, timeout: Duration) -> ConformanceReport {
    let mut rec = Recorder { checks: Vec::new() };
    let rest = [
        "configure",
        "choose_action",
        "observe",
        "update",
        "save",
        "load",
    ];
    let Some((process, info)) = rec.record(
        "hello",
        PluginAgent::handshake(command, timeout),
        |(_, i)| format!("agent `{}`", i.id),
    ) else {
        rec.skip(&rest, "handshake failed");
        return finish(PluginKind::Agent, command, rec);
    };
    let env_id = if info.supported_obs.iter().any(|k| k == "discrete") {
        "FrozenLake-v0"
    } else {
        "CartPole-v1"
    };
    let mut env = make_builtin(env_id).expect("built-in environment");
    let hp = Hyperparameters::default();
    let Some(mut agent) = rec.record(
        "configure",
        PluginAgent::configure(process, info, env.descriptor(), &hp),
        |_| format!("configured for {env_id}"),
    ) else {
        rec.skip(&rest[1..], "configure failed");
        return finish(PluginKind::Agent, command, rec);
    };

    let mut chosen = Ok(0usize);
    let mut observed = Ok(0usize);
    let mut updated: Result<(usize, usize), AgentError> = Ok((0, 0));
    let mut obs = env.reset(Some(0)).expect("built-in reset").observation;
    for i in 0..PROBE_STEPS {
        let mode = if i % 4 == 3 { Mode::Test } else { Mode::Train };
        let action = match agent.choose_action(&obs, mode) {
            Ok(a) => a,
            Err(e) => {
                chosen = Err(e);
                break;
            }
        };
        chosen = chosen.map(|n| n + 1);
        let step = env.step(action).expect("built-in step");
        if mode == Mode::Train {
            let t = Transition {
                observation: obs.clone(),
                action,
                reward: step.reward,
                next_observation: step.observation.clone(),
                done: step.done,
            };
            if let Err(e) = agent.observe(&t) {
                observed = Err(e);
                break;
            }
            observed = observed.map(|n| n + 1);
            match agent.update() {
                Ok(loss) => updated = updated.map(|(n, l)| (n + 1, l + loss.is_some() as usize)),
                Err(e) => {
                    updated = Err(e);
                    break;
                }
            }
        }
        obs = if step.done {
            env.reset(Some(i as u64 + 1))
                .expect("built-in reset")
                .observation
        } else {
            step.observation
        };
    }
    rec.record("choose_action", chosen, |n| format!("{n} in-range actions"));
    rec.record("observe", observed, |n| {
        format!("{n} transitions acknowledged")
    });
    rec.record("update", updated, |(n, l)| {
        format!("{n} updates, {l} with loss")
    });
    let saved = rec.record("save", agent.save(), |s| {
        let bytes: usize = s
            .iter()
            .map(|w| match &w.data {
                crate::agents::SectionData::Bytes(b) => b.len(),
                crate::agents::SectionData::F64 { values, .. } => values.len() * 8,
            })
            .sum();
        format!("{bytes} byte blob")
    });
    match saved {
        Some(sections) => {
            rec.record("load", agent.load(&sections), |_| {
                "blob accepted".to_string()
            });
        }
        None => rec.skip(&["load"], "save failed"),
    }
    finish(PluginKind::Agent, command, rec)
}

pub fn check(kind: PluginKind, command: &PluginCommand, timeout: Duration) -> ConformanceReport {
    match kind {
        PluginKind::Environment => check_environment(command, timeout),
        PluginKind::Agent => check_agent(command, timeout),
    }
}

fn finish(kind: PluginKind, command: &PluginCommand, rec: Recorder) -> ConformanceReport {
    ConformanceReport {
        kind,
        command: command.display(),
        checks: rec.checks,
    }
}
