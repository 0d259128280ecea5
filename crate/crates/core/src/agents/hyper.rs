use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Every tunable of every built-in agent. Agents ignore fields that do not
/// apply to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Hyperparameters {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_interval: u64,
    pub update_every: u64,
    pub hidden_layers: Vec<usize>,
    pub seq_len: usize,
    pub recurrent_hidden: usize,
    pub clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub rollout_length: usize,
    pub episodes: u64,
    pub max_steps_per_episode: u64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            batch_size: 64,
            buffer_capacity: 50_000,
            target_sync_interval: 500,
            update_every: 1,
            hidden_layers: vec![64, 64],
            seq_len: 8,
            recurrent_hidden: 32,
            clip_epsilon: 0.2,
            ppo_epochs: 4,
            rollout_length: 512,
            episodes: 500,
            max_steps_per_episode: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HyperparameterError {
    #[error("{0}")]
    Invalid(String),
    #[error("unknown hyperparameter `{key}`; valid keys: {}", valid.join(", "))]
    UnknownKey { key: String, valid: Vec<String> },
    #[error("invalid value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

impl Hyperparameters {
    /// Defaults tuned per agent.
    pub fn defaults_for(agent_id: &str) -> Self {
        let base = Self::default();
        match agent_id {
            "qlearning" | "sarsa" => Self {
                learning_rate: 0.1,
                epsilon_decay_steps: 20_000,
                episodes: 2_000,
                max_steps_per_episode: 100,
                ..base
            },
            "reinforce" => Self {
                learning_rate: 1e-3,
                episodes: 1_000,
                ..base
            },
            "ppo" => Self {
                learning_rate: 3e-4,
                episodes: 1_000,
                ..base
            },
            "drqn" | "adrqn" => Self {
                batch_size: 32,
                buffer_capacity: 20_000,
                target_sync_interval: 200,
                episodes: 1_000,
                ..base
            },
            _ => base,
        }
    }

    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(Value::Object(map)) => map.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), HyperparameterError> {
        let fail = |msg: &str| Err(HyperparameterError::Invalid(msg.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must be in [0,1]");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learningRate must be a positive number");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) {
            return fail("epsilonStart must be in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_end) {
            return fail("epsilonEnd must be in [0,1]");
        }
        if self.epsilon_end > self.epsilon_start {
            return fail("epsilonEnd must not exceed epsilonStart");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail("clipEpsilon must be in (0,1)");
        }
        let counts = [
            ("epsilonDecaySteps", self.epsilon_decay_steps),
            ("batchSize", self.batch_size as u64),
            ("bufferCapacity", self.buffer_capacity as u64),
            ("targetSyncInterval", self.target_sync_interval),
            ("updateEvery", self.update_every),
            ("seqLen", self.seq_len as u64),
            ("recurrentHidden", self.recurrent_hidden as u64),
            ("ppoEpochs", self.ppo_epochs as u64),
            ("rolloutLength", self.rollout_length as u64),
            ("episodes", self.episodes),
            ("maxStepsPerEpisode", self.max_steps_per_episode),
        ];
        for (name, value) in counts {
            if value < 1 {
                return Err(HyperparameterError::Invalid(format!(
                    "{name} must be at least 1"
                )));
            }
        }
        if self.hidden_layers.contains(&0) {
            return fail("hiddenLayers widths must be at least 1");
        }
        Ok(())
    }

    /// Overlays a partial JSON object onto `self`. Unknown keys are errors.
    pub fn merge_json(&self, overrides: &Value) -> Result<Self, HyperparameterError> {
        let Value::Object(patch) = overrides else {
            if overrides.is_null() {
                return Ok(self.clone());
            }
            return Err(HyperparameterError::Invalid(
                "hyperparameters must be a JSON object".into(),
            ));
        };
        let Value::Object(mut current) = serde_json::to_value(self).expect("serializable") else {
            unreachable!("struct serializes to an object")
        };
        let valid = Self::keys();
        for (key, value) in patch {
            if !current.contains_key(key) {
                return Err(HyperparameterError::UnknownKey {
                    key: key.clone(),
                    valid,
                });
            }
            current.insert(key.clone(), value.clone());
        }
        let merged: Self = serde_json::from_value(Value::Object(current))
            .map_err(|e| HyperparameterError::Invalid(format!("invalid hyperparameters: {e}")))?;
        merged.validate()?;
        Ok(merged)
    }

    /// Applies a `key=value` assignment as typed on a command line.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), HyperparameterError> {
        if !Self::keys().iter().any(|k| k == key) {
            return Err(HyperparameterError::UnknownKey {
                key: key.to_string(),
                valid: Self::keys(),
            });
        }
        let value = if key == "hiddenLayers" {
            parse_width_list(raw).map_err(|reason| HyperparameterError::BadValue {
                key: key.to_string(),
                reason,
            })?
        } else {
            serde_json::from_str(raw.trim()).map_err(|_| HyperparameterError::BadValue {
                key: key.to_string(),
                reason: format!("`{raw}` is not a number"),
            })?
        };
        let mut patch = serde_json::Map::new();
        patch.insert(key.to_string(), value);
        let candidate = self
            .merge_json_unchecked(&Value::Object(patch))
            .map_err(|e| HyperparameterError::BadValue {
                key: key.to_string(),
                reason: e,
            })?;
        *self = candidate;
        Ok(())
    }

    fn merge_json_unchecked(&self, patch: &Value) -> Result<Self, String> {
        let mut current = serde_json::to_value(self).expect("serializable");
        if let (Value::Object(cur), Value::Object(p)) = (&mut current, patch) {
            for (k, v) in p {
                cur.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(current).map_err(|e| e.to_string())
    }

    /// Human-readable help for each field.
    pub fn tooltips() -> BTreeMap<String, String> {
        [
            (
                "gamma",
                "Discount factor for future rewards, between 0 and 1.",
            ),
            ("learningRate", "Step size of each learning update."),
            ("epsilonStart", "Exploration rate at the start of training."),
            ("epsilonEnd", "Exploration rate after annealing finishes."),
            (
                "epsilonDecaySteps",
                "Environment steps over which exploration decays linearly.",
            ),
            (
                "batchSize",
                "Transitions (or sequences, or samples) per gradient update.",
            ),
            (
                "bufferCapacity",
                "Maximum number of transitions kept in replay memory.",
            ),
            (
                "targetSyncInterval",
                "Updates between copies of the online network into the target network.",
            ),
            ("updateEvery", "Environment steps between learning updates."),
            ("hiddenLayers", "Widths of the hidden layers, e.g. 64,64."),
            (
                "seqLen",
                "Length of replayed sequences for recurrent agents.",
            ),
            ("recurrentHidden", "Size of the recurrent hidden state."),
            ("clipEpsilon", "PPO probability-ratio clipping range."),
            ("ppoEpochs", "Passes over each PPO rollout."),
            (
                "rolloutLength",
                "Environment steps collected before each PPO update.",
            ),
            ("episodes", "Number of episodes to run."),
            (
                "maxStepsPerEpisode",
                "Step limit per episode (the environment may end sooner).",
            ),
            (
                "seed",
                "Master random seed; the same seed reproduces the same run.",
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }
}

fn parse_width_list(raw: &str) -> Result<Value, String> {
    let trimmed = raw.trim().trim_start_matches('[').trim_end_matches(']');
    if trimmed.trim().is_empty() {
        return Ok(Value::Array(Vec::new()));
    }
    trimmed
        .split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map(Value::from)
                .map_err(|_| format!("`{raw}` is not a comma-separated list of widths"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Value::Array)
}

/// Linear annealing from `start` to `end` over `decay_steps`.
pub fn anneal_epsilon(start: f64, end: f64, decay_steps: u64, step: u64) -> f64 {
    if step >= decay_steps {
        return end;
    }
    start + (end - start) * (step as f64 / decay_steps as f64)
}
