//! The environment contract and the built-in environments.
//!
//! Environments emit raw observations; any scaling is the agent's business.
//! Render frames are structured state snapshots rather than pixels.

mod cartpole;
mod drug_dosage;
mod emarket;
mod frozen_lake;
mod mountain_car;
mod rng;

pub use cartpole::{cartpole_dynamics, cartpole_terminal, CartPole, CartPoleState};
pub use drug_dosage::{drug_dose_step, DrugDosage, DrugState, DOSES};
pub use emarket::{EMarket, SELLER_QUALITIES};
pub use frozen_lake::{frozen_lake_step, FrozenLake, FROZEN_LAKE_MAP};
pub use mountain_car::{mountain_car_dynamics, MountainCar};
pub use rng::SplitMix64;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plugin::PluginError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObsKind {
    Discrete { n: usize },
    Continuous { dim: usize },
}

impl ObsKind {
    /// Width of the feature vector a function approximator sees: one-hot
    /// for discrete observations, the raw vector otherwise.
    pub fn feature_dim(&self) -> usize {
        match *self {
            ObsKind::Discrete { n } => n,
            ObsKind::Continuous { dim } => dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ObsKind::Discrete { .. })
    }

    pub fn conforms(&self, obs: &Observation) -> bool {
        match (self, obs) {
            (ObsKind::Discrete { n }, Observation::Discrete(i)) => i < n,
            (ObsKind::Continuous { dim }, Observation::Continuous(v)) => {
                v.len() == *dim && v.iter().all(|x| x.is_finite())
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvDescriptor {
    pub id: String,
    pub obs_kind: ObsKind,
    pub action_count: usize,
    pub max_episode_steps: usize,
    pub partially_observable: bool,
    pub render_schema: String,
}

impl EnvDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("descriptor id must not be empty".into());
        }
        if self.action_count < 2 {
            return Err(format!(
                "actionCount must be at least 2, got {}",
                self.action_count
            ));
        }
        if self.max_episode_steps < 1 {
            return Err("maxEpisodeSteps must be at least 1".into());
        }
        if self.obs_kind.feature_dim() == 0 {
            return Err("observation space must not be empty".into());
        }
        Ok(())
    }
}

/// A discrete state index or a real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Observation {
    /// Feature encoding used by the deep agents.
    pub fn features(&self, kind: &ObsKind) -> Vec<f64> {
        let mut out = vec![0.0; kind.feature_dim()];
        self.write_features(kind, &mut out);
        out
    }

    pub fn write_features(&self, kind: &ObsKind, out: &mut [f64]) {
        match self {
            Observation::Discrete(i) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                if let Some(slot) = out.get_mut(*i) {
                    *slot = 1.0;
                }
            }
            Observation::Continuous(v) => {
                debug_assert_eq!(v.len(), kind.feature_dim());
                out.copy_from_slice(v);
            }
        }
    }

    /// Discrete index, if this is a discrete observation.
    pub fn index(&self) -> Option<usize> {
        match self {
            Observation::Discrete(i) => Some(*i),
            Observation::Continuous(_) => None,
        }
    }

    /// Plugin wire form: always an array (`[index]` for discrete spaces).
    pub fn to_wire(&self) -> Vec<f64> {
        match self {
            Observation::Discrete(i) => vec![*i as f64],
            Observation::Continuous(v) => v.clone(),
        }
    }

    pub fn from_wire(values: &[f64], kind: &ObsKind) -> Result<Self, String> {
        match kind {
            ObsKind::Discrete { n } => {
                let [v] = values else {
                    return Err(format!(
                        "expected a 1-element observation for a discrete space, got {} values",
                        values.len()
                    ));
                };
                if v.fract() != 0.0 || *v < 0.0 || *v >= *n as f64 {
                    return Err(format!("discrete observation {v} outside [0, {n})"));
                }
                Ok(Observation::Discrete(*v as usize))
            }
            ObsKind::Continuous { dim } => {
                if values.len() != *dim {
                    return Err(format!(
                        "expected a {dim}-dim observation, got {} values",
                        values.len()
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err("observation contains a non-finite value".into());
                }
                Ok(Observation::Continuous(values.to_vec()))
            }
        }
    }
}

/// Structured render payload, tagged by the environment's render schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schema")]
pub enum Frame {
    #[serde(rename = "frozenlake")]
    FrozenLake { agent: usize, map: Vec<String> },
    #[serde(rename = "cartpole")]
    CartPole { x: f64, theta: f64 },
    #[serde(rename = "mountaincar")]
    MountainCar { position: f64 },
    #[serde(rename = "drug-dosage")]
    DrugDosage {
        tumor: f64,
        toxicity: f64,
        dose: f64,
    },
    #[serde(rename = "emarket")]
    EMarket {
        seller: Option<usize>,
        outcome: Option<bool>,
    },
    #[serde(rename = "custom")]
    Custom { payload: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transition {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Observation,
    pub done: bool,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action {action} out of range for {action_count} actions")]
    InvalidAction { action: usize, action_count: usize },
    #[error("step called on a finished episode; reset first")]
    EpisodeFinished,
    #[error("step called before reset")]
    NotReset,
    #[error(transparent)]
    Plugin(#[from] PluginError),
}

pub trait Environment: Send {
    fn descriptor(&self) -> &EnvDescriptor;

    /// Starts a new episode. An explicit seed reseeds the environment's
    /// generator; `None` continues the current stream.
    fn reset(&mut self, seed: Option<u64>) -> Result<StepResult, EnvError>;

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError>;

    fn render(&mut self) -> Result<Frame, EnvError>;
}

/// Tracks reset/done so that stepping a finished episode is a contract error.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Lifecycle {
    started: bool,
    done: bool,
    steps: usize,
}

impl Lifecycle {
    pub(crate) fn begin(&mut self) {
        *self = Self {
            started: true,
            done: false,
            steps: 0,
        };
    }

    /// Validates a step request and counts it; returns the 1-based step index.
    pub(crate) fn step(&mut self, action: usize, action_count: usize) -> Result<usize, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if action >= action_count {
            return Err(EnvError::InvalidAction {
                action,
                action_count,
            });
        }
        self.steps += 1;
        Ok(self.steps)
    }

    pub(crate) fn finish_if(&mut self, done: bool) -> bool {
        self.done = done;
        done
    }
}

pub const FROZEN_LAKE_ID: &str = "FrozenLake-v0";
pub const FROZEN_LAKE_SLIPPERY_ID: &str = "FrozenLakeSlippery-v0";
pub const CARTPOLE_ID: &str = "CartPole-v1";
pub const MOUNTAIN_CAR_ID: &str = "MountainCar-v0";
pub const DRUG_DOSAGE_ID: &str = "DrugDosage-v0";
pub const EMARKET_ID: &str = "EMarket-v0";

pub fn builtin_ids() -> [&'static str; 6] {
    [
        FROZEN_LAKE_ID,
        FROZEN_LAKE_SLIPPERY_ID,
        CARTPOLE_ID,
        MOUNTAIN_CAR_ID,
        DRUG_DOSAGE_ID,
        EMARKET_ID,
    ]
}

pub fn make_builtin(id: &str) -> Option<Box<dyn Environment>> {
    let env: Box<dyn Environment> = match id {
        FROZEN_LAKE_ID => Box::new(FrozenLake::new(false)),
        FROZEN_LAKE_SLIPPERY_ID => Box::new(FrozenLake::new(true)),
        CARTPOLE_ID => Box::new(CartPole::new()),
        MOUNTAIN_CAR_ID => Box::new(MountainCar::new()),
        DRUG_DOSAGE_ID => Box::new(DrugDosage::new()),
        EMARKET_ID => Box::new(EMarket::new()),
        _ => return None,
    };
    Some(env)
}

pub fn builtin_descriptors() -> Vec<EnvDescriptor> {
    builtin_ids()
        .iter()
        .filter_map(|id| make_builtin(id).map(|e| e.descriptor().clone()))
        .collect()
}
