//! The eight built-in agents behind one [`Agent`] contract.

mod deep_q;
mod hyper;
mod policy;
mod recurrent;
mod tabular;

pub use deep_q::{ddqn_targets, dqn_targets, q_targets, DeepQAgent, TargetRule};
pub use hyper::{anneal_epsilon, HyperparameterError, Hyperparameters};
pub use policy::{
    policy_gradient_loss, ppo_policy_loss, reinforce_loss, reinforce_returns, value_loss, PpoAgent,
    PpoLoss, ReinforceAgent,
};
pub use recurrent::{adrqn_encode, InputEncoding, RecurrentItem, RecurrentQAgent, RecurrentQNet};
pub use tabular::{q_learning_update, sarsa_update, QTable, TabularAgent, TabularRule};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envkit::{EnvDescriptor, ObsKind, Observation, Transition};
use crate::numerics::{NumericsError, Parameters, Tensor};
use crate::plugin::PluginError;

/// Training explores and learns; testing acts greedily and never learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Test,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Test => "test",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{0}")]
    Incompatible(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("agent contract violation: {0}")]
    Contract(String),
    #[error("saved weights do not fit this agent: {0}")]
    Weights(String),
    #[error(transparent)]
    Plugin(#[from] PluginError),
}

/// One named block of agent state for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSection {
    pub name: String,
    pub data: SectionData,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    F64 { shape: Vec<usize>, values: Vec<f64> },
    Bytes(Vec<u8>),
}

impl WeightSection {
    pub fn f64(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            name: name.into(),
            data: SectionData::F64 { shape, values },
        }
    }

    pub fn bytes(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            data: SectionData::Bytes(bytes),
        }
    }
}

/// The agent contract driven by the session engine.
///
/// Per step the engine calls [`choose_action`](Agent::choose_action), steps
/// the environment and, in train mode only, [`observe`](Agent::observe) then
/// [`update`](Agent::update). Episode-level learners train in
/// [`end_episode`](Agent::end_episode).
pub trait Agent: Send {
    fn id(&self) -> &str;

    fn begin_episode(&mut self, _mode: Mode) -> Result<(), AgentError> {
        Ok(())
    }

    fn choose_action(&mut self, observation: &Observation, mode: Mode)
        -> Result<usize, AgentError>;

    fn observe(&mut self, transition: &Transition) -> Result<(), AgentError>;

    /// Runs a learning update if one is due; returns its loss.
    fn update(&mut self) -> Result<Option<f64>, AgentError>;

    fn end_episode(&mut self, _mode: Mode) -> Result<Option<f64>, AgentError> {
        Ok(None)
    }

    /// Exploration rate used for the most recent action, for ε-greedy agents.
    fn epsilon(&self) -> Option<f64> {
        None
    }

    fn save(&mut self) -> Result<Vec<WeightSection>, AgentError>;

    fn load(&mut self, sections: &[WeightSection]) -> Result<(), AgentError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentDescriptor {
    pub id: String,
    pub display_name: String,
    /// Observation kinds the agent accepts: `"discrete"` and/or `"continuous"`.
    pub supported_obs: Vec<String>,
    pub recurrent: bool,
    pub description: String,
    pub default_hyperparameters: Hyperparameters,
    pub tooltips: BTreeMap<String, String>,
}

impl AgentDescriptor {
    pub fn supports(&self, kind: &ObsKind) -> bool {
        let tag = if kind.is_discrete() {
            "discrete"
        } else {
            "continuous"
        };
        self.supported_obs.iter().any(|s| s == tag)
    }
}

pub const BUILTIN_AGENT_IDS: [&str; 8] = [
    "qlearning",
    "sarsa",
    "dqn",
    "ddqn",
    "reinforce",
    "ppo",
    "drqn",
    "adrqn",
];

pub fn builtin_descriptor(id: &str) -> Option<AgentDescriptor> {
    let (name, discrete_only, recurrent, description) = match id {
        "qlearning" => (
            "Q-Learning",
            true,
            false,
            "Tabular off-policy temporal-difference control.",
        ),
        "sarsa" => (
            "SARSA",
            true,
            false,
            "Tabular on-policy temporal-difference control.",
        ),
        "dqn" => (
            "Deep Q-Network",
            false,
            false,
            "Q-network with experience replay and a target network.",
        ),
        "ddqn" => (
            "Double DQN",
            false,
            false,
            "DQN whose targets select with the online net and evaluate with the target net.",
        ),
        "reinforce" => (
            "REINFORCE",
            false,
            false,
            "Monte-Carlo policy gradient with a mean-return baseline.",
        ),
        "ppo" => (
            "PPO",
            false,
            false,
            "Clipped-surrogate policy optimization with a separate value network.",
        ),
        "drqn" => (
            "Deep Recurrent Q-Network",
            false,
            true,
            "GRU Q-network trained on replayed sequences, for partially observable tasks.",
        ),
        "adrqn" => (
            "Action-specific DRQN",
            false,
            true,
            "DRQN that also feeds the previous action to the recurrent core.",
        ),
        _ => return None,
    };
    let supported_obs = if discrete_only {
        vec!["discrete".to_string()]
    } else {
        vec!["discrete".to_string(), "continuous".to_string()]
    };
    Some(AgentDescriptor {
        id: id.to_string(),
        display_name: name.to_string(),
        supported_obs,
        recurrent,
        description: description.to_string(),
        default_hyperparameters: Hyperparameters::defaults_for(id),
        tooltips: Hyperparameters::tooltips(),
    })
}

pub fn builtin_descriptors() -> Vec<AgentDescriptor> {
    BUILTIN_AGENT_IDS
        .iter()
        .filter_map(|id| builtin_descriptor(id))
        .collect()
}

pub fn check_compatible(agent: &AgentDescriptor, env: &EnvDescriptor) -> Result<(), AgentError> {
    if agent.supports(&env.obs_kind) {
        Ok(())
    } else {
        let kind = if env.obs_kind.is_discrete() {
            "discrete"
        } else {
            "continuous"
        };
        Err(AgentError::Incompatible(format!(
            "agent `{}` supports {} observations but environment `{}` has {kind} observations",
            agent.id,
            agent.supported_obs.join("/"),
            env.id
        )))
    }
}

/// Builds a built-in agent. Parameters are initialized from `seed + 1`;
/// exploration draws from `seed + 2`.
pub fn make_agent(
    id: &str,
    env: &EnvDescriptor,
    hp: &Hyperparameters,
) -> Result<Box<dyn Agent>, AgentError> {
    let descriptor =
        builtin_descriptor(id).ok_or_else(|| AgentError::UnknownAgent(id.to_string()))?;
    check_compatible(&descriptor, env)?;
    hp.validate()
        .map_err(|e| AgentError::InvalidArgument(e.to_string()))?;
    let agent: Box<dyn Agent> = match id {
        "qlearning" => Box::new(TabularAgent::new(TabularRule::QLearning, env, hp)?),
        "sarsa" => Box::new(TabularAgent::new(TabularRule::Sarsa, env, hp)?),
        "dqn" => Box::new(DeepQAgent::new(TargetRule::Max, env, hp)?),
        "ddqn" => Box::new(DeepQAgent::new(TargetRule::Double, env, hp)?),
        "reinforce" => Box::new(ReinforceAgent::new(env, hp)?),
        "ppo" => Box::new(PpoAgent::new(env, hp)?),
        "drqn" => Box::new(RecurrentQAgent::new(InputEncoding::Plain, env, hp)?),
        "adrqn" => Box::new(RecurrentQAgent::new(
            InputEncoding::ActionConditioned,
            env,
            hp,
        )?),
        _ => unreachable!("descriptor lookup covers every id"),
    };
    Ok(agent)
}

pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(1))
}

pub(crate) fn exploration_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(2))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniformly random action, otherwise the
/// greedy one. No random draw happens when `epsilon` is zero.
pub fn epsilon_greedy<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(!q_values.is_empty(), "no actions to choose from");
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// Draws an index from a probability vector.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn obs_features(kind: &ObsKind, obs: &Observation) -> Result<Vec<f64>, AgentError> {
    if !kind.conforms(obs) {
        return Err(AgentError::InvalidArgument(format!(
            "observation {obs:?} does not match the environment's observation space"
        )));
    }
    Ok(obs.features(kind))
}

pub(crate) fn param_sections<M: Parameters + ?Sized>(
    prefix: &str,
    names: &[String],
    model: &M,
) -> Vec<WeightSection> {
    names
        .iter()
        .zip(model.params())
        .map(|(n, t)| {
            WeightSection::f64(
                format!("{prefix}.{n}"),
                t.shape().to_vec(),
                t.data().to_vec(),
            )
        })
        .collect()
}

/// Copies matching sections into `model`, checking names and shapes.
pub(crate) fn load_param_sections<M: Parameters + ?Sized>(
    prefix: &str,
    names: &[String],
    model: &mut M,
    sections: &[WeightSection],
) -> Result<(), AgentError> {
    for (name, tensor) in names.iter().zip(model.params_mut()) {
        let full = format!("{prefix}.{name}");
        let values = find_f64(sections, &full, tensor.shape())?;
        copy_checked(tensor, values)?;
    }
    Ok(())
}

fn copy_checked(tensor: &mut Tensor, values: &[f64]) -> Result<(), AgentError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::Weights("non-finite weight".into()));
    }
    tensor.data_mut().copy_from_slice(values);
    Ok(())
}

pub(crate) fn find_f64<'a>(
    sections: &'a [WeightSection],
    name: &str,
    shape: &[usize],
) -> Result<&'a [f64], AgentError> {
    let section = sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| AgentError::Weights(format!("missing section `{name}`")))?;
    match &section.data {
        SectionData::F64 { shape: s, values } if s.as_slice() == shape => Ok(values),
        SectionData::F64 { shape: s, .. } => Err(AgentError::Weights(format!(
            "section `{name}` has shape {s:?}, expected {shape:?}"
        ))),
        SectionData::Bytes(_) => Err(AgentError::Weights(format!(
            "section `{name}` is not numeric"
        ))),
    }
}

pub(crate) fn expect_section_count(
    sections: &[WeightSection],
    expected: usize,
) -> Result<(), AgentError> {
    if sections.len() == expected {
        Ok(())
    } else {
        Err(AgentError::Weights(format!(
            "expected {expected} sections, found {}",
            sections.len()
        )))
    }
}

pub(crate) fn dense_param_names(layers: usize) -> Vec<String> {
    (0..layers)
        .flat_map(|l| [format!("l{l}.weight"), format!("l{l}.bias")])
        .collect()
}
