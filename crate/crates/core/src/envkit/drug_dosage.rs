use serde::{Deserialize, Serialize};

use super::{
    EnvDescriptor, EnvError, Environment, Frame, Lifecycle, ObsKind, Observation, StepResult,
};

/// Dose administered by each action index.
pub const DOSES: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

const HORIZON: u32 = 60;
const REMISSION_BURDEN: f64 = 0.05;
const TOXIC_LIMIT: f64 = 1.0;
const TERMINAL_REWARD: f64 = 10.0;

/// Tumour burden `N`, toxicity `T` and elapsed steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrugState {
    pub tumor: f64,
    pub toxicity: f64,
    pub t: u32,
}

impl DrugState {
    pub const INITIAL: DrugState = DrugState {
        tumor: 0.6,
        toxicity: 0.0,
        t: 0,
    };
}

/// Logistic tumour growth with dose-proportional kill and first-order
/// toxicity clearance. Returns `(next state, reward, done)`.
pub fn drug_dose_step(s: DrugState, action: usize) -> Result<(DrugState, f64, bool), EnvError> {
    let dose = *DOSES.get(action).ok_or(EnvError::InvalidAction {
        action,
        action_count: DOSES.len(),
    })?;
    let tumor = (s.tumor + 0.3 * s.tumor * (1.0 - s.tumor) - 0.8 * dose * s.tumor).clamp(0.0, 1.5);
    let toxicity = (s.toxicity + 0.5 * dose - 0.2 * s.toxicity).clamp(0.0, 1.2);
    let next = DrugState {
        tumor,
        toxicity,
        t: s.t + 1,
    };
    let mut reward = -(tumor + 0.5 * toxicity);
    let remission = tumor < REMISSION_BURDEN;
    let toxic = toxicity > TOXIC_LIMIT;
    if remission {
        reward += TERMINAL_REWARD;
    }
    if toxic {
        reward -= TERMINAL_REWARD;
    }
    Ok((next, reward, remission || toxic || next.t >= HORIZON))
}

#[derive(Debug, Clone)]
pub struct DrugDosage {
    descriptor: EnvDescriptor,
    state: DrugState,
    last_dose: f64,
    lifecycle: Lifecycle,
}

impl Default for DrugDosage {
    fn default() -> Self {
        Self::new()
    }
}

impl DrugDosage {
    pub fn new() -> Self {
        Self {
            descriptor: EnvDescriptor {
                id: super::DRUG_DOSAGE_ID.into(),
                obs_kind: ObsKind::Continuous { dim: 3 },
                action_count: DOSES.len(),
                max_episode_steps: HORIZON as usize,
                partially_observable: false,
                render_schema: "drug-dosage".into(),
            },
            state: DrugState::INITIAL,
            last_dose: 0.0,
            lifecycle: Lifecycle::default(),
        }
    }

    fn result(&self, reward: f64, done: bool) -> StepResult {
        StepResult {
            observation: Observation::Continuous(vec![
                self.state.tumor,
                self.state.toxicity,
                self.state.t as f64,
            ]),
            reward,
            done,
            frame: Frame::DrugDosage {
                tumor: self.state.tumor,
                toxicity: self.state.toxicity,
                dose: self.last_dose,
            },
        }
    }
}

impl Environment for DrugDosage {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    /// Deterministic: the seed has no effect.
    fn reset(&mut self, _seed: Option<u64>) -> Result<StepResult, EnvError> {
        self.state = DrugState::INITIAL;
        self.last_dose = 0.0;
        self.lifecycle.begin();
        Ok(self.result(0.0, false))
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.lifecycle.step(action, DOSES.len())?;
        let (next, reward, done) = drug_dose_step(self.state, action)?;
        self.state = next;
        self.last_dose = DOSES[action];
        self.lifecycle.finish_if(done);
        Ok(self.result(reward, done))
    }

    fn render(&mut self) -> Result<Frame, EnvError> {
        Ok(self.result(0.0, false).frame)
    }
}
