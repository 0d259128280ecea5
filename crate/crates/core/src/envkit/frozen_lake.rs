use super::{
    EnvDescriptor, EnvError, Environment, Frame, Lifecycle, ObsKind, Observation, SplitMix64,
    StepResult,
};

pub const FROZEN_LAKE_MAP: [&str; 4] = ["SFFF", "FHFH", "FFFH", "HFFG"];

const SIDE: usize = 4;
const MAX_STEPS: usize = 100;

fn cell(state: usize) -> u8 {
    FROZEN_LAKE_MAP[state / SIDE].as_bytes()[state % SIDE]
}

/// Deterministic move on the 4×4 lake. Actions: 0 left, 1 down, 2 right,
/// 3 up; moving off the grid leaves the position unchanged.
///
/// Returns `(next state, reward, done)`.
pub fn frozen_lake_step(state: usize, action: usize) -> Result<(usize, f64, bool), EnvError> {
    if action >= 4 {
        return Err(EnvError::InvalidAction {
            action,
            action_count: 4,
        });
    }
    let (row, col) = (state / SIDE, state % SIDE);
    let (row, col) = match action {
        0 => (row, col.saturating_sub(1)),
        1 => ((row + 1).min(SIDE - 1), col),
        2 => (row, (col + 1).min(SIDE - 1)),
        _ => (row.saturating_sub(1), col),
    };
    let next = row * SIDE + col;
    Ok(match cell(next) {
        b'H' => (next, 0.0, true),
        b'G' => (next, 1.0, true),
        _ => (next, 0.0, false),
    })
}

/// FrozenLake, optionally slippery: the chosen direction is taken with
/// probability 1/3 and each perpendicular direction with 1/3.
#[derive(Debug, Clone)]
pub struct FrozenLake {
    descriptor: EnvDescriptor,
    slippery: bool,
    rng: SplitMix64,
    state: usize,
    lifecycle: Lifecycle,
}

impl FrozenLake {
    pub fn new(slippery: bool) -> Self {
        let id = if slippery {
            super::FROZEN_LAKE_SLIPPERY_ID
        } else {
            super::FROZEN_LAKE_ID
        };
        Self {
            descriptor: EnvDescriptor {
                id: id.to_string(),
                obs_kind: ObsKind::Discrete { n: SIDE * SIDE },
                action_count: 4,
                max_episode_steps: MAX_STEPS,
                partially_observable: false,
                render_schema: "frozenlake".into(),
            },
            slippery,
            rng: SplitMix64::new(0),
            state: 0,
            lifecycle: Lifecycle::default(),
        }
    }

    fn frame(&self) -> Frame {
        Frame::FrozenLake {
            agent: self.state,
            map: FROZEN_LAKE_MAP.iter().map(|r| r.to_string()).collect(),
        }
    }
}

impl Environment for FrozenLake {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<StepResult, EnvError> {
        if let Some(seed) = seed {
            self.rng = SplitMix64::new(seed);
        }
        self.state = 0;
        self.lifecycle.begin();
        Ok(StepResult {
            observation: Observation::Discrete(0),
            reward: 0.0,
            done: false,
            frame: self.frame(),
        })
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let step = self.lifecycle.step(action, 4)?;
        let direction = if self.slippery {
            // Perpendicular neighbours of `action` are action ± 1 (mod 4).
            (action + 3 + self.rng.below(3)) % 4
        } else {
            action
        };
        let (next, reward, terminal) = frozen_lake_step(self.state, direction)?;
        self.state = next;
        let done = self.lifecycle.finish_if(terminal || step >= MAX_STEPS);
        Ok(StepResult {
            observation: Observation::Discrete(next),
            reward,
            done,
            frame: self.frame(),
        })
    }

    fn render(&mut self) -> Result<Frame, EnvError> {
        Ok(self.frame())
    }
}
