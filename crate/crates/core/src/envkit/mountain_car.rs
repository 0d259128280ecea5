use super::{
    EnvDescriptor, EnvError, Environment, Frame, Lifecycle, ObsKind, Observation, SplitMix64,
    StepResult,
};

const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POSITION: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;
const MAX_STEPS: usize = 200;

/// `(position, velocity)` after applying `action` ∈ {0 push left, 1 coast,
/// 2 push right}.
pub fn mountain_car_dynamics(
    position: f64,
    velocity: f64,
    action: usize,
) -> Result<(f64, f64), EnvError> {
    if action > 2 {
        return Err(EnvError::InvalidAction {
            action,
            action_count: 3,
        });
    }
    let mut v = velocity + (action as f64 - 1.0) * FORCE - (3.0 * position).cos() * GRAVITY;
    v = v.clamp(-MAX_SPEED, MAX_SPEED);
    let p = (position + v).clamp(MIN_POSITION, MAX_POSITION);
    if p == MIN_POSITION && v < 0.0 {
        v = 0.0;
    }
    Ok((p, v))
}

#[derive(Debug, Clone)]
pub struct MountainCar {
    descriptor: EnvDescriptor,
    rng: SplitMix64,
    position: f64,
    velocity: f64,
    lifecycle: Lifecycle,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl MountainCar {
    pub fn new() -> Self {
        Self {
            descriptor: EnvDescriptor {
                id: super::MOUNTAIN_CAR_ID.into(),
                obs_kind: ObsKind::Continuous { dim: 2 },
                action_count: 3,
                max_episode_steps: MAX_STEPS,
                partially_observable: false,
                render_schema: "mountaincar".into(),
            },
            rng: SplitMix64::new(0),
            position: -0.5,
            velocity: 0.0,
            lifecycle: Lifecycle::default(),
        }
    }

    fn result(&self, reward: f64, done: bool) -> StepResult {
        StepResult {
            observation: Observation::Continuous(vec![self.position, self.velocity]),
            reward,
            done,
            frame: Frame::MountainCar {
                position: self.position,
            },
        }
    }
}

impl Environment for MountainCar {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<StepResult, EnvError> {
        if let Some(seed) = seed {
            self.rng = SplitMix64::new(seed);
        }
        self.position = self.rng.uniform(-0.6, -0.4);
        self.velocity = 0.0;
        self.lifecycle.begin();
        Ok(self.result(0.0, false))
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let step = self.lifecycle.step(action, 3)?;
        let (p, v) = mountain_car_dynamics(self.position, self.velocity, action)?;
        self.position = p;
        self.velocity = v;
        let done = self
            .lifecycle
            .finish_if(p >= GOAL_POSITION || step >= MAX_STEPS);
        Ok(self.result(-1.0, done))
    }

    fn render(&mut self) -> Result<Frame, EnvError> {
        Ok(self.result(0.0, false).frame)
    }
}
