use serde::{Deserialize, Serialize};

use super::{
    EnvDescriptor, EnvError, Environment, Frame, Lifecycle, ObsKind, Observation, SplitMix64,
    StepResult,
};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE: f64 = 10.0;
const DT: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const MAX_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }
}

/// One explicit-Euler step of the cart-pole equations of motion.
/// Action 0 pushes with −10 N, action 1 with +10 N.
pub fn cartpole_dynamics(s: CartPoleState, action: usize) -> Result<CartPoleState, EnvError> {
    let force = match action {
        0 => -FORCE,
        1 => FORCE,
        _ => {
            return Err(EnvError::InvalidAction {
                action,
                action_count: 2,
            })
        }
    };
    // Separate sin and cos calls: a fused sincos can round differently from
    // sin, which breaks bit parity with other implementations.
    let sin = s.theta.sin();
    let cos = std::hint::black_box(s.theta).cos();
    let temp = (force + POLE_MASS_LENGTH * s.theta_dot * s.theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    Ok(CartPoleState {
        x: s.x + DT * s.x_dot,
        x_dot: s.x_dot + DT * x_acc,
        theta: s.theta + DT * s.theta_dot,
        theta_dot: s.theta_dot + DT * theta_acc,
    })
}

/// Whether the cart left the track or the pole fell past 12°.
pub fn cartpole_terminal(s: &CartPoleState) -> bool {
    s.x.abs() > X_LIMIT || s.theta.abs() > THETA_LIMIT
}

#[derive(Debug, Clone)]
pub struct CartPole {
    descriptor: EnvDescriptor,
    rng: SplitMix64,
    state: CartPoleState,
    lifecycle: Lifecycle,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            descriptor: EnvDescriptor {
                id: super::CARTPOLE_ID.into(),
                obs_kind: ObsKind::Continuous { dim: 4 },
                action_count: 2,
                max_episode_steps: MAX_STEPS,
                partially_observable: false,
                render_schema: "cartpole".into(),
            },
            rng: SplitMix64::new(0),
            state: CartPoleState::default(),
            lifecycle: Lifecycle::default(),
        }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    fn result(&self, reward: f64, done: bool) -> StepResult {
        StepResult {
            observation: Observation::Continuous(self.state.to_vec()),
            reward,
            done,
            frame: Frame::CartPole {
                x: self.state.x,
                theta: self.state.theta,
            },
        }
    }
}

impl Environment for CartPole {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<StepResult, EnvError> {
        if let Some(seed) = seed {
            self.rng = SplitMix64::new(seed);
        }
        // Draw order x, ẋ, θ, θ̇ is part of the plugin reproducibility contract.
        let mut draw = || self.rng.uniform(-0.05, 0.05);
        self.state = CartPoleState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
        };
        self.lifecycle.begin();
        Ok(self.result(0.0, false))
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let step = self.lifecycle.step(action, 2)?;
        self.state = cartpole_dynamics(self.state, action)?;
        let done = self
            .lifecycle
            .finish_if(cartpole_terminal(&self.state) || step >= MAX_STEPS);
        Ok(self.result(1.0, done))
    }

    fn render(&mut self) -> Result<Frame, EnvError> {
        Ok(self.result(0.0, false).frame)
    }
}
