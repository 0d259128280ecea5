use super::{
    EnvDescriptor, EnvError, Environment, Frame, Lifecycle, ObsKind, Observation, SplitMix64,
    StepResult,
};

/// Seller qualities, shuffled across the four sellers at every reset.
pub const SELLER_QUALITIES: [f64; 4] = [0.9, 0.6, 0.4, 0.1];

const EPISODE_LENGTH: usize = 50;

/// Seller selection under hidden seller quality.
///
/// Each step buys from one seller; the transaction is good with the seller's
/// hidden probability (+1) and bad otherwise (−1). The observation is only
/// `[outcome bit, t / 50]`: the identity of the chosen seller is not echoed
/// back, so a policy has to remember its own choices.
#[derive(Debug, Clone)]
pub struct EMarket {
    descriptor: EnvDescriptor,
    rng: SplitMix64,
    qualities: [f64; 4],
    forced: Option<[f64; 4]>,
    t: usize,
    last: Option<(usize, bool)>,
    lifecycle: Lifecycle,
}

impl Default for EMarket {
    fn default() -> Self {
        Self::new()
    }
}

impl EMarket {
    pub fn new() -> Self {
        Self {
            descriptor: EnvDescriptor {
                id: super::EMARKET_ID.into(),
                obs_kind: ObsKind::Continuous { dim: 2 },
                action_count: SELLER_QUALITIES.len(),
                max_episode_steps: EPISODE_LENGTH,
                partially_observable: true,
                render_schema: "emarket".into(),
            },
            rng: SplitMix64::new(0),
            qualities: SELLER_QUALITIES,
            forced: None,
            t: 0,
            last: None,
            lifecycle: Lifecycle::default(),
        }
    }

    /// Test hook: pin the qualities instead of shuffling at reset.
    pub fn with_fixed_qualities(mut self, qualities: [f64; 4]) -> Self {
        self.forced = Some(qualities);
        self
    }

    pub fn qualities(&self) -> [f64; 4] {
        self.qualities
    }

    fn result(&self, reward: f64, done: bool) -> StepResult {
        let outcome = self.last.map_or(0.0, |(_, good)| f64::from(u8::from(good)));
        StepResult {
            observation: Observation::Continuous(vec![
                outcome,
                self.t as f64 / EPISODE_LENGTH as f64,
            ]),
            reward,
            done,
            frame: Frame::EMarket {
                seller: self.last.map(|(s, _)| s),
                outcome: self.last.map(|(_, g)| g),
            },
        }
    }
}

impl Environment for EMarket {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<StepResult, EnvError> {
        if let Some(seed) = seed {
            self.rng = SplitMix64::new(seed);
        }
        self.qualities = match self.forced {
            Some(q) => q,
            None => {
                let mut q = SELLER_QUALITIES;
                for i in (1..q.len()).rev() {
                    q.swap(i, self.rng.below(i + 1));
                }
                q
            }
        };
        self.t = 0;
        self.last = None;
        self.lifecycle.begin();
        Ok(self.result(0.0, false))
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.lifecycle.step(action, SELLER_QUALITIES.len())?;
        let good = self.rng.bernoulli(self.qualities[action]);
        self.t += 1;
        self.last = Some((action, good));
        let done = self.lifecycle.finish_if(self.t >= EPISODE_LENGTH);
        Ok(self.result(if good { 1.0 } else { -1.0 }, done))
    }

    fn render(&mut self) -> Result<Frame, EnvError> {
        Ok(self.result(0.0, false).frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_episode(env: &mut EMarket, mut policy: impl FnMut(usize) -> usize) -> Vec<f64> {
        env.reset(None).unwrap();
        let mut rewards = Vec::new();
        for t in 0..EPISODE_LENGTH {
            let r = env.step(policy(t)).unwrap();
            rewards.push(r.reward);
            if r.done {
                break;
            }
        }
        rewards
    }

    #[test]
    fn perfect_sellers_always_pay() {
        let mut env = EMarket::new().with_fixed_qualities([1.0; 4]);
        let rewards = run_episode(&mut env, |t| t % 4);
        assert_eq!(rewards.len(), EPISODE_LENGTH);
        assert!(rewards.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn worthless_sellers_always_cost() {
        let mut env = EMarket::new().with_fixed_qualities([0.0; 4]);
        assert!(run_episode(&mut env, |t| t % 4).iter().all(|&r| r == -1.0));
    }

    #[test]
    fn observation_hides_the_seller() {
        let mut env = EMarket::new().with_fixed_qualities([1.0; 4]);
        env.reset(Some(1)).unwrap();
        let a = env.step(0).unwrap().observation;
        env.reset(Some(1)).unwrap();
        let b = env.step(3).unwrap().observation;
        assert_eq!(a, b);
        assert_eq!(a, Observation::Continuous(vec![1.0, 1.0 / 50.0]));
    }

    #[test]
    fn reset_shuffles_a_permutation() {
        let mut env = EMarket::new();
        env.reset(Some(5)).unwrap();
        let mut q = env.qualities();
        q.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(q, SELLER_QUALITIES);
    }

    #[test]
    fn uniform_random_policy_breaks_even() {
        // 2·mean(p) − 1 = 0 for the shuffled qualities.
        let mut env = EMarket::new();
        env.reset(Some(77)).unwrap();
        let mut picker = SplitMix64::new(123);
        let mut total = 0.0;
        let mut steps = 0usize;
        while steps < 100_000 {
            for r in run_episode(&mut env, |_| picker.below(4)) {
                total += r;
                steps += 1;
            }
        }
        let mean = total / steps as f64;
        assert!(mean.abs() < 0.02, "mean reward {mean}");
    }
}
