use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{
    argmax, dense_param_names, expect_section_count, exploration_rng, init_rng,
    load_param_sections, obs_features, param_sections, sample_categorical, Agent, AgentError,
    Hyperparameters, Mode, WeightSection,
};
use crate::envkit::{EnvDescriptor, ObsKind, Observation, Transition};
use crate::numerics::{
    Activation, Adam, DenseNet, Grads, NumericsError, Parameters, GRAD_CLIP_NORM,
};

const PROB_FLOOR: f64 = 1e-12;

/// Discounted returns `G_t = r_t + γ·G_{t+1}` by backward recursion.
pub fn reinforce_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

/// `−Σ_t w_t · log max(π(a_t|s_t), 1e-12)` for a softmax policy, with its
/// parameter gradient.
pub fn policy_gradient_loss(
    policy: &DenseNet,
    features: &[f64],
    actions: &[usize],
    weights: &[f64],
) -> Result<(f64, Grads), NumericsError> {
    let n = actions.len();
    let na = policy.output_dim();
    let cache = policy.forward_batch(features, n)?;
    let probs = cache.output();
    let mut upstream = vec![0.0; n * na];
    let mut loss = 0.0;
    for i in 0..n {
        let k = i * na + actions[i];
        let p = probs[k];
        loss -= weights[i] * p.max(PROB_FLOOR).ln();
        if p >= PROB_FLOOR {
            upstream[k] = -weights[i] / p;
        }
    }
    let mut grads = policy.zero_grads();
    policy.backward_batch(&cache, &upstream, &mut grads)?;
    Ok((loss, grads))
}

/// REINFORCE loss with the episode-mean return as baseline.
pub fn reinforce_loss(
    policy: &DenseNet,
    features: &[f64],
    actions: &[usize],
    returns: &[f64],
) -> Result<(f64, Grads), NumericsError> {
    let baseline = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    let weights: Vec<f64> = returns.iter().map(|g| g - baseline).collect();
    policy_gradient_loss(policy, features, actions, &weights)
}

/// Clipped-surrogate policy loss for one minibatch.
#[derive(Debug, Clone)]
pub struct PpoLoss {
    pub loss: f64,
    pub grads: Grads,
    /// `∂loss/∂π(a_t|s_t)` per sample; exactly zero where clipping binds.
    pub sample_grads: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// `−mean(min(ρ·Â, clip(ρ, 1−ε, 1+ε)·Â))` with `ρ = π/π_old`.
///
/// When both branches are equal the unclipped one carries the gradient.
pub fn ppo_policy_loss(
    policy: &DenseNet,
    features: &[f64],
    actions: &[usize],
    old_probs: &[f64],
    advantages: &[f64],
    clip: f64,
) -> Result<PpoLoss, AgentError> {
    if let Some(p) = old_probs.iter().find(|p| p.is_nan() || **p < PROB_FLOOR) {
        return Err(AgentError::Contract(format!(
            "stored behaviour probability {p} is below {PROB_FLOOR}"
        )));
    }
    let n = actions.len();
    let na = policy.output_dim();
    let cache = policy.forward_batch(features, n)?;
    let probs = cache.output();
    let mut upstream = vec![0.0; n * na];
    let mut sample_grads = vec![0.0; n];
    let mut ratios = Vec::with_capacity(n);
    let mut loss = 0.0;
    for i in 0..n {
        let k = i * na + actions[i];
        let ratio = probs[k] / old_probs[i];
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        if unclipped <= clipped {
            loss -= unclipped;
            sample_grads[i] = -adv / old_probs[i] / n as f64;
            upstream[k] = sample_grads[i];
        } else {
            loss -= clipped;
        }
        ratios.push(ratio);
    }
    let mut grads = policy.zero_grads();
    policy.backward_batch(&cache, &upstream, &mut grads)?;
    Ok(PpoLoss {
        loss: loss / n as f64,
        grads,
        sample_grads,
        ratios,
    })
}

/// Mean squared error of a scalar value head against returns.
pub fn value_loss(
    value: &DenseNet,
    features: &[f64],
    returns: &[f64],
) -> Result<(f64, Grads), NumericsError> {
    let n = returns.len();
    let cache = value.forward_batch(features, n)?;
    let v = cache.output();
    let mut upstream = vec![0.0; n];
    let mut loss = 0.0;
    for i in 0..n {
        let err = v[i] - returns[i];
        loss += err * err;
        upstream[i] = 2.0 * err / n as f64;
    }
    let mut grads = value.zero_grads();
    value.backward_batch(&cache, &upstream, &mut grads)?;
    Ok((loss / n as f64, grads))
}

fn policy_net(
    env: &EnvDescriptor,
    hp: &Hyperparameters,
    rng: &mut ChaCha8Rng,
) -> Result<DenseNet, NumericsError> {
    DenseNet::new(
        env.obs_kind.feature_dim(),
        &hp.hidden_layers,
        env.action_count,
        Activation::Relu,
        Activation::Softmax,
        rng,
    )
}

fn clipped_step(
    net: &mut DenseNet,
    opt: &mut Adam,
    mut grads: Grads,
    lr: f64,
) -> Result<(), NumericsError> {
    grads.clip_global_norm(GRAD_CLIP_NORM);
    opt.step(net, &grads, lr)
}

/// Episode buffer shared by both policy-gradient agents.
#[derive(Debug, Clone, Default)]
struct Trajectory {
    features: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    behaviour: Vec<f64>,
}

impl Trajectory {
    fn clear(&mut self) {
        self.features.clear();
        self.actions.clear();
        self.rewards.clear();
        self.behaviour.clear();
    }
}

/// Monte-Carlo policy gradient, one update per completed episode.
#[derive(Debug, Clone)]
pub struct ReinforceAgent {
    kind: ObsKind,
    hp: Hyperparameters,
    policy: DenseNet,
    optimizer: Adam,
    rng: ChaCha8Rng,
    episode: Trajectory,
}

impl ReinforceAgent {
    pub fn new(env: &EnvDescriptor, hp: &Hyperparameters) -> Result<Self, AgentError> {
        let policy = policy_net(env, hp, &mut init_rng(hp.seed))?;
        Ok(Self {
            kind: env.obs_kind,
            hp: hp.clone(),
            optimizer: Adam::new(&policy),
            policy,
            rng: exploration_rng(hp.seed),
            episode: Trajectory::default(),
        })
    }

    pub fn policy(&self) -> &DenseNet {
        &self.policy
    }
}

impl Agent for ReinforceAgent {
    fn id(&self) -> &str {
        "reinforce"
    }

    fn begin_episode(&mut self, _mode: Mode) -> Result<(), AgentError> {
        self.episode.clear();
        Ok(())
    }

    fn choose_action(
        &mut self,
        observation: &Observation,
        mode: Mode,
    ) -> Result<usize, AgentError> {
        let probs = self
            .policy
            .forward(&obs_features(&self.kind, observation)?)?;
        Ok(match mode {
            Mode::Test => argmax(&probs),
            Mode::Train => sample_categorical(&probs, &mut self.rng),
        })
    }

    fn observe(&mut self, t: &Transition) -> Result<(), AgentError> {
        self.episode
            .features
            .extend(obs_features(&self.kind, &t.observation)?);
        self.episode.actions.push(t.action);
        self.episode.rewards.push(t.reward);
        Ok(())
    }

    fn update(&mut self) -> Result<Option<f64>, AgentError> {
        Ok(None)
    }

    fn end_episode(&mut self, mode: Mode) -> Result<Option<f64>, AgentError> {
        if mode == Mode::Test || self.episode.actions.is_empty() {
            self.episode.clear();
            return Ok(None);
        }
        let returns = reinforce_returns(&self.episode.rewards, self.hp.gamma);
        let (loss, grads) = reinforce_loss(
            &self.policy,
            &self.episode.features,
            &self.episode.actions,
            &returns,
        )?;
        clipped_step(
            &mut self.policy,
            &mut self.optimizer,
            grads,
            self.hp.learning_rate,
        )?;
        self.episode.clear();
        Ok(Some(loss))
    }

    fn save(&mut self) -> Result<Vec<WeightSection>, AgentError> {
        Ok(param_sections(
            "policy",
            &dense_param_names(self.policy.layers().len()),
            &self.policy,
        ))
    }

    fn load(&mut self, sections: &[WeightSection]) -> Result<(), AgentError> {
        let names = dense_param_names(self.policy.layers().len());
        expect_section_count(sections, names.len())?;
        let mut policy = self.policy.clone();
        load_param_sections("policy", &names, &mut policy, sections)?;
        self.optimizer = Adam::new(&policy);
        self.policy = policy;
        Ok(())
    }
}

/// PPO with Monte-Carlo advantages and a separate value network.
///
/// Complete episodes accumulate into a rollout; once it holds at least
/// `rolloutLength` steps it is optimized for `ppoEpochs` passes over
/// shuffled minibatches of `batchSize`, then discarded.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    kind: ObsKind,
    hp: Hyperparameters,
    policy: DenseNet,
    value: DenseNet,
    policy_opt: Adam,
    value_opt: Adam,
    rng: ChaCha8Rng,
    episode: Trajectory,
    pending_prob: Option<f64>,
    rollout: Trajectory,
    rollout_returns: Vec<f64>,
}

impl PpoAgent {
    pub fn new(env: &EnvDescriptor, hp: &Hyperparameters) -> Result<Self, AgentError> {
        let mut init = init_rng(hp.seed);
        let policy = policy_net(env, hp, &mut init)?;
        let value = DenseNet::new(
            env.obs_kind.feature_dim(),
            &hp.hidden_layers,
            1,
            Activation::Relu,
            Activation::Identity,
            &mut init,
        )?;
        Ok(Self {
            kind: env.obs_kind,
            hp: hp.clone(),
            policy_opt: Adam::new(&policy),
            value_opt: Adam::new(&value),
            policy,
            value,
            rng: exploration_rng(hp.seed),
            episode: Trajectory::default(),
            pending_prob: None,
            rollout: Trajectory::default(),
            rollout_returns: Vec::new(),
        })
    }

    pub fn policy(&self) -> &DenseNet {
        &self.policy
    }

    fn train_rollout(&mut self) -> Result<f64, AgentError> {
        let n = self.rollout.actions.len();
        let dim = self.kind.feature_dim();
        let values = self.value.forward_batch(&self.rollout.features, n)?;
        let advantages: Vec<f64> = self
            .rollout_returns
            .iter()
            .zip(values.output())
            .map(|(g, v)| g - v)
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        let mut batches = 0usize;
        for _ in 0..self.hp.ppo_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.hp.batch_size) {
                let mut features = Vec::with_capacity(chunk.len() * dim);
                for &i in chunk {
                    features.extend_from_slice(&self.rollout.features[i * dim..(i + 1) * dim]);
                }
                let pick = |v: &[f64]| chunk.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let actions: Vec<usize> = chunk.iter().map(|&i| self.rollout.actions[i]).collect();
                let old = pick(&self.rollout.behaviour);
                let adv = pick(&advantages);
                let returns = pick(&self.rollout_returns);

                let p = ppo_policy_loss(
                    &self.policy,
                    &features,
                    &actions,
                    &old,
                    &adv,
                    self.hp.clip_epsilon,
                )?;
                clipped_step(
                    &mut self.policy,
                    &mut self.policy_opt,
                    p.grads,
                    self.hp.learning_rate,
                )?;
                let (v_loss, v_grads) = value_loss(&self.value, &features, &returns)?;
                clipped_step(
                    &mut self.value,
                    &mut self.value_opt,
                    v_grads,
                    self.hp.learning_rate,
                )?;
                total += p.loss + v_loss;
                batches += 1;
            }
        }
        self.rollout.clear();
        self.rollout_returns.clear();
        Ok(total / batches.max(1) as f64)
    }

    fn names(&self) -> (Vec<String>, Vec<String>) {
        (
            dense_param_names(self.policy.layers().len()),
            dense_param_names(self.value.layers().len()),
        )
    }
}

impl Agent for PpoAgent {
    fn id(&self) -> &str {
        "ppo"
    }

    fn begin_episode(&mut self, _mode: Mode) -> Result<(), AgentError> {
        self.episode.clear();
        self.pending_prob = None;
        Ok(())
    }

    fn choose_action(
        &mut self,
        observation: &Observation,
        mode: Mode,
    ) -> Result<usize, AgentError> {
        let probs = self
            .policy
            .forward(&obs_features(&self.kind, observation)?)?;
        let action = match mode {
            Mode::Test => argmax(&probs),
            Mode::Train => sample_categorical(&probs, &mut self.rng),
        };
        self.pending_prob = Some(probs[action]);
        Ok(action)
    }

    fn observe(&mut self, t: &Transition) -> Result<(), AgentError> {
        let prob = self.pending_prob.take().ok_or_else(|| {
            AgentError::Contract("observe without a preceding action choice".into())
        })?;
        self.episode
            .features
            .extend(obs_features(&self.kind, &t.observation)?);
        self.episode.actions.push(t.action);
        self.episode.rewards.push(t.reward);
        self.episode.behaviour.push(prob);
        Ok(())
    }

    fn update(&mut self) -> Result<Option<f64>, AgentError> {
        Ok(None)
    }

    fn end_episode(&mut self, mode: Mode) -> Result<Option<f64>, AgentError> {
        if mode == Mode::Test {
            self.episode.clear();
            return Ok(None);
        }
        let returns = reinforce_returns(&self.episode.rewards, self.hp.gamma);
        self.rollout_returns.extend(returns);
        self.rollout.features.append(&mut self.episode.features);
        self.rollout.actions.append(&mut self.episode.actions);
        self.rollout.behaviour.append(&mut self.episode.behaviour);
        self.episode.clear();
        if self.rollout.actions.len() >= self.hp.rollout_length.max(self.hp.batch_size) {
            return self.train_rollout().map(Some);
        }
        Ok(None)
    }

    fn save(&mut self) -> Result<Vec<WeightSection>, AgentError> {
        let (p, v) = self.names();
        let mut sections = param_sections("policy", &p, &self.policy);
        sections.extend(param_sections("value", &v, &self.value));
        Ok(sections)
    }

    fn load(&mut self, sections: &[WeightSection]) -> Result<(), AgentError> {
        let (p, v) = self.names();
        expect_section_count(sections, p.len() + v.len())?;
        let mut policy = self.policy.clone();
        let mut value = self.value.clone();
        load_param_sections("policy", &p, &mut policy, sections)?;
        load_param_sections("value", &v, &mut value, sections)?;
        self.policy_opt = Adam::new(&policy);
        self.value_opt = Adam::new(&value);
        self.policy = policy;
        self.value = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, DenseLayer, Tensor};

    fn tiny_policy(seed: u64) -> DenseNet {
        DenseNet::new(
            3,
            &[5],
            2,
            Activation::Tanh,
            Activation::Softmax,
            &mut init_rng(seed),
        )
        .unwrap()
    }

    #[test]
    fn returns_by_backward_recursion() {
        let g = reinforce_returns(&[1.0, 1.0, 1.0], 0.9);
        assert!((g[0] - 2.71).abs() < 1e-12 && (g[1] - 1.9).abs() < 1e-12 && g[2] == 1.0);
        assert_eq!(
            reinforce_returns(&[3.0, -1.0, 2.0], 0.0),
            vec![3.0, -1.0, 2.0]
        );
        assert_eq!(
            reinforce_returns(&[1.0; 5], 1.0),
            vec![5.0, 4.0, 3.0, 2.0, 1.0]
        );
    }

    #[test]
    fn uniform_returns_cancel_against_baseline() {
        let net = tiny_policy(1);
        let (_, grads) =
            reinforce_loss(&net, &[0.1, 0.2, 0.3, -0.1, 0.5, 0.9], &[0, 1], &[4.0, 4.0]).unwrap();
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn positive_weight_raises_taken_action_probability() {
        let mut net = tiny_policy(2);
        let x = [0.3, -0.2, 0.8];
        let before = net.forward(&x).unwrap()[1];
        let (_, grads) = policy_gradient_loss(&net, &x, &[1], &[1.0]).unwrap();
        let mut opt = Adam::new(&net);
        opt.step(&mut net, &grads, 1e-2).unwrap();
        assert!(net.forward(&x).unwrap()[1] > before);
    }

    #[test]
    fn reinforce_gradient_matches_finite_differences() {
        let net = tiny_policy(3);
        let features = [0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, -0.8, 0.9];
        let actions = [0, 1, 1];
        let returns = [1.5, 0.2, -0.7];
        let (_, grads) = reinforce_loss(&net, &features, &actions, &returns).unwrap();
        let report = grad_check(
            &net,
            &grads,
            |m| reinforce_loss(m, &features, &actions, &returns).unwrap().0,
            1e-4,
        );
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn clip_arithmetic() {
        // Single-logit policy whose probabilities are set through the bias.
        let policy = |p: f64| {
            let logit = (p / (1.0 - p)).ln();
            DenseNet::from_layers(vec![DenseLayer::new(
                Tensor::new(vec![2, 1], vec![0.0, 0.0]).unwrap(),
                Tensor::vector(vec![logit, 0.0]).unwrap(),
                Activation::Softmax,
            )
            .unwrap()])
            .unwrap()
        };
        let up = ppo_policy_loss(&policy(0.6), &[1.0], &[0], &[0.4], &[1.0], 0.2).unwrap();
        assert!((up.ratios[0] - 1.5).abs() < 1e-12);
        assert!((up.loss + 1.2).abs() < 1e-12);
        assert_eq!(up.sample_grads[0], 0.0);
        assert_eq!(up.grads.global_norm(), 0.0);
        let down = ppo_policy_loss(&policy(0.2), &[1.0], &[0], &[0.4], &[-1.0], 0.2).unwrap();
        assert!((down.ratios[0] - 0.5).abs() < 1e-12);
        assert!((down.loss - 0.8).abs() < 1e-12);
        assert_eq!(down.sample_grads[0], 0.0);
    }

    #[test]
    fn tiny_behaviour_probability_is_a_contract_error() {
        let net = tiny_policy(4);
        assert!(matches!(
            ppo_policy_loss(&net, &[0.0; 3], &[0], &[1e-13], &[1.0], 0.2),
            Err(AgentError::Contract(_))
        ));
    }

    #[test]
    fn ppo_trains_after_full_rollout_only() {
        let env = crate::envkit::make_builtin("CartPole-v1")
            .unwrap()
            .descriptor()
            .clone();
        let hp = Hyperparameters {
            rollout_length: 20,
            batch_size: 8,
            hidden_layers: vec![8],
            ..Hyperparameters::defaults_for("ppo")
        };
        let mut agent = PpoAgent::new(&env, &hp).unwrap();
        let mut trained = Vec::new();
        for _ in 0..3 {
            agent.begin_episode(Mode::Train).unwrap();
            for i in 0..8 {
                let obs = Observation::Continuous(vec![0.01 * i as f64; 4]);
                let a = agent.choose_action(&obs, Mode::Train).unwrap();
                agent
                    .observe(&Transition {
                        observation: obs.clone(),
                        action: a,
                        reward: 1.0,
                        next_observation: obs,
                        done: i == 7,
                    })
                    .unwrap();
            }
            trained.push(agent.end_episode(Mode::Train).unwrap().is_some());
        }
        assert_eq!(trained, vec![false, false, true]);
    }
}
