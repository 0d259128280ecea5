use rand_chacha::ChaCha8Rng;

use super::{
    anneal_epsilon, argmax, dense_param_names, epsilon_greedy, expect_section_count,
    exploration_rng, find_f64, init_rng, load_param_sections, obs_features, param_sections, Agent,
    AgentError, Hyperparameters, Mode, WeightSection,
};
use crate::envkit::{EnvDescriptor, ObsKind, Observation, Transition};
use crate::numerics::{Activation, Adam, DenseNet, NumericsError, Parameters, GRAD_CLIP_NORM};
use crate::replay::ReplayBuffer;

/// How the bootstrap value of the next state is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    /// `max_a Q_target(s', a)`
    Max,
    /// `Q_target(s', argmax_a Q_online(s', a))`
    Double,
}

/// Bootstrapped regression targets for a batch.
///
/// `next_features` holds one feature row per sample; `online` is only
/// evaluated for [`TargetRule::Double`].
pub fn q_targets(
    rule: TargetRule,
    rewards: &[f64],
    dones: &[bool],
    next_features: &[f64],
    online: &DenseNet,
    target: &DenseNet,
    gamma: f64,
) -> Result<Vec<f64>, NumericsError> {
    let batch = rewards.len();
    let actions = target.output_dim();
    let next_target = target.forward_batch(next_features, batch)?;
    let next_online = match rule {
        TargetRule::Max => None,
        TargetRule::Double => Some(online.forward_batch(next_features, batch)?),
    };
    Ok((0..batch)
        .map(|i| {
            if dones[i] {
                return rewards[i];
            }
            let row = &next_target.output()[i * actions..(i + 1) * actions];
            let bootstrap = match &next_online {
                None => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Some(cache) => row[argmax(&cache.output()[i * actions..(i + 1) * actions])],
            };
            rewards[i] + gamma * bootstrap
        })
        .collect())
}

fn batch_columns(batch: &[&Transition], kind: &ObsKind) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let dim = kind.feature_dim();
    let mut next = vec![0.0; batch.len() * dim];
    for (row, t) in next.chunks_exact_mut(dim.max(1)).zip(batch) {
        t.next_observation.write_features(kind, row);
    }
    (
        batch.iter().map(|t| t.reward).collect(),
        batch.iter().map(|t| t.done).collect(),
        next,
    )
}

/// `yᵢ = rᵢ + γ·(1−doneᵢ)·max_a Q_target(s'ᵢ, a)`
pub fn dqn_targets(
    batch: &[&Transition],
    online: &DenseNet,
    target: &DenseNet,
    kind: &ObsKind,
    gamma: f64,
) -> Result<Vec<f64>, NumericsError> {
    let (rewards, dones, next) = batch_columns(batch, kind);
    q_targets(
        TargetRule::Max,
        &rewards,
        &dones,
        &next,
        online,
        target,
        gamma,
    )
}

/// `yᵢ = rᵢ + γ·(1−doneᵢ)·Q_target(s'ᵢ, argmax_a Q_online(s'ᵢ, a))`
pub fn ddqn_targets(
    batch: &[&Transition],
    online: &DenseNet,
    target: &DenseNet,
    kind: &ObsKind,
    gamma: f64,
) -> Result<Vec<f64>, NumericsError> {
    let (rewards, dones, next) = batch_columns(batch, kind);
    q_targets(
        TargetRule::Double,
        &rewards,
        &dones,
        &next,
        online,
        target,
        gamma,
    )
}

/// DQN / Double DQN with uniform replay and a periodically synced target net.
#[derive(Debug, Clone)]
pub struct DeepQAgent {
    rule: TargetRule,
    kind: ObsKind,
    actions: usize,
    hp: Hyperparameters,
    online: DenseNet,
    target: DenseNet,
    optimizer: Adam,
    replay: ReplayBuffer<Transition>,
    rng: ChaCha8Rng,
    global_step: u64,
    updates: u64,
    episode: u64,
    last_epsilon: f64,
}

impl DeepQAgent {
    pub fn new(
        rule: TargetRule,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
    ) -> Result<Self, AgentError> {
        let mut init = init_rng(hp.seed);
        let online = DenseNet::new(
            env.obs_kind.feature_dim(),
            &hp.hidden_layers,
            env.action_count,
            Activation::Relu,
            Activation::Identity,
            &mut init,
        )?;
        Ok(Self::with_network(rule, env, hp, online))
    }

    /// Uses `online` as the initial network (and target copy).
    pub fn with_network(
        rule: TargetRule,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
        online: DenseNet,
    ) -> Self {
        Self {
            rule,
            kind: env.obs_kind,
            actions: env.action_count,
            hp: hp.clone(),
            target: online.clone(),
            optimizer: Adam::new(&online),
            online,
            replay: ReplayBuffer::new(hp.buffer_capacity),
            rng: exploration_rng(hp.seed),
            global_step: 0,
            updates: 0,
            episode: 0,
            last_epsilon: hp.epsilon_start,
        }
    }

    pub fn online(&self) -> &DenseNet {
        &self.online
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Mean squared error of `Q_online(s,a)` against the targets, and its
    /// gradient through the taken-action outputs only.
    pub fn loss_and_grads(
        &self,
        batch: &[&Transition],
    ) -> Result<(f64, crate::numerics::Grads), AgentError> {
        let n = batch.len();
        let dim = self.kind.feature_dim();
        let mut states = vec![0.0; n * dim];
        for (row, t) in states.chunks_exact_mut(dim).zip(batch) {
            t.observation.write_features(&self.kind, row);
        }
        let (rewards, dones, next) = batch_columns(batch, &self.kind);
        let targets = q_targets(
            self.rule,
            &rewards,
            &dones,
            &next,
            &self.online,
            &self.target,
            self.hp.gamma,
        )?;
        let cache = self.online.forward_batch(&states, n)?;
        let q = cache.output();
        let mut upstream = vec![0.0; n * self.actions];
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let k = i * self.actions + t.action;
            let err = q[k] - targets[i];
            loss += err * err;
            upstream[k] = 2.0 * err / n as f64;
        }
        let mut grads = self.online.zero_grads();
        self.online.backward_batch(&cache, &upstream, &mut grads)?;
        Ok((loss / n as f64, grads))
    }

    /// One optimizer step on `batch`; syncs the target net when due.
    pub fn train_on_batch(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        let (loss, mut grads) = self.loss_and_grads(batch)?;
        grads.clip_global_norm(GRAD_CLIP_NORM);
        self.optimizer
            .step(&mut self.online, &grads, self.hp.learning_rate)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.hp.target_sync_interval) {
            self.target.copy_params_from(&self.online);
        }
        Ok(loss)
    }

    fn q_values(&self, observation: &Observation) -> Result<Vec<f64>, AgentError> {
        let x = obs_features(&self.kind, observation)?;
        Ok(self.online.forward(&x)?)
    }

    fn names(&self) -> Vec<String> {
        dense_param_names(self.online.layers().len())
    }
}

impl Agent for DeepQAgent {
    fn id(&self) -> &str {
        match self.rule {
            TargetRule::Max => "dqn",
            TargetRule::Double => "ddqn",
        }
    }

    fn begin_episode(&mut self, _mode: Mode) -> Result<(), AgentError> {
        self.episode += 1;
        Ok(())
    }

    fn choose_action(
        &mut self,
        observation: &Observation,
        mode: Mode,
    ) -> Result<usize, AgentError> {
        let q = self.q_values(observation)?;
        if mode == Mode::Test {
            return Ok(argmax(&q));
        }
        let eps = anneal_epsilon(
            self.hp.epsilon_start,
            self.hp.epsilon_end,
            self.hp.epsilon_decay_steps,
            self.global_step,
        );
        self.last_epsilon = eps;
        self.global_step += 1;
        Ok(epsilon_greedy(&q, eps, &mut self.rng))
    }

    fn observe(&mut self, t: &Transition) -> Result<(), AgentError> {
        if !self.kind.conforms(&t.observation)
            || !self.kind.conforms(&t.next_observation)
            || t.action >= self.actions
        {
            return Err(AgentError::InvalidArgument(
                "transition does not fit the environment".into(),
            ));
        }
        self.replay
            .push(t.clone(), self.episode)
            .map_err(|e| AgentError::Contract(e.to_string()))
    }

    fn update(&mut self) -> Result<Option<f64>, AgentError> {
        if self.replay.len() < self.hp.batch_size
            || !self.global_step.is_multiple_of(self.hp.update_every)
        {
            return Ok(None);
        }
        let indices = self
            .replay
            .sample_indices(self.hp.batch_size, &mut self.rng)
            .map_err(|e| AgentError::Contract(e.to_string()))?;
        let batch: Vec<Transition> = indices
            .into_iter()
            .map(|i| self.replay.get(i).expect("sampled index is stored").clone())
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        self.train_on_batch(&refs).map(Some)
    }

    fn epsilon(&self) -> Option<f64> {
        Some(self.last_epsilon)
    }

    fn save(&mut self) -> Result<Vec<WeightSection>, AgentError> {
        let mut sections = param_sections("online", &self.names(), &self.online);
        sections.push(WeightSection::f64(
            "progress",
            vec![2],
            vec![self.global_step as f64, self.updates as f64],
        ));
        Ok(sections)
    }

    fn load(&mut self, sections: &[WeightSection]) -> Result<(), AgentError> {
        let names = self.names();
        expect_section_count(sections, names.len() + 1)?;
        let mut online = self.online.clone();
        load_param_sections("online", &names, &mut online, sections)?;
        let progress = find_f64(sections, "progress", &[2])?;
        self.target = online.clone();
        self.optimizer = Adam::new(&online);
        self.online = online;
        self.global_step = progress[0] as u64;
        self.updates = progress[1] as u64;
        Ok(())
    }
}
