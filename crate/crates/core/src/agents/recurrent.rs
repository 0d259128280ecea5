use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    anneal_epsilon, argmax, dense_param_names, epsilon_greedy, expect_section_count,
    exploration_rng, find_f64, init_rng, load_param_sections, obs_features, param_sections, Agent,
    AgentError, Hyperparameters, Mode, WeightSection,
};
use crate::envkit::{EnvDescriptor, ObsKind, Observation, Transition};
use crate::numerics::{
    Activation, Adam, DenseCache, DenseNet, Grads, GruCache, GruCell, NumericsError, Parameters,
    Tensor, GRAD_CLIP_NORM,
};
use crate::replay::ReplayBuffer;

/// `[observation ; oneHot(lastAction)]`, all-zero one-hot at episode start.
pub fn adrqn_encode(
    observation: &[f64],
    last_action: Option<usize>,
    action_count: usize,
) -> Result<Vec<f64>, AgentError> {
    let mut out = Vec::with_capacity(observation.len() + action_count);
    out.extend_from_slice(observation);
    out.resize(observation.len() + action_count, 0.0);
    if let Some(a) = last_action {
        if a >= action_count {
            return Err(AgentError::InvalidArgument(format!(
                "last action {a} out of range for {action_count} actions"
            )));
        }
        out[observation.len() + a] = 1.0;
    }
    Ok(out)
}

/// What the recurrent core sees at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    /// Observation features only.
    Plain,
    /// Observation features plus a one-hot of the previous action.
    ActionConditioned,
    /// Observation features plus an all-zero block of action width.
    ZeroPadded,
}

/// GRU core followed by a linear head over `[h' ; x]`.
///
/// With a zero-width hidden state the head sees only `x`, so the network
/// reduces to a linear feed-forward Q-function.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentQNet {
    gru: GruCell,
    head: DenseNet,
}

struct Unrolled {
    gru: Vec<GruCache>,
    head: Vec<DenseCache>,
}

impl RecurrentQNet {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        actions: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let gru = GruCell::new(input_dim, hidden_dim, rng);
        let head = DenseNet::new(
            hidden_dim + input_dim,
            &[],
            actions,
            Activation::Identity,
            Activation::Identity,
            rng,
        )?;
        Ok(Self { gru, head })
    }

    pub fn from_parts(gru: GruCell, head: DenseNet) -> Result<Self, NumericsError> {
        if head.input_dim() != gru.hidden_dim() + gru.input_dim() {
            return Err(NumericsError::Architecture(format!(
                "head expects {} inputs but the core provides {}",
                head.input_dim(),
                gru.hidden_dim() + gru.input_dim()
            )));
        }
        Ok(Self { gru, head })
    }

    pub fn gru(&self) -> &GruCell {
        &self.gru
    }

    pub fn head(&self) -> &DenseNet {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.gru.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn actions(&self) -> usize {
        self.head.output_dim()
    }

    /// One step for a single sample: `(q-values, next hidden)`.
    pub fn step(
        &self,
        input: &[f64],
        hidden: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
        let h = self.gru.step(input, hidden)?;
        let mut z = h.clone();
        z.extend_from_slice(input);
        Ok((self.head.forward(&z)?, h))
    }

    /// Unrolls `inputs[t]` (each `batch × input_dim`) from a zero state.
    fn unroll(&self, inputs: &[Vec<f64>], batch: usize) -> Result<Unrolled, NumericsError> {
        let (nh, ni) = (self.hidden_dim(), self.input_dim());
        let mut h = vec![0.0; batch * nh];
        let mut out = Unrolled {
            gru: Vec::with_capacity(inputs.len()),
            head: Vec::with_capacity(inputs.len()),
        };
        for x in inputs {
            let cache = self.gru.step_batch(x, &h, batch)?;
            h = cache.hidden().to_vec();
            let mut z = vec![0.0; batch * (nh + ni)];
            for b in 0..batch {
                z[b * (nh + ni)..b * (nh + ni) + nh].copy_from_slice(&h[b * nh..(b + 1) * nh]);
                z[b * (nh + ni) + nh..(b + 1) * (nh + ni)]
                    .copy_from_slice(&x[b * ni..(b + 1) * ni]);
            }
            out.head.push(self.head.forward_batch(&z, batch)?);
            out.gru.push(cache);
        }
        Ok(out)
    }

    /// Q-learning loss over a batch of equal-length sequences, unrolled from
    /// a zero hidden state, with gradients by backpropagation through time.
    ///
    /// `target` bootstraps from its own unroll over the same window extended
    /// by the final next-input.
    pub fn sequence_loss_and_grads(
        &self,
        target: &RecurrentQNet,
        sequences: &[Vec<&RecurrentItem>],
        gamma: f64,
    ) -> Result<(f64, Grads), NumericsError> {
        let batch = sequences.len();
        let len = sequences.first().map_or(0, Vec::len);
        let (ni, nh, na) = (self.input_dim(), self.hidden_dim(), self.actions());
        let mut inputs = vec![vec![0.0; batch * ni]; len + 1];
        for (b, seq) in sequences.iter().enumerate() {
            if seq.len() != len {
                return Err(NumericsError::Shape {
                    context: "sequence length",
                    expected: len,
                    found: seq.len(),
                });
            }
            for (t, item) in seq.iter().enumerate() {
                check_input(&item.input, ni)?;
                inputs[t][b * ni..(b + 1) * ni].copy_from_slice(&item.input);
            }
            let last = seq[len - 1];
            check_input(&last.next_input, ni)?;
            inputs[len][b * ni..(b + 1) * ni].copy_from_slice(&last.next_input);
        }

        let online = self.unroll(&inputs[..len], batch)?;
        let boot = target.unroll(&inputs, batch)?;

        let scale = 2.0 / (batch * len) as f64;
        let mut loss = 0.0;
        let mut upstream = vec![vec![0.0; batch * na]; len];
        for t in 0..len {
            let q = online.head[t].output();
            let q_next = boot.head[t + 1].output();
            for (b, seq) in sequences.iter().enumerate() {
                let item = seq[t];
                let bootstrap = if item.done {
                    0.0
                } else {
                    q_next[b * na..(b + 1) * na]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                let y = item.reward + gamma * bootstrap;
                let k = b * na + item.action;
                let err = q[k] - y;
                loss += err * err;
                upstream[t][k] = scale * err;
            }
        }

        let mut gru_grads = self.gru.zero_grads();
        let mut head_grads = self.head.zero_grads();
        let mut dh_next = vec![0.0; batch * nh];
        for t in (0..len).rev() {
            let dz = self
                .head
                .backward_batch(&online.head[t], &upstream[t], &mut head_grads)?;
            let mut dh = dh_next;
            for b in 0..batch {
                for j in 0..nh {
                    dh[b * nh + j] += dz[b * (nh + ni) + j];
                }
            }
            let (_, dh_prev) = self
                .gru
                .backward_step(&online.gru[t], &dh, &mut gru_grads)?;
            dh_next = dh_prev;
        }
        let mut tensors = gru_grads.tensors;
        tensors.extend(head_grads.tensors);
        Ok((loss / (batch * len) as f64, Grads { tensors }))
    }
}

fn check_input(input: &[f64], dim: usize) -> Result<(), NumericsError> {
    if input.len() == dim {
        Ok(())
    } else {
        Err(NumericsError::Shape {
            context: "recurrent input",
            expected: dim,
            found: input.len(),
        })
    }
}

impl Parameters for RecurrentQNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.gru.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.gru.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// A replayed step in encoded form: the core input at `t`, and the input it
/// will see at `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentItem {
    pub input: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_input: Vec<f64>,
    pub done: bool,
}

/// DRQN and ADRQN: ε-greedy over a [`RecurrentQNet`] trained on replayed
/// sequences.
#[derive(Debug, Clone)]
pub struct RecurrentQAgent {
    encoding: InputEncoding,
    kind: ObsKind,
    actions: usize,
    hp: Hyperparameters,
    online: RecurrentQNet,
    target: RecurrentQNet,
    optimizer: Adam,
    replay: ReplayBuffer<RecurrentItem>,
    rng: ChaCha8Rng,
    hidden: Vec<f64>,
    last_action: Option<usize>,
    last_input: Option<Vec<f64>>,
    global_step: u64,
    updates: u64,
    episode: u64,
    last_epsilon: f64,
}

impl RecurrentQAgent {
    pub fn new(
        encoding: InputEncoding,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
    ) -> Result<Self, AgentError> {
        let input_dim = Self::input_dim_for(encoding, env);
        let net = RecurrentQNet::new(
            input_dim,
            hp.recurrent_hidden,
            env.action_count,
            &mut init_rng(hp.seed),
        )?;
        Ok(Self::with_network(encoding, env, hp, net))
    }

    pub fn input_dim_for(encoding: InputEncoding, env: &EnvDescriptor) -> usize {
        let obs = env.obs_kind.feature_dim();
        match encoding {
            InputEncoding::Plain => obs,
            InputEncoding::ActionConditioned | InputEncoding::ZeroPadded => obs + env.action_count,
        }
    }

    pub fn with_network(
        encoding: InputEncoding,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
        net: RecurrentQNet,
    ) -> Self {
        Self {
            encoding,
            kind: env.obs_kind,
            actions: env.action_count,
            hp: hp.clone(),
            target: net.clone(),
            optimizer: Adam::new(&net),
            hidden: vec![0.0; net.hidden_dim()],
            online: net,
            replay: ReplayBuffer::new(hp.buffer_capacity),
            rng: exploration_rng(hp.seed),
            last_action: None,
            last_input: None,
            global_step: 0,
            updates: 0,
            episode: 0,
            last_epsilon: hp.epsilon_start,
        }
    }

    pub fn online(&self) -> &RecurrentQNet {
        &self.online
    }

    pub fn replay(&self) -> &ReplayBuffer<RecurrentItem> {
        &self.replay
    }

    pub fn encode(
        &self,
        observation: &Observation,
        last_action: Option<usize>,
    ) -> Result<Vec<f64>, AgentError> {
        let features = obs_features(&self.kind, observation)?;
        match self.encoding {
            InputEncoding::Plain => Ok(features),
            InputEncoding::ActionConditioned => adrqn_encode(&features, last_action, self.actions),
            InputEncoding::ZeroPadded => adrqn_encode(&features, None, self.actions),
        }
    }

    /// Optimizer step on explicit sequences; syncs the target when due.
    pub fn train_on_sequences(
        &mut self,
        sequences: &[Vec<&RecurrentItem>],
    ) -> Result<f64, AgentError> {
        let (loss, mut grads) =
            self.online
                .sequence_loss_and_grads(&self.target, sequences, self.hp.gamma)?;
        grads.clip_global_norm(GRAD_CLIP_NORM);
        self.optimizer
            .step(&mut self.online, &grads, self.hp.learning_rate)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.hp.target_sync_interval) {
            self.target.copy_params_from(&self.online);
        }
        Ok(loss)
    }

    fn names(&self) -> (Vec<String>, Vec<String>) {
        let gru = ["wz", "bz", "wr", "br", "wc", "bc"]
            .map(String::from)
            .to_vec();
        (gru, dense_param_names(self.online.head.layers().len()))
    }
}

impl Agent for RecurrentQAgent {
    fn id(&self) -> &str {
        match self.encoding {
            InputEncoding::Plain | InputEncoding::ZeroPadded => "drqn",
            InputEncoding::ActionConditioned => "adrqn",
        }
    }

    fn begin_episode(&mut self, _mode: Mode) -> Result<(), AgentError> {
        self.episode += 1;
        self.hidden.iter_mut().for_each(|h| *h = 0.0);
        self.last_action = None;
        self.last_input = None;
        Ok(())
    }

    fn choose_action(
        &mut self,
        observation: &Observation,
        mode: Mode,
    ) -> Result<usize, AgentError> {
        let x = self.encode(observation, self.last_action)?;
        let (q, h) = self.online.step(&x, &self.hidden)?;
        self.hidden = h;
        let action = if mode == Mode::Test {
            argmax(&q)
        } else {
            let eps = anneal_epsilon(
                self.hp.epsilon_start,
                self.hp.epsilon_end,
                self.hp.epsilon_decay_steps,
                self.global_step,
            );
            self.last_epsilon = eps;
            self.global_step += 1;
            epsilon_greedy(&q, eps, &mut self.rng)
        };
        self.last_action = Some(action);
        self.last_input = Some(x);
        Ok(action)
    }

    fn observe(&mut self, t: &Transition) -> Result<(), AgentError> {
        if t.action >= self.actions {
            return Err(AgentError::InvalidArgument(format!(
                "action {} out of range",
                t.action
            )));
        }
        let input = match self.last_input.take() {
            Some(x) => x,
            None => self.encode(&t.observation, None)?,
        };
        let next_input = self.encode(&t.next_observation, Some(t.action))?;
        let item = RecurrentItem {
            input,
            action: t.action,
            reward: t.reward,
            next_input,
            done: t.done,
        };
        self.replay
            .push(item, self.episode)
            .map_err(|e| AgentError::Contract(e.to_string()))
    }

    fn update(&mut self) -> Result<Option<f64>, AgentError> {
        if self.replay.len() < self.hp.batch_size
            || !self.global_step.is_multiple_of(self.hp.update_every)
        {
            return Ok(None);
        }
        let starts = match self.replay.sample_sequence_starts(
            self.hp.batch_size,
            self.hp.seq_len,
            &mut self.rng,
        ) {
            Ok(s) => s,
            Err(_) => return Ok(None),
        };
        let owned: Vec<Vec<RecurrentItem>> = starts
            .into_iter()
            .map(|s| {
                (s..s + self.hp.seq_len)
                    .map(|i| self.replay.get(i).expect("window inside buffer").clone())
                    .collect()
            })
            .collect();
        let sequences: Vec<Vec<&RecurrentItem>> =
            owned.iter().map(|s| s.iter().collect()).collect();
        self.train_on_sequences(&sequences).map(Some)
    }

    fn epsilon(&self) -> Option<f64> {
        Some(self.last_epsilon)
    }

    fn save(&mut self) -> Result<Vec<WeightSection>, AgentError> {
        let (gru_names, head_names) = self.names();
        let mut sections = param_sections("gru", &gru_names, &self.online.gru);
        sections.extend(param_sections("head", &head_names, &self.online.head));
        sections.push(WeightSection::f64(
            "progress",
            vec![2],
            vec![self.global_step as f64, self.updates as f64],
        ));
        Ok(sections)
    }

    fn load(&mut self, sections: &[WeightSection]) -> Result<(), AgentError> {
        let (gru_names, head_names) = self.names();
        expect_section_count(sections, gru_names.len() + head_names.len() + 1)?;
        let mut net = self.online.clone();
        load_param_sections("gru", &gru_names, &mut net.gru, sections)?;
        load_param_sections("head", &head_names, &mut net.head, sections)?;
        let progress = find_f64(sections, "progress", &[2])?;
        self.target = net.clone();
        self.optimizer = Adam::new(&net);
        self.online = net;
        self.global_step = progress[0] as u64;
        self.updates = progress[1] as u64;
        Ok(())
    }
}
