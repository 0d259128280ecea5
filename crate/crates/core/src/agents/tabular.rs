use rand_chacha::ChaCha8Rng;

use super::{
    anneal_epsilon, argmax, epsilon_greedy, expect_section_count, exploration_rng, find_f64, Agent,
    AgentError, Hyperparameters, Mode, WeightSection,
};
use crate::envkit::{EnvDescriptor, ObsKind, Observation, Transition};

/// Dense `states × actions` action-value table, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.actions..(state + 1) * self.actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn greedy(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    fn max(&self, state: usize) -> f64 {
        self.row(state)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Moves `Q(s,a)` toward `target`; returns the TD error.
    fn td_step(&mut self, state: usize, action: usize, target: f64, alpha: f64) -> f64 {
        let old = self.get(state, action);
        let td = target - old;
        self.set(state, action, old + alpha * td);
        td
    }
}

/// `Q(s,a) ← Q(s,a) + α·(r + γ·(1−done)·max Q(s',·) − Q(s,a))`; returns the new value.
#[allow(clippy::too_many_arguments)]
pub fn q_learning_update(
    table: &mut QTable,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    done: bool,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let bootstrap = if done {
        0.0
    } else {
        gamma * table.max(next_state)
    };
    table.td_step(state, action, reward + bootstrap, alpha);
    table.get(state, action)
}

/// On-policy variant bootstrapping from the action actually taken next.
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update(
    table: &mut QTable,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    next_action: usize,
    done: bool,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let bootstrap = if done {
        0.0
    } else {
        gamma * table.get(next_state, next_action)
    };
    table.td_step(state, action, reward + bootstrap, alpha);
    table.get(state, action)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularRule {
    QLearning,
    Sarsa,
}

/// Q-learning or SARSA over a [`QTable`]. The reported loss is the mean
/// squared TD error of the updates since the last report.
#[derive(Debug, Clone)]
pub struct TabularAgent {
    rule: TabularRule,
    table: QTable,
    hp: Hyperparameters,
    rng: ChaCha8Rng,
    global_step: u64,
    last_epsilon: f64,
    /// SARSA transition waiting for the next action.
    pending: Option<(usize, usize, f64, usize)>,
    squared_td: Vec<f64>,
}

impl TabularAgent {
    pub fn new(
        rule: TabularRule,
        env: &EnvDescriptor,
        hp: &Hyperparameters,
    ) -> Result<Self, AgentError> {
        let ObsKind::Discrete { n } = env.obs_kind else {
            return Err(AgentError::Incompatible(format!(
                "tabular agents need a discrete observation space; `{}` is continuous",
                env.id
            )));
        };
        Ok(Self {
            rule,
            table: QTable::new(n, env.action_count),
            hp: hp.clone(),
            rng: exploration_rng(hp.seed),
            global_step: 0,
            last_epsilon: hp.epsilon_start,
            pending: None,
            squared_td: Vec::new(),
        })
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    fn state_of(&self, obs: &Observation) -> Result<usize, AgentError> {
        match obs.index() {
            Some(s) if s < self.table.states => Ok(s),
            _ => Err(AgentError::InvalidArgument(format!(
                "tabular agent expects a state index below {}, got {obs:?}",
                self.table.states
            ))),
        }
    }

    fn apply_sarsa(&mut self, next_action: usize) {
        if let Some((s, a, r, s2)) = self.pending.take() {
            let target = r + self.hp.gamma * self.table.get(s2, next_action);
            let td = self.table.td_step(s, a, target, self.hp.learning_rate);
            self.squared_td.push(td * td);
        }
    }
}

impl Agent for TabularAgent {
    fn id(&self) -> &str {
        match self.rule {
            TabularRule::QLearning => "qlearning",
            TabularRule::Sarsa => "sarsa",
        }
    }

    fn begin_episode(&mut self, _mode: Mode) -> Result<(), AgentError> {
        self.pending = None;
        Ok(())
    }

    fn choose_action(
        &mut self,
        observation: &Observation,
        mode: Mode,
    ) -> Result<usize, AgentError> {
        let s = self.state_of(observation)?;
        if mode == Mode::Test {
            return Ok(self.table.greedy(s));
        }
        let eps = anneal_epsilon(
            self.hp.epsilon_start,
            self.hp.epsilon_end,
            self.hp.epsilon_decay_steps,
            self.global_step,
        );
        self.last_epsilon = eps;
        self.global_step += 1;
        let action = epsilon_greedy(self.table.row(s), eps, &mut self.rng);
        if self.rule == TabularRule::Sarsa {
            self.apply_sarsa(action);
        }
        Ok(action)
    }

    fn observe(&mut self, t: &Transition) -> Result<(), AgentError> {
        let s = self.state_of(&t.observation)?;
        let s2 = self.state_of(&t.next_observation)?;
        if t.action >= self.table.actions {
            return Err(AgentError::InvalidArgument(format!(
                "action {} out of range",
                t.action
            )));
        }
        let alpha = self.hp.learning_rate;
        match self.rule {
            TabularRule::QLearning => {
                let bootstrap = if t.done {
                    0.0
                } else {
                    self.hp.gamma * self.table.max(s2)
                };
                let td = self.table.td_step(s, t.action, t.reward + bootstrap, alpha);
                self.squared_td.push(td * td);
            }
            TabularRule::Sarsa if t.done => {
                let td = self.table.td_step(s, t.action, t.reward, alpha);
                self.squared_td.push(td * td);
            }
            TabularRule::Sarsa => self.pending = Some((s, t.action, t.reward, s2)),
        }
        Ok(())
    }

    fn update(&mut self) -> Result<Option<f64>, AgentError> {
        if self.squared_td.is_empty() {
            return Ok(None);
        }
        let mean = self.squared_td.iter().sum::<f64>() / self.squared_td.len() as f64;
        self.squared_td.clear();
        Ok(Some(mean))
    }

    /// A SARSA transition left open by a step-limit cut bootstraps from the
    /// greedy action.
    fn end_episode(&mut self, _mode: Mode) -> Result<Option<f64>, AgentError> {
        if let Some((_, _, _, s2)) = self.pending {
            let greedy = self.table.greedy(s2);
            self.apply_sarsa(greedy);
            return self.update();
        }
        Ok(None)
    }

    fn epsilon(&self) -> Option<f64> {
        Some(self.last_epsilon)
    }

    fn save(&mut self) -> Result<Vec<WeightSection>, AgentError> {
        Ok(vec![
            WeightSection::f64(
                "q_table",
                vec![self.table.states, self.table.actions],
                self.table.values.clone(),
            ),
            WeightSection::f64("progress", vec![1], vec![self.global_step as f64]),
        ])
    }

    fn load(&mut self, sections: &[WeightSection]) -> Result<(), AgentError> {
        expect_section_count(sections, 2)?;
        let values = find_f64(
            sections,
            "q_table",
            &[self.table.states, self.table.actions],
        )?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::Weights("non-finite table entry".into()));
        }
        let progress = find_f64(sections, "progress", &[1])?[0];
        self.table.values.copy_from_slice(values);
        self.global_step = progress as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_with(s: usize, a: usize, v: f64, next: usize, row: [f64; 2]) -> QTable {
        let mut t = QTable::new(3, 2);
        t.set(s, a, v);
        t.set(next, 0, row[0]);
        t.set(next, 1, row[1]);
        t
    }

    #[test]
    fn q_learning_rule_examples() {
        let mut t = QTable::new(2, 2);
        assert_eq!(
            q_learning_update(&mut t, 0, 0, 1.0, 1, true, 0.5, 0.99),
            0.5
        );
        let mut t = table_with(0, 0, 1.0, 1, [0.0, 2.0]);
        let before = t.clone();
        q_learning_update(&mut t, 0, 0, 0.0, 1, false, 0.0, 0.9);
        assert_eq!(t, before);
        let v = q_learning_update(&mut t, 0, 0, 0.0, 1, false, 0.1, 0.9);
        assert!((v - 1.08).abs() < 1e-12);
    }

    #[test]
    fn sarsa_rule_examples() {
        let mut t = table_with(0, 0, 1.0, 1, [0.0, 2.0]);
        assert!((sarsa_update(&mut t, 0, 0, 0.0, 1, 1, false, 0.1, 0.9) - 1.08).abs() < 1e-12);
        let mut t = table_with(0, 0, 1.0, 1, [0.0, 2.0]);
        assert!((sarsa_update(&mut t, 0, 0, 0.0, 1, 0, false, 0.1, 0.9) - 0.9).abs() < 1e-12);
        let mut a = table_with(0, 0, 1.0, 1, [0.0, 2.0]);
        let mut b = a.clone();
        let x = sarsa_update(&mut a, 0, 0, 3.0, 1, 0, true, 0.1, 0.9);
        let y = sarsa_update(&mut b, 0, 0, 3.0, 1, 1, true, 0.1, 0.9);
        assert_eq!(x, y);
        assert!((x - 1.2).abs() < 1e-12);
    }

    #[test]
    fn agent_sarsa_defers_until_next_action() {
        let env = crate::envkit::make_builtin("FrozenLake-v0")
            .unwrap()
            .descriptor()
            .clone();
        let hp = Hyperparameters {
            epsilon_start: 0.0,
            epsilon_end: 0.0,
            learning_rate: 0.5,
            ..Hyperparameters::defaults_for("sarsa")
        };
        let mut agent = TabularAgent::new(TabularRule::Sarsa, &env, &hp).unwrap();
        agent.table.set(1, 0, 4.0);
        let t = Transition {
            observation: Observation::Discrete(0),
            action: 2,
            reward: 1.0,
            next_observation: Observation::Discrete(1),
            done: false,
        };
        agent.observe(&t).unwrap();
        assert_eq!(agent.table.get(0, 2), 0.0);
        assert_eq!(agent.update().unwrap(), None);
        let a = agent
            .choose_action(&Observation::Discrete(1), Mode::Train)
            .unwrap();
        assert_eq!(a, 0);
        let expected = 0.5 * (1.0 + 0.99 * 4.0);
        assert!((agent.table.get(0, 2) - expected).abs() < 1e-12);
        assert!(agent.update().unwrap().is_some());
    }

    #[test]
    fn test_mode_never_learns_or_explores() {
        let env = crate::envkit::make_builtin("FrozenLake-v0")
            .unwrap()
            .descriptor()
            .clone();
        let mut agent = TabularAgent::new(
            TabularRule::QLearning,
            &env,
            &Hyperparameters::defaults_for("qlearning"),
        )
        .unwrap();
        agent.table.set(0, 3, 1.0);
        for _ in 0..100 {
            assert_eq!(
                agent
                    .choose_action(&Observation::Discrete(0), Mode::Test)
                    .unwrap(),
                3
            );
        }
        assert_eq!(agent.global_step, 0);
    }

    #[test]
    fn save_load_round_trip() {
        let env = crate::envkit::make_builtin("FrozenLake-v0")
            .unwrap()
            .descriptor()
            .clone();
        let hp = Hyperparameters::defaults_for("qlearning");
        let mut a = TabularAgent::new(TabularRule::QLearning, &env, &hp).unwrap();
        a.table.set(5, 1, 0.25);
        let sections = a.save().unwrap();
        let SectionData::F64 { values, .. } = &sections[0].data else {
            panic!()
        };
        assert_eq!(values.len() * 8, 16 * 4 * 8);
        let mut b = TabularAgent::new(TabularRule::QLearning, &env, &hp).unwrap();
        b.load(&sections).unwrap();
        assert_eq!(a.table, b.table);
        assert!(b.load(&sections[..1]).is_err());
    }

    use super::super::SectionData;
}
