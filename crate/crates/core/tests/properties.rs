use easyrl_core::agents::{
    epsilon_greedy, make_agent, DeepQAgent, Hyperparameters, InputEncoding, Mode, RecurrentItem,
    RecurrentQAgent, TargetRule,
};
use easyrl_core::engine::MetricEvent;
use easyrl_core::envkit::{builtin_ids, make_builtin, EnvError, Observation, Transition};
use easyrl_core::modelstore::{parse_results, results_csv, ResultRow};
use easyrl_core::numerics::{Activation, Adam, DenseLayer, DenseNet, Parameters, Tensor};
use easyrl_core::replay::ReplayBuffer;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softmax_net(logits: &[f64]) -> DenseNet {
    let n = logits.len();
    DenseNet::from_layers(vec![DenseLayer::new(
        Tensor::zeros(vec![n, 1]),
        Tensor::vector(logits.to_vec()).unwrap(),
        Activation::Softmax,
    )
    .unwrap()])
    .unwrap()
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-1e3f64..1e3, 2..12)) {
        let p = softmax_net(&logits).forward(&[0.0]).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {}", sum);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op(seed in any::<u64>(), steps in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = DenseNet::new(3, &[4], 2, Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net);
        let zero = net.zero_grads();
        for _ in 0..steps {
            opt.step(&mut net, &zero, 0.1).unwrap();
        }
        prop_assert_eq!(net, before);
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(4, &[8, 8], 3, Activation::Relu, Activation::Softmax, &mut rng).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.clone().forward(&x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn environments_replay_bit_identically(
        env_index in 0usize..6,
        seed in any::<u64>(),
        actions in prop::collection::vec(0usize..4, 1..300),
    ) {
        let id = builtin_ids()[env_index];
        let run = || {
            let mut env = make_builtin(id).unwrap();
            let n = env.descriptor().action_count;
            let dim = env.descriptor().obs_kind;
            let mut trace = vec![env.reset(Some(seed)).unwrap()];
            for a in &actions {
                let r = env.step(a % n).unwrap();
                let done = r.done;
                assert!(r.reward.is_finite());
                assert!(dim.conforms(&r.observation));
                if let Observation::Continuous(v) = &r.observation {
                    assert!(v.iter().all(|x| x.is_finite()));
                }
                trace.push(r);
                if done {
                    assert!(matches!(env.step(0), Err(EnvError::EpisodeFinished)));
                    trace.push(env.reset(None).unwrap());
                }
            }
            trace
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn greedy_choice_is_shift_invariant(q in prop::collection::vec(-100.0f64..100.0, 1..10), shift in -1e3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        // Shifting can only merge near-ties through rounding; compare values.
        let a = epsilon_greedy(&q, 0.0, &mut rng);
        let b = epsilon_greedy(&shifted, 0.0, &mut rng);
        prop_assert!((q[a] - q[b]).abs() <= 1e-12 * shift.abs().max(1.0) * 4.0);
    }

    #[test]
    fn sampled_sequences_stay_inside_live_episodes(
        capacity in 3usize..30,
        lengths in prop::collection::vec(1usize..12, 1..15),
        seq_len in 1usize..6,
        seed in any::<u64>(),
    ) {
        // Items are (episode, insertion index, done).
        let mut buf = ReplayBuffer::new(capacity);
        let mut index = 0u64;
        for (ep, len) in lengths.iter().enumerate() {
            for t in 0..*len {
                buf.push((ep as u64, index, t + 1 == *len), ep as u64).unwrap();
                index += 1;
            }
        }
        prop_assert!(buf.len() <= capacity);
        let oldest_live = index - buf.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match buf.sample_sequences(32, seq_len, &mut rng) {
            Ok(seqs) => {
                for s in seqs {
                    prop_assert_eq!(s.len(), seq_len);
                    prop_assert!(s.iter().all(|item| item.0 == s[0].0));
                    prop_assert!(s.iter().all(|item| item.1 >= oldest_live));
                    prop_assert!(s.windows(2).all(|w| w[1].1 == w[0].1 + 1));
                    prop_assert!(s[..seq_len - 1].iter().all(|item| !item.2));
                }
            }
            Err(_) => {
                prop_assert!(buf.episode_lengths().all(|(_, n)| n < seq_len));
            }
        }
    }

    #[test]
    fn results_csv_round_trips(
        rows in prop::collection::vec(
            (any::<f64>().prop_filter("finite", |v| v.is_finite()),
             prop::option::of(any::<f64>().prop_filter("finite", |v| v.is_finite())),
             prop::option::of(0.0f64..=1.0),
             0u64..1_000_000,
             any::<u64>()),
            0..20),
    ) {
        let events: Vec<MetricEvent> = rows
            .iter()
            .enumerate()
            .map(|(i, (r, l, e, s, w))| MetricEvent {
                session_id: "p".into(),
                episode_index: i as u64,
                total_reward: *r,
                mean_loss: *l,
                epsilon: *e,
                steps_in_episode: *s,
                wall_clock_ms: *w,
            })
            .collect();
        let parsed = parse_results(results_csv(&events).as_bytes()).unwrap();
        let expected: Vec<ResultRow> = events.iter().map(ResultRow::from).collect();
        prop_assert_eq!(parsed, expected);
    }

    #[test]
    fn out_of_range_gamma_is_rejected(gamma in prop_oneof![-10.0f64..-1e-9, 1.0f64 + 1e-9..10.0]) {
        let hp = Hyperparameters { gamma, ..Hyperparameters::default() };
        let err = hp.validate().unwrap_err();
        prop_assert_eq!(err.to_string(), "gamma must be in [0,1]");
    }
}

fn cartpole_batch(seed: u64, n: usize) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = || Observation::Continuous((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    (0..n)
        .map(|i| Transition {
            observation: obs(),
            action: i % 2,
            reward: 1.0,
            next_observation: obs(),
            done: i % 7 == 0,
        })
        .collect()
}

#[test]
fn q_training_with_sync_every_step_is_reproducible() {
    let env = make_builtin("CartPole-v1").unwrap().descriptor().clone();
    let hp = Hyperparameters {
        target_sync_interval: 1,
        hidden_layers: vec![16],
        seed: 8,
        ..Hyperparameters::defaults_for("dqn")
    };
    let batch = cartpole_batch(1, 32);
    let refs: Vec<&Transition> = batch.iter().collect();
    let run = || {
        let mut agent = DeepQAgent::new(TargetRule::Max, &env, &hp).unwrap();
        let losses: Vec<u64> = (0..20)
            .map(|_| agent.train_on_batch(&refs).unwrap().to_bits())
            .collect();
        (losses, agent.online().clone(), agent.target().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.1, a.2, "target synced after every update");
}

#[test]
fn drqn_and_adrqn_differ_only_in_encoding() {
    let env = make_builtin("EMarket-v0").unwrap().descriptor().clone();
    let hp = Hyperparameters {
        recurrent_hidden: 6,
        seed: 3,
        ..Hyperparameters::defaults_for("adrqn")
    };
    let padded = RecurrentQAgent::new(InputEncoding::ZeroPadded, &env, &hp).unwrap();
    let mut net = padded.online().clone();
    let obs_dim = env.obs_kind.feature_dim();
    let width = obs_dim + env.action_count;
    let hidden = net.hidden_dim();
    // Silence the action block in the core (first `width` columns are the
    // input) and in the head (input follows the hidden state).
    for (i, t) in net.params_mut().into_iter().enumerate() {
        let shape = t.shape().to_vec();
        if shape.len() != 2 {
            continue;
        }
        let cols = shape[1];
        let block = if i < 6 {
            obs_dim..width
        } else {
            hidden + obs_dim..hidden + width
        };
        for row in t.data_mut().chunks_mut(cols) {
            row[block.clone()].iter_mut().for_each(|w| *w = 0.0);
        }
    }
    let zero_padded =
        RecurrentQAgent::with_network(InputEncoding::ZeroPadded, &env, &hp, net.clone());
    let conditioned =
        RecurrentQAgent::with_network(InputEncoding::ActionConditioned, &env, &hp, net.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let episode: Vec<(Observation, usize, f64, Observation)> = (0..10)
        .map(|t| {
            let o = Observation::Continuous(vec![rng.gen_range(0..2) as f64, t as f64 / 50.0]);
            let o2 =
                Observation::Continuous(vec![rng.gen_range(0..2) as f64, (t + 1) as f64 / 50.0]);
            (
                o,
                rng.gen_range(0..4),
                if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                o2,
            )
        })
        .collect();
    let items = |agent: &RecurrentQAgent| -> Vec<RecurrentItem> {
        let mut last = None;
        episode
            .iter()
            .map(|(o, a, r, o2)| {
                let item = RecurrentItem {
                    input: agent.encode(o, last).unwrap(),
                    action: *a,
                    reward: *r,
                    next_input: agent.encode(o2, Some(*a)).unwrap(),
                    done: false,
                };
                last = Some(*a);
                item
            })
            .collect()
    };
    let (ia, ib) = (items(&zero_padded), items(&conditioned));
    assert_ne!(ia, ib);
    let seq_a = vec![ia.iter().collect::<Vec<_>>()];
    let seq_b = vec![ib.iter().collect::<Vec<_>>()];
    let (la, ga) = net.sequence_loss_and_grads(&net, &seq_a, 0.9).unwrap();
    let (lb, _) = net.sequence_loss_and_grads(&net, &seq_b, 0.9).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert!(ga.is_finite());
}

#[test]
fn agents_choose_in_range_actions() {
    for id in builtin_ids() {
        let env = make_builtin(id).unwrap();
        let d = env.descriptor().clone();
        for agent_id in ["dqn", "reinforce", "ppo", "drqn"] {
            let hp = Hyperparameters {
                hidden_layers: vec![4],
                recurrent_hidden: 3,
                ..Hyperparameters::defaults_for(agent_id)
            };
            let mut agent = make_agent(agent_id, &d, &hp).unwrap();
            let mut env = make_builtin(id).unwrap();
            let obs = env.reset(Some(0)).unwrap().observation;
            agent.begin_episode(Mode::Train).unwrap();
            for _ in 0..20 {
                assert!(agent.choose_action(&obs, Mode::Train).unwrap() < d.action_count);
            }
        }
    }
}
