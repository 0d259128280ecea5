use easyrl_core::agents::{ddqn_targets, dqn_targets};
use easyrl_core::envkit::{ObsKind, Observation, Transition};
use easyrl_core::numerics::{Activation, DenseNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Q-values of one sample through the single-input forward pass.
fn q_values(net: &DenseNet, x: &[f64]) -> Vec<f64> {
    net.forward(x).unwrap()
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

struct Case {
    kind: ObsKind,
    online: DenseNet,
    target: DenseNet,
    batch: Vec<Transition>,
    gamma: f64,
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discrete = rng.gen_bool(0.3);
    let kind = if discrete {
        ObsKind::Discrete {
            n: rng.gen_range(2..20),
        }
    } else {
        ObsKind::Continuous {
            dim: rng.gen_range(1..6),
        }
    };
    let actions = rng.gen_range(2..6);
    let hidden: Vec<usize> = (0..rng.gen_range(1..3))
        .map(|_| rng.gen_range(2..12))
        .collect();
    let dim = kind.feature_dim();
    let net = |rng: &mut ChaCha8Rng| {
        DenseNet::new(
            dim,
            &hidden,
            actions,
            Activation::Relu,
            Activation::Identity,
            rng,
        )
        .unwrap()
    };
    let online = net(&mut rng);
    let target = net(&mut rng);
    let obs = |rng: &mut ChaCha8Rng| match kind {
        ObsKind::Discrete { n } => Observation::Discrete(rng.gen_range(0..n)),
        ObsKind::Continuous { dim } => {
            Observation::Continuous((0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
        }
    };
    let batch = (0..rng.gen_range(1..48))
        .map(|_| Transition {
            observation: obs(&mut rng),
            action: rng.gen_range(0..actions),
            reward: rng.gen_range(-2.0..2.0),
            next_observation: obs(&mut rng),
            done: rng.gen_bool(0.2),
        })
        .collect();
    Case {
        kind,
        online,
        target,
        batch,
        gamma: rng.gen_range(0.0..=1.0),
    }
}

fn brute_force(case: &Case, double: bool) -> Vec<f64> {
    case.batch
        .iter()
        .map(|t| {
            if t.done {
                return t.reward;
            }
            let x = t.next_observation.features(&case.kind);
            let q_target = q_values(&case.target, &x);
            let bootstrap = if double {
                q_target[first_argmax(&q_values(&case.online, &x))]
            } else {
                q_target.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            t.reward + case.gamma * bootstrap
        })
        .collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn targets_match_brute_force_on_random_batches() {
    for seed in 0..1000 {
        let case = random_case(seed);
        let refs: Vec<&Transition> = case.batch.iter().collect();
        let dqn = dqn_targets(&refs, &case.online, &case.target, &case.kind, case.gamma).unwrap();
        let ddqn = ddqn_targets(&refs, &case.online, &case.target, &case.kind, case.gamma).unwrap();
        assert_eq!(
            bits(&dqn),
            bits(&brute_force(&case, false)),
            "dqn seed {seed}"
        );
        assert_eq!(
            bits(&ddqn),
            bits(&brute_force(&case, true)),
            "ddqn seed {seed}"
        );
    }
}
