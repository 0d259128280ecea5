use std::sync::Arc;

use easyrl_core::agents::{Hyperparameters, Mode, BUILTIN_AGENT_IDS};
use easyrl_core::engine::{Engine, EngineConfig, FrozenClock, SessionSpec, SessionStatus};
use easyrl_core::modelstore::{load_model, save_model, ModelArtifact, ModelError};
use proptest::prelude::*;

fn engine() -> Engine {
    Engine::new(EngineConfig {
        workers: 1,
        clock: Arc::new(FrozenClock),
        ..EngineConfig::default()
    })
}

fn env_for(agent: &str) -> &'static str {
    match agent {
        "qlearning" | "sarsa" => "FrozenLakeSlippery-v0",
        "drqn" | "adrqn" => "EMarket-v0",
        _ => "CartPole-v1",
    }
}

fn small(agent: &str, episodes: u64, seed: u64) -> Hyperparameters {
    Hyperparameters {
        episodes,
        seed,
        hidden_layers: vec![16],
        batch_size: 16,
        recurrent_hidden: 8,
        seq_len: 4,
        rollout_length: 64,
        ..Hyperparameters::defaults_for(agent)
    }
}

fn test_rewards(e: &Engine, artifact: Arc<ModelArtifact>, env: &str, agent: &str) -> Vec<f64> {
    let id = e
        .create_session_from_model(artifact, env, Mode::Test, small(agent, 8, 1234))
        .unwrap()
        .session_id;
    e.start(&id).unwrap();
    assert_eq!(e.wait(&id).unwrap().status, SessionStatus::Finished);
    e.metrics(&id)
        .unwrap()
        .iter()
        .map(|m| m.total_reward)
        .collect()
}

#[test]
fn every_agent_reproduces_seeded_test_after_reload() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine();
    for agent in BUILTIN_AGENT_IDS {
        let env = env_for(agent);
        let rec = e
            .run_to_completion(SessionSpec::new(
                env,
                agent,
                small(agent, 12, 3),
                Mode::Train,
            ))
            .unwrap();
        assert_eq!(rec.status, SessionStatus::Finished, "{agent}: {rec:?}");
        let artifact = e.model_artifact(&rec.session_id).unwrap();
        let before = test_rewards(&e, Arc::new(artifact.clone()), env, agent);

        let path = dir.path().join(format!("{agent}.ezrl"));
        save_model(&path, &artifact).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, artifact, "{agent}");
        let after = test_rewards(&e, Arc::new(loaded.clone()), env, agent);
        assert_eq!(before, after, "{agent}");

        // save -> load -> save is byte-identical.
        let mut agent_obj = loaded.instantiate(&loaded.metadata.env_descriptor).unwrap();
        let resaved = ModelArtifact::new(
            agent,
            &loaded.metadata.env_descriptor,
            &loaded.metadata.hyperparameters,
            loaded.metadata.episodes_completed,
            loaded.metadata.created_at.clone(),
            agent_obj.save().unwrap(),
        );
        assert_eq!(resaved.to_bytes(), artifact.to_bytes(), "{agent}");
    }
}

#[test]
fn saving_twice_differs_only_in_timestamp() {
    let e = Engine::default();
    let rec = e
        .run_to_completion(SessionSpec::new(
            "CartPole-v1",
            "ppo",
            small("ppo", 4, 0),
            Mode::Train,
        ))
        .unwrap();
    let mut a = e.model_artifact(&rec.session_id).unwrap();
    let mut b = e.model_artifact(&rec.session_id).unwrap();
    a.metadata.created_at.clear();
    b.metadata.created_at.clear();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn model_for_other_action_count_is_incompatible() {
    let e = engine();
    let rec = e
        .run_to_completion(SessionSpec::new(
            "FrozenLake-v0",
            "qlearning",
            small("qlearning", 2, 0),
            Mode::Train,
        ))
        .unwrap();
    let artifact = Arc::new(e.model_artifact(&rec.session_id).unwrap());
    // FrozenLake has 4 actions, CartPole 2.
    let err = e
        .create_session_from_model(
            artifact,
            "CartPole-v1",
            Mode::Test,
            small("qlearning", 2, 0),
        )
        .unwrap_err();
    assert_eq!(err.code(), "incompatible");
}

fn sample_bytes() -> Vec<u8> {
    let e = engine();
    let rec = e
        .run_to_completion(SessionSpec::new(
            "CartPole-v1",
            "dqn",
            small("dqn", 2, 0),
            Mode::Train,
        ))
        .unwrap();
    e.model_artifact(&rec.session_id).unwrap().to_bytes()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn corrupted_files_are_rejected(
        flips in prop::collection::vec((any::<prop::sample::Index>(), 1u8..=255), 1..4),
        cut in prop::option::of(any::<prop::sample::Index>()),
    ) {
        thread_local!(static BYTES: Vec<u8> = sample_bytes());
        let mut bytes = BYTES.with(Clone::clone);
        let original = bytes.clone();
        for (i, mask) in &flips {
            let at = i.index(bytes.len());
            bytes[at] ^= mask;
        }
        if let Some(c) = cut {
            bytes.truncate(c.index(bytes.len()));
        }
        prop_assume!(bytes != original);
        match ModelArtifact::from_bytes(&bytes) {
            Err(ModelError::Format(_) | ModelError::Corrupt(_)) => {}
            Ok(_) => prop_assert!(false, "corrupted file was accepted"),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
