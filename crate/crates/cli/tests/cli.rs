use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use easyrl_core::modelstore::{load_model, parse_results};

fn easyrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_easyrl"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn plugin(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "plugins", name]
        .iter()
        .collect();
    p.to_string_lossy().into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.ezrl");
    let o = easyrl(&[
        "train",
        "--env",
        "FrozenLake-v0",
        "--agent",
        "qlearning",
        "--episodes",
        "1",
        "--seed",
        "7",
        "--out",
        path_str(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let artifact = load_model(&model).unwrap();
    assert_eq!(
        (
            artifact.metadata.agent_id.as_str(),
            artifact.metadata.episodes_completed
        ),
        ("qlearning", 1)
    );
    assert_eq!(artifact.metadata.hyperparameters.seed, 7);
}

#[test]
fn bad_hyperparameters_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ezrl");
    let base = [
        "train",
        "--env",
        "CartPole-v1",
        "--agent",
        "dqn",
        "--out",
        path_str(&out),
    ];

    let o = easyrl(&[&base[..], &["--hp", "gamma=1.5"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("gamma must be in [0,1]"),
        "{}",
        stderr(&o)
    );

    let o = easyrl(&[&base[..], &["--hp", "gama=0.9"]].concat());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("unknown hyperparameter `gama`") && err.contains("learningRate"),
        "{err}"
    );

    let o = easyrl(&[&base[..], &["--hp", "batchSize=many"]].concat());
    assert_eq!(o.status.code(), Some(2));

    let o = easyrl(&[&base[..], &["--seed", "1", "--hp", "seed=2"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("conflicts"));

    let o = easyrl(&[&base[..], &["--hp", "noequals"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn usage_and_lookup_errors_exit_two() {
    assert_eq!(
        easyrl(&["train", "--env", "CartPole-v1"]).status.code(),
        Some(2)
    );
    assert_eq!(easyrl(&["frobnicate"]).status.code(), Some(2));
    let o = easyrl(&[
        "train",
        "--env",
        "Nope-v0",
        "--agent",
        "dqn",
        "--out",
        "/tmp/never.ezrl",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown environment `Nope-v0`"));
    let o = easyrl(&[
        "train",
        "--env",
        "CartPole-v1",
        "--agent",
        "sarsa",
        "--out",
        "/tmp/never.ezrl",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = easyrl(&["test", "--model", "/nonexistent/model.ezrl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lists_catalogs() {
    let o = easyrl(&["list", "agents"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for id in [
        "qlearning",
        "sarsa",
        "dqn",
        "ddqn",
        "reinforce",
        "ppo",
        "drqn",
        "adrqn",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(id)),
            "{id} missing:\n{text}"
        );
    }
    let o = easyrl(&["list", "envs"]);
    let text = stdout(&o);
    assert!(
        text.contains("CartPole-v1")
            && text.contains("discrete(16)")
            && text.contains("EMarket-v0")
    );
}

#[test]
fn test_command_summarizes_and_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("q.ezrl");
    let o = easyrl(&[
        "train",
        "--env",
        "FrozenLake-v0",
        "--agent",
        "qlearning",
        "--episodes",
        "300",
        "--out",
        path_str(&model),
        "--watch",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o)
            .lines()
            .filter(|l| l.starts_with("episode"))
            .count(),
        300
    );

    let results = dir.path().join("test.csv");
    let o = easyrl(&[
        "test",
        "--model",
        path_str(&model),
        "--episodes",
        "10",
        "--results",
        path_str(&results),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("episodes 10  mean "), "{line}");
    let rows = parse_results(std::fs::File::open(&results).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.epsilon == Some(0.0)));

    let o = easyrl(&["test", "--model", path_str(&model), "--env", "CartPole-v1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plugin_check_reports_and_sets_exit_status() {
    let o = easyrl(&[
        "plugin",
        "check",
        "--kind",
        "env",
        "--",
        "python3",
        &plugin("cartpole_env.py"),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("conformant"));

    let o = easyrl(&[
        "plugin",
        "check",
        "--kind",
        "agent",
        "--",
        "python3",
        &plugin("random_agent.py"),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));

    let o = easyrl(&[
        "plugin",
        "check",
        "--kind",
        "env",
        "--",
        "python3",
        &plugin("cartpole_env.py"),
        "--fault",
        "bad_dim",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL") && stdout(&o).contains("NOT conformant"));
}

#[test]
fn parallel_runs_every_entry() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("runs.json");
    let runs: Vec<serde_json::Value> = (0..3)
        .map(|seed| {
            serde_json::json!({
                "envId": "FrozenLakeSlippery-v0",
                "agentId": "sarsa",
                "hyperparameters": { "episodes": 50, "seed": seed },
                "results": dir.path().join(format!("r{seed}.csv")),
            })
        })
        .collect();
    std::fs::write(&spec, serde_json::to_string(&runs).unwrap()).unwrap();
    let o = easyrl(&[
        "--workers",
        "3",
        "--frozen-clock",
        "parallel",
        "--spec",
        path_str(&spec),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o)
            .lines()
            .filter(|l| l.contains("finished 50 episodes"))
            .count(),
        3
    );
    for seed in 0..3 {
        let rows =
            parse_results(std::fs::File::open(dir.path().join(format!("r{seed}.csv"))).unwrap())
                .unwrap();
        assert_eq!(rows.len(), 50);
    }

    std::fs::write(
        &spec,
        r#"[{"envId": "FrozenLake-v0", "agentId": "qlearning", "hyperparameters": {"gama": 1}}]"#,
    )
    .unwrap();
    assert_eq!(
        easyrl(&["parallel", "--spec", path_str(&spec)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn serve_answers_on_the_announced_address() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_easyrl"))
        .args(["serve", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();
    let agents: serde_json::Value = reqwest::blocking::get(format!("{base}/api/v1/agents"))
        .unwrap()
        .json()
        .unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(agents.as_array().unwrap().len(), 8);
}
