use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use easyrl_core::agents::{Hyperparameters, Mode};
use easyrl_core::engine::{Engine, EngineConfig, FrozenClock, SessionSpec};
use easyrl_core::modelstore::parse_results;
use easyrl_service::{router, AppState, API_SCHEMA};
use futures::StreamExt;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

struct Server {
    base: String,
    ws: String,
    engine: Engine,
    client: Client,
}

async fn start_with(static_dir: Option<PathBuf>) -> Server {
    let engine = Engine::new(EngineConfig {
        workers: 2,
        clock: Arc::new(FrozenClock),
        ..EngineConfig::default()
    });
    let app = router(AppState::new(engine.clone()), static_dir);
    let (listener, addr): (_, SocketAddr) = easyrl_service::bind("127.0.0.1:0").await.unwrap();
    tokio::spawn(easyrl_service::serve(listener, app, std::future::pending()));
    Server {
        base: format!("http://{addr}/api/v1"),
        ws: format!("ws://{addr}/api/v1"),
        engine,
        client: Client::new(),
    }
}

async fn start() -> Server {
    start_with(None).await
}

fn validate(def: &str, value: &Value) {
    let mut root: Value = serde_json::from_str(API_SCHEMA).unwrap();
    root["$ref"] = json!(format!("#/$defs/{def}"));
    let validator = jsonschema::validator_for(&root).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| e.to_string())
        .collect();
    assert!(
        errors.is_empty(),
        "{def} schema violations: {errors:?}\n{value:#}"
    );
}

fn plugin_path(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "plugins", name]
        .iter()
        .collect();
    p.to_string_lossy().into_owned()
}

impl Server {
    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    async fn bytes(&self, path: &str) -> (StatusCode, Vec<u8>) {
        let resp = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        (resp.status(), resp.bytes().await.unwrap().to_vec())
    }

    async fn expect_error(
        &self,
        status: StatusCode,
        code: &str,
        resp: (StatusCode, Value),
    ) -> Value {
        assert_eq!(resp.0, status, "{}", resp.1);
        validate("ApiError", &resp.1);
        assert_eq!(resp.1["code"], code);
        assert_eq!(resp.1["httpStatus"], status.as_u16());
        resp.1
    }

    async fn create(&self, body: Value) -> String {
        let (status, rec) = self.post("/sessions", body).await;
        assert_eq!(status, StatusCode::CREATED, "{rec}");
        validate("SessionRecord", &rec);
        assert_eq!(rec["status"], "created");
        rec["sessionId"].as_str().unwrap().to_string()
    }

    async fn control(&self, id: &str, command: &str) -> (StatusCode, Value) {
        self.post(
            &format!("/sessions/{id}/control"),
            json!({ "command": command }),
        )
        .await
    }

    async fn run(&self, body: Value) -> (String, Value) {
        let id = self.create(body).await;
        let (status, _) = self.control(&id, "start").await;
        assert_eq!(status, StatusCode::OK);
        (id.clone(), self.poll_terminal(&id).await)
    }

    async fn poll_terminal(&self, id: &str) -> Value {
        for _ in 0..6000 {
            let (_, rec) = self.get(&format!("/sessions/{id}")).await;
            if rec["status"] == "finished" || rec["status"] == "failed" {
                validate("SessionRecord", &rec);
                return rec;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("session {id} did not finish");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn catalogs_match_the_schema() {
    let s = start().await;
    let (status, agents) = s.get("/agents").await;
    assert_eq!(status, StatusCode::OK);
    validate("AgentList", &agents);
    let ids: Vec<&str> = agents
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["id"].as_str().unwrap())
        .collect();
    assert_eq!(
        ids,
        [
            "qlearning",
            "sarsa",
            "dqn",
            "ddqn",
            "reinforce",
            "ppo",
            "drqn",
            "adrqn"
        ]
    );
    assert!(agents[0]["tooltips"]["gamma"]
        .as_str()
        .is_some_and(|t| !t.is_empty()));

    let (status, envs) = s.get("/environments").await;
    assert_eq!(status, StatusCode::OK);
    validate("EnvironmentList", &envs);
    assert_eq!(envs.as_array().unwrap().len(), 6);

    let schema: Value = s
        .client
        .get(format!("{}/schema", s.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(schema["$defs"]["SessionRecord"].is_object());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_carry_status_and_code() {
    let s = start().await;
    let bad_env = s
        .post("/sessions", json!({ "envId": "Nope-v0", "agentId": "dqn" }))
        .await;
    s.expect_error(StatusCode::NOT_FOUND, "not_found", bad_env)
        .await;
    let bad_agent = s
        .post(
            "/sessions",
            json!({ "envId": "CartPole-v1", "agentId": "nope" }),
        )
        .await;
    s.expect_error(StatusCode::NOT_FOUND, "not_found", bad_agent)
        .await;
    let pairing = s
        .post(
            "/sessions",
            json!({ "envId": "CartPole-v1", "agentId": "qlearning" }),
        )
        .await;
    s.expect_error(StatusCode::UNPROCESSABLE_ENTITY, "incompatible", pairing)
        .await;
    let typo = s
        .post(
            "/sessions",
            json!({ "envId": "CartPole-v1", "agentId": "dqn", "hyperparameters": { "gama": 0.9 } }),
        )
        .await;
    let err = s
        .expect_error(StatusCode::BAD_REQUEST, "bad_request", typo)
        .await;
    assert!(err["details"]["validKeys"]
        .as_array()
        .unwrap()
        .contains(&json!("gamma")));
    let bounds = s
        .post("/sessions", json!({ "envId": "CartPole-v1", "agentId": "dqn", "hyperparameters": { "gamma": 1.5 } }))
        .await;
    let err = s
        .expect_error(StatusCode::BAD_REQUEST, "bad_request", bounds)
        .await;
    assert_eq!(err["message"], "gamma must be in [0,1]");
    let missing = s.post("/sessions", json!({ "agentId": "dqn" })).await;
    s.expect_error(StatusCode::BAD_REQUEST, "bad_request", missing)
        .await;

    let raw = s
        .client
        .post(format!("{}/sessions", s.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    let resp = (raw.status(), raw.json().await.unwrap());
    s.expect_error(StatusCode::BAD_REQUEST, "bad_request", resp)
        .await;

    s.expect_error(
        StatusCode::NOT_FOUND,
        "not_found",
        s.get("/sessions/s999").await,
    )
    .await;
    s.expect_error(
        StatusCode::NOT_FOUND,
        "not_found",
        s.get("/models/m42").await,
    )
    .await;
    s.expect_error(
        StatusCode::NOT_FOUND,
        "not_found",
        s.get("/no/such/route").await,
    )
    .await;
    let speed = s
        .post("/sessions/s0/control", json!({ "command": "fly" }))
        .await;
    s.expect_error(StatusCode::BAD_REQUEST, "bad_request", speed)
        .await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn happy_path_and_state_errors() {
    let s = start().await;
    let (id, rec) = s
        .run(json!({
            "envId": "FrozenLake-v0",
            "agentId": "qlearning",
            "hyperparameters": { "episodes": 25, "seed": 3 },
            "mode": "train"
        }))
        .await;
    assert_eq!(rec["status"], "finished");
    assert_eq!(rec["episodesCompleted"], 25);
    assert_eq!(
        rec["hyperparameters"]["learningRate"], 0.1,
        "agent defaults fill omitted keys"
    );

    let resp = s
        .client
        .get(format!("{}/sessions/{id}/results", s.base))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.headers()["content-type"], "text/csv; charset=utf-8");
    let csv = resp.text().await.unwrap();
    assert_eq!(parse_results(csv.as_bytes()).unwrap().len(), 25);

    s.expect_error(
        StatusCode::CONFLICT,
        "state_error",
        s.control(&id, "resume").await,
    )
    .await;
    s.expect_error(
        StatusCode::CONFLICT,
        "state_error",
        s.control(&id, "start").await,
    )
    .await;
    s.expect_error(
        StatusCode::CONFLICT,
        "state_error",
        s.get(&format!("/sessions/{id}/summary")).await,
    )
    .await;

    let (status, list) = s.get("/sessions").await;
    assert_eq!(status, StatusCode::OK);
    validate("SessionList", &list);
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_resume_and_stop_over_http() {
    let s = start().await;
    let id = s
        .create(json!({
            "envId": "CartPole-v1",
            "agentId": "dqn",
            "hyperparameters": { "episodes": 100000, "hiddenLayers": [8] }
        }))
        .await;
    assert_eq!(s.control(&id, "start").await.1["status"], "running");
    assert_eq!(s.control(&id, "pause").await.0, StatusCode::OK);
    let mut paused = false;
    for _ in 0..2000 {
        if s.get(&format!("/sessions/{id}")).await.1["status"] == "paused" {
            paused = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert!(paused);
    let (status, speed) = s
        .post(
            &format!("/sessions/{id}/control"),
            json!({ "command": "setDisplaySpeed", "fps": 12 }),
        )
        .await;
    assert_eq!(
        (status, speed["displaySpeed"].as_u64()),
        (StatusCode::OK, Some(12))
    );
    let too_fast = s
        .post(
            &format!("/sessions/{id}/control"),
            json!({ "command": "setDisplaySpeed", "fps": 61 }),
        )
        .await;
    s.expect_error(StatusCode::BAD_REQUEST, "bad_request", too_fast)
        .await;
    assert_eq!(s.control(&id, "resume").await.1["status"], "running");
    s.control(&id, "stop").await;
    let rec = s.poll_terminal(&id).await;
    assert_eq!(rec["status"], "finished");
    assert!(rec["finishedAt"].is_string());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn models_upload_download_and_evaluate() {
    let s = start().await;
    let (id, _) = s
        .run(json!({
            "envId": "FrozenLakeSlippery-v0",
            "agentId": "qlearning",
            "hyperparameters": { "episodes": 200, "seed": 1 }
        }))
        .await;
    let (status, bytes) = s.bytes(&format!("/sessions/{id}/model")).await;
    assert_eq!(status, StatusCode::OK);

    let form = reqwest::multipart::Form::new().part(
        "model",
        reqwest::multipart::Part::bytes(bytes.clone()).file_name("q.ezrl"),
    );
    let resp = s
        .client
        .post(format!("{}/models", s.base))
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let info: Value = resp.json().await.unwrap();
    validate("ModelInfo", &info);
    let model_id = info["modelId"].as_str().unwrap().to_string();
    assert_eq!(s.bytes(&format!("/models/{model_id}")).await.1, bytes);

    let (status, stored) = s.post(&format!("/sessions/{id}/model"), json!(null)).await;
    assert_eq!(status, StatusCode::CREATED);
    validate("ModelInfo", &stored);
    let (_, list) = s.get("/models").await;
    validate("ModelList", &list);
    assert_eq!(list.as_array().unwrap().len(), 2);

    let (test_id, rec) = s
        .run(json!({ "modelId": model_id, "hyperparameters": { "episodes": 30, "seed": 9 } }))
        .await;
    assert_eq!(
        (rec["mode"].as_str(), rec["agentId"].as_str()),
        (Some("test"), Some("qlearning"))
    );
    assert_eq!(rec["envId"], "FrozenLakeSlippery-v0");
    let (status, summary) = s.get(&format!("/sessions/{test_id}/summary")).await;
    assert_eq!(status, StatusCode::OK);
    validate("Summary", &summary);
    assert_eq!(summary["episodes"], 30);

    let wrong = s
        .post(
            "/sessions",
            json!({ "modelId": model_id, "envId": "CartPole-v1" }),
        )
        .await;
    s.expect_error(StatusCode::UNPROCESSABLE_ENTITY, "incompatible", wrong)
        .await;

    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 0xff;
    let form =
        reqwest::multipart::Form::new().part("model", reqwest::multipart::Part::bytes(corrupt));
    let resp = s
        .client
        .post(format!("{}/models", s.base))
        .multipart(form)
        .send()
        .await
        .unwrap();
    let resp = (resp.status(), resp.json().await.unwrap());
    s.expect_error(StatusCode::BAD_REQUEST, "bad_request", resp)
        .await;
}

async fn collect_stream(url: String, delay: Duration) -> Vec<Value> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut out = Vec::new();
    while let Some(msg) = ws.next().await {
        match msg.unwrap() {
            Message::Text(t) => {
                let v: Value = serde_json::from_str(&t).unwrap();
                validate("StreamMessage", &v);
                out.push(v);
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    out
}

fn of_kind<'a>(events: &'a [Value], kind: &str) -> Vec<&'a Value> {
    events.iter().filter(|e| e["event"] == kind).collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn subscribers_share_every_metric_and_status() {
    let s = start().await;
    let id = s
        .create(json!({
            "envId": "FrozenLake-v0",
            "agentId": "sarsa",
            "hyperparameters": { "episodes": 40, "seed": 2 }
        }))
        .await;
    let a = tokio::spawn(collect_stream(
        format!("{}/sessions/{id}/stream", s.ws),
        Duration::ZERO,
    ));
    let b = tokio::spawn(collect_stream(
        format!("{}/sessions/{id}/stream", s.ws),
        Duration::ZERO,
    ));
    tokio::time::sleep(Duration::from_millis(200)).await;
    s.control(&id, "start").await;
    let (a, b) = (a.await.unwrap(), b.await.unwrap());
    let metrics_a = of_kind(&a, "metric");
    assert_eq!(metrics_a.len(), 40);
    assert_eq!(metrics_a, of_kind(&b, "metric"));
    assert_eq!(a.last().unwrap()["event"], "status");
    assert_eq!(a.last().unwrap()["status"], "finished");
    assert_eq!(of_kind(&a, "status"), of_kind(&b, "status"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn slow_subscriber_loses_only_frames() {
    let s = start().await;
    let id = s
        .create(json!({
            "envId": "CartPole-v1",
            "agentId": "reinforce",
            "hyperparameters": { "episodes": 30, "hiddenLayers": [8], "seed": 4 },
            "displaySpeed": 60
        }))
        .await;
    let fast = tokio::spawn(collect_stream(
        format!("{}/sessions/{id}/stream", s.ws),
        Duration::ZERO,
    ));
    let slow = tokio::spawn(collect_stream(
        format!("{}/sessions/{id}/stream", s.ws),
        Duration::from_millis(30),
    ));
    tokio::time::sleep(Duration::from_millis(200)).await;
    s.control(&id, "start").await;
    let (fast, slow) = (fast.await.unwrap(), slow.await.unwrap());
    assert_eq!(of_kind(&slow, "metric"), of_kind(&fast, "metric"));
    assert_eq!(of_kind(&fast, "metric").len(), 30);
    assert!(!of_kind(&fast, "frame").is_empty());
    assert!(of_kind(&slow, "frame").len() <= of_kind(&fast, "frame").len());
    assert_eq!(slow.last().unwrap()["status"], "finished");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_stream_gets_an_error_frame() {
    let s = start().await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("{}/sessions/s77/stream", s.ws))
        .await
        .unwrap();
    let first = ws.next().await.unwrap().unwrap();
    let v: Value = serde_json::from_str(first.to_text().unwrap()).unwrap();
    validate("StreamMessage", &v);
    assert_eq!(
        (v["event"].as_str(), v["code"].as_str()),
        (Some("error"), Some("not_found"))
    );
    match ws.next().await.unwrap().unwrap() {
        Message::Close(Some(frame)) => assert_eq!(u16::from(frame.code), 4404),
        other => panic!("expected close, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn plugins_register_over_http() {
    let s = start().await;
    let (status, reg) = s
        .post(
            "/plugins",
            json!({ "kind": "environment", "command": ["python3", plugin_path("echo_env.py")] }),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{reg}");
    validate("RegisteredPlugin", &reg);
    assert_eq!(reg["id"], "Echo-v0");
    let (_, envs) = s.get("/environments").await;
    assert!(envs
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["id"] == "Echo-v0"));

    let (status, reg) = s
        .post(
            "/plugins",
            json!({ "kind": "agent", "command": format!("python3 {}", plugin_path("random_agent.py")) }),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{reg}");
    let (_, rec) = s
        .run(json!({ "envId": "Echo-v0", "agentId": "random-plugin", "hyperparameters": { "episodes": 3 } }))
        .await;
    assert_eq!(rec["status"], "finished", "{rec}");

    let broken = s
        .post(
            "/plugins",
            json!({ "kind": "environment", "command": ["python3", plugin_path("echo_env.py"), "--fault", "version"] }),
        )
        .await;
    s.expect_error(StatusCode::BAD_GATEWAY, "plugin_error", broken)
        .await;
    let empty = s
        .post("/plugins", json!({ "kind": "agent", "command": [] }))
        .await;
    s.expect_error(StatusCode::BAD_REQUEST, "bad_request", empty)
        .await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rest_runs_match_direct_engine_runs() {
    let s = start().await;
    let body = json!({
        "envId": "CartPole-v1",
        "agentId": "dqn",
        "hyperparameters": { "episodes": 12, "seed": 5, "hiddenLayers": [16], "batchSize": 16 }
    });
    let (id, _) = s.run(body).await;
    let csv = s
        .client
        .get(format!("{}/sessions/{id}/results", s.base))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();

    let hp = Hyperparameters {
        episodes: 12,
        seed: 5,
        hidden_layers: vec![16],
        batch_size: 16,
        ..Hyperparameters::defaults_for("dqn")
    };
    let engine = s.engine.clone();
    let direct = tokio::task::spawn_blocking(move || {
        let rec = engine
            .run_to_completion(SessionSpec::new("CartPole-v1", "dqn", hp, Mode::Train))
            .unwrap();
        engine.results_csv(&rec.session_id).unwrap()
    })
    .await
    .unwrap();
    assert_eq!(csv, direct);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serves_dashboard_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>dashboard</h1>").unwrap();
    let s = start_with(Some(dir.path().to_path_buf())).await;
    let root = s.base.trim_end_matches("/api/v1");
    let page = s.client.get(format!("{root}/")).send().await.unwrap();
    assert_eq!(page.status(), StatusCode::OK);
    assert_eq!(page.text().await.unwrap(), "<h1>dashboard</h1>");
    let (status, _) = s.get("/agents").await;
    assert_eq!(status, StatusCode::OK);
}
