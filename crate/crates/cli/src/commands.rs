use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use easyrl_core::agents::{Hyperparameters, Mode};
use easyrl_core::engine::{
    summarize, Engine, EngineConfig, EngineError, FrozenClock, MetricEvent, SessionEvent,
    SessionRecord, SessionSpec, SessionStatus, Subscription,
};
use easyrl_core::modelstore::{load_model, save_model, write_results};
use easyrl_core::plugin::{conformance, PluginCommand as Command, PluginKind};
use easyrl_service::AppState;
use serde::Deserialize;
use serde_json::Value;

use crate::{
    Cli, Failure, HpArgs, ListKind, PluginCommand, PluginKindArg, ServeArgs, TestArgs, TrainArgs,
};

type Outcome = Result<(), Failure>;

/// Episodes averaged in the closing summary line of a training run.
const SUMMARY_WINDOW: usize = 100;

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::NotFound(_)
            | EngineError::Incompatible(_)
            | EngineError::BadRequest(_) => Failure::Usage(e.to_string()),
            EngineError::State(_) | EngineError::Plugin(_) | EngineError::Internal(_) => {
                Failure::Run(e.to_string())
            }
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

fn usage_err(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

pub fn dispatch(cli: Cli) -> Outcome {
    let mut config = EngineConfig::default();
    if cli.frozen_clock {
        config.clock = Arc::new(FrozenClock);
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        config.workers = w;
    }
    match cli.command {
        crate::Command::List { what } => list(what),
        crate::Command::Train(args) => train(Engine::new(config), args),
        crate::Command::Test(args) => test(Engine::new(config), args),
        crate::Command::Serve(args) => serve(Engine::new(config), args),
        crate::Command::Plugin {
            command:
                PluginCommand::Check {
                    kind,
                    timeout_ms,
                    command,
                },
        } => plugin_check(kind, timeout_ms, command),
        crate::Command::Parallel { spec } => parallel(Engine::new(config), &spec),
    }
}

fn list(what: ListKind) -> Outcome {
    let catalog = easyrl_core::engine::Catalog::new(easyrl_core::plugin::DEFAULT_TIMEOUT);
    let mut out = std::io::stdout().lock();
    match what {
        ListKind::Agents => {
            writeln!(
                out,
                "{:<10} {:<26} {:<22} RECURRENT",
                "ID", "NAME", "OBSERVATIONS"
            )
            .map_err(run_err)?;
            for a in catalog.agents() {
                let obs = a.supported_obs.join(",");
                let rec = if a.recurrent { "yes" } else { "no" };
                writeln!(
                    out,
                    "{:<10} {:<26} {:<22} {}",
                    a.id, a.display_name, obs, rec
                )
                .map_err(run_err)?;
            }
        }
        ListKind::Envs => {
            writeln!(
                out,
                "{:<22} {:<16} {:>7} {:>9}  PARTIAL",
                "ID", "OBSERVATIONS", "ACTIONS", "MAX STEPS"
            )
            .map_err(run_err)?;
            for e in catalog.environments() {
                let obs = match e.obs_kind {
                    easyrl_core::envkit::ObsKind::Discrete { n } => format!("discrete({n})"),
                    easyrl_core::envkit::ObsKind::Continuous { dim } => {
                        format!("continuous({dim})")
                    }
                };
                let partial = if e.partially_observable { "yes" } else { "no" };
                writeln!(
                    out,
                    "{:<22} {:<16} {:>7} {:>9}  {}",
                    e.id, obs, e.action_count, e.max_episode_steps, partial
                )
                .map_err(run_err)?;
            }
        }
    }
    Ok(())
}

/// Applies `--hp`, `--seed` and `--episodes` on top of `base`.
fn apply_overrides(mut hp: Hyperparameters, args: &HpArgs) -> Result<Hyperparameters, Failure> {
    for assignment in &args.hp {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--hp expects KEY=VALUE, got `{assignment}`")))?;
        let key = key.trim();
        let clash = match key {
            "seed" => args.seed.is_some().then_some("--seed"),
            "episodes" => args.episodes.is_some().then_some("--episodes"),
            _ => None,
        };
        if let Some(flag) = clash {
            return Err(Failure::Usage(format!(
                "{flag} conflicts with --hp {key}=...; pass only one"
            )));
        }
        hp.set(key, value.trim()).map_err(usage_err)?;
    }
    if let Some(seed) = args.seed {
        hp.seed = seed;
    }
    if let Some(episodes) = args.episodes {
        hp.episodes = episodes;
    }
    hp.validate().map_err(usage_err)?;
    Ok(hp)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn print_metric(m: &MetricEvent) {
    println!(
        "episode {:>6}  reward {:>10.3}  loss {:>10}  epsilon {:>6}  steps {:>5}",
        m.episode_index,
        m.total_reward,
        fmt_opt(m.mean_loss),
        fmt_opt(m.epsilon),
        m.steps_in_episode
    );
}

fn watch(sub: Subscription) {
    for ev in sub {
        if let SessionEvent::Metric(m) = ev {
            print_metric(&m);
        }
    }
}

/// Starts `id`, optionally echoing metrics, and waits for the end.
fn drive(engine: &Engine, id: &str, echo: bool) -> Result<SessionRecord, Failure> {
    let sub = if echo {
        Some(engine.subscribe(id)?)
    } else {
        None
    };
    engine.start(id)?;
    if let Some(sub) = sub {
        watch(sub);
    }
    Ok(engine.wait(id)?)
}

fn write_results_file(engine: &Engine, id: &str, path: Option<&Path>) -> Outcome {
    if let Some(path) = path {
        write_results(path, &engine.metrics(id)?)
            .map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn finished_or_failed(rec: &SessionRecord) -> Outcome {
    match rec.status {
        SessionStatus::Finished => Ok(()),
        _ => Err(Failure::Run(format!(
            "session {} {}: {}",
            rec.session_id,
            rec.status.as_str(),
            rec.failure.as_deref().unwrap_or("no reason recorded")
        ))),
    }
}

fn tail_mean(metrics: &[MetricEvent]) -> Option<(usize, f64)> {
    let tail = &metrics[metrics.len().saturating_sub(SUMMARY_WINDOW)..];
    let s = summarize(&tail.iter().map(|m| m.total_reward).collect::<Vec<_>>())?;
    Some((tail.len(), s.mean_reward))
}

fn train(engine: Engine, args: TrainArgs) -> Outcome {
    let defaults = engine
        .catalog()
        .agent_descriptor(&args.agent)?
        .default_hyperparameters;
    let hp = apply_overrides(defaults, &args.hp)?;
    let rec = engine.create_session(SessionSpec::new(&args.env, &args.agent, hp, Mode::Train))?;
    let id = rec.session_id;
    let end = drive(&engine, &id, args.watch)?;
    write_results_file(&engine, &id, args.results.as_deref())?;
    finished_or_failed(&end)?;

    let artifact = engine.model_artifact(&id)?;
    save_model(&args.out, &artifact).map_err(run_err)?;
    let metrics = engine.metrics(&id)?;
    match tail_mean(&metrics) {
        Some((n, mean)) => println!(
            "finished {} episodes; mean reward over the last {n}: {mean:.3}",
            end.episodes_completed
        ),
        None => println!("finished 0 episodes"),
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn test(engine: Engine, args: TestArgs) -> Outcome {
    let artifact = load_model(&args.model)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.model.display())))?;
    let hp = apply_overrides(artifact.metadata.hyperparameters.clone(), &args.hp)?;
    let env = args.env.unwrap_or_else(|| artifact.metadata.env_id.clone());
    let rec = engine.create_session_from_model(Arc::new(artifact), &env, Mode::Test, hp)?;
    let id = rec.session_id;
    let end = drive(&engine, &id, args.watch)?;
    write_results_file(&engine, &id, args.results.as_deref())?;
    finished_or_failed(&end)?;
    let s = engine.evaluate(&id)?;
    println!(
        "episodes {}  mean {:.4}  std {:.4}  min {:.4}  max {:.4}",
        s.episodes, s.mean_reward, s.std_reward, s.min_reward, s.max_reward
    );
    Ok(())
}

fn serve(engine: Engine, args: ServeArgs) -> Outcome {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(run_err)?;
    runtime.block_on(async move {
        let (listener, addr) = easyrl_service::bind(&args.addr)
            .await
            .map_err(|e| Failure::Usage(format!("cannot listen on {}: {e}", args.addr)))?;
        println!("listening on http://{addr}");
        std::io::stdout().flush().map_err(run_err)?;
        let app = easyrl_service::router(AppState::new(engine), args.static_dir);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        easyrl_service::serve(listener, app, shutdown)
            .await
            .map_err(run_err)
    })
}

fn plugin_check(kind: PluginKindArg, timeout_ms: u64, argv: Vec<String>) -> Outcome {
    let mut it = argv.into_iter();
    let program = it
        .next()
        .ok_or_else(|| Failure::Usage("missing plugin command".into()))?;
    let command = Command::new(program, it);
    let kind = match kind {
        PluginKindArg::Env => PluginKind::Environment,
        PluginKindArg::Agent => PluginKind::Agent,
    };
    let report = conformance::check(kind, &command, Duration::from_millis(timeout_ms));
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Run(String::new()))
    }
}

/// One entry of a `parallel` spec file.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RunConfig {
    env_id: String,
    agent_id: String,
    #[serde(default)]
    hyperparameters: Value,
    /// Results CSV destination.
    results: Option<PathBuf>,
    /// Model destination.
    out: Option<PathBuf>,
}

fn parallel(engine: Engine, spec: &Path) -> Outcome {
    let text =
        fs::read_to_string(spec).map_err(|e| Failure::Usage(format!("{}: {e}", spec.display())))?;
    let runs: Vec<RunConfig> = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", spec.display())))?;
    if runs.is_empty() {
        return Err(Failure::Usage(format!("{}: no runs", spec.display())));
    }
    let mut ids = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let defaults = engine
            .catalog()
            .agent_descriptor(&run.agent_id)?
            .default_hyperparameters;
        let hp = defaults
            .merge_json(&run.hyperparameters)
            .map_err(|e| Failure::Usage(format!("run {i}: {e}")))?;
        let rec = engine
            .create_session(SessionSpec::new(
                &run.env_id,
                &run.agent_id,
                hp,
                Mode::Train,
            ))
            .map_err(|e| Failure::from(e).prefixed(&format!("run {i}")))?;
        ids.push(rec.session_id);
    }

    let mut failed = 0;
    for ((run, id), end) in runs.iter().zip(&ids).zip(engine.run_parallel(&ids)) {
        let end = end?;
        write_results_file(&engine, id, run.results.as_deref())?;
        let label = format!(
            "{id} {}/{} seed {}",
            run.env_id, run.agent_id, end.hyperparameters.seed
        );
        if end.status != SessionStatus::Finished {
            failed += 1;
            println!(
                "{label}: {} ({})",
                end.status.as_str(),
                end.failure.as_deref().unwrap_or("no reason recorded")
            );
            continue;
        }
        if let Some(out) = &run.out {
            save_model(out, &engine.model_artifact(id)?).map_err(run_err)?;
        }
        let mean = tail_mean(&engine.metrics(id)?).map_or(0.0, |(_, m)| m);
        println!(
            "{label}: finished {} episodes, last-{SUMMARY_WINDOW} mean reward {mean:.3}",
            end.episodes_completed
        );
    }
    if failed > 0 {
        return Err(Failure::Run(format!(
            "{failed} of {} runs failed",
            ids.len()
        )));
    }
    Ok(())
}

impl Failure {
    fn prefixed(self, prefix: &str) -> Self {
        match self {
            Failure::Usage(m) => Failure::Usage(format!("{prefix}: {m}")),
            Failure::Run(m) => Failure::Run(format!("{prefix}: {m}")),
        }
    }
}
