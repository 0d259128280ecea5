//! Session orchestration: create, run, pause, resume and stop training or
//! test sessions on a worker pool, streaming metric, frame and status events.

mod catalog;
mod clock;
mod events;
mod pool;
mod session;

pub use catalog::{Catalog, RegisteredPlugin};
pub use clock::{Clock, FrozenClock, SystemClock};
pub use events::{
    Broadcaster, FrameEvent, MetricEvent, Recv, SessionEvent, StatusEvent, Subscription,
    FRAME_QUEUE_CAP,
};
pub use pool::{default_workers, WorkerPool};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{check_compatible, AgentError, Hyperparameters, Mode};
use crate::envkit::EnvError;
use crate::modelstore::{self, ModelArtifact, ModelError};
use crate::plugin::{PluginCommand, PluginError, PluginKind, DEFAULT_TIMEOUT};
use session::Session;

pub const MAX_DISPLAY_SPEED: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Created,
    Running,
    Paused,
    Finished,
    Failed,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Finished | SessionStatus::Failed)
    }

    pub fn can_become(self, to: SessionStatus) -> bool {
        use SessionStatus::*;
        matches!(
            (self, to),
            (Created, Running)
                | (Running, Paused | Finished | Failed)
                | (Paused, Running | Finished)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Created => "created",
            SessionStatus::Running => "running",
            SessionStatus::Paused => "paused",
            SessionStatus::Finished => "finished",
            SessionStatus::Failed => "failed",
        }
    }
}

/// What to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSpec {
    pub env_id: String,
    pub agent_id: String,
    pub hyperparameters: Hyperparameters,
    pub mode: Mode,
    /// Frames per second streamed to subscribers; 0 disables frames.
    #[serde(default)]
    pub display_speed: u32,
}

impl SessionSpec {
    pub fn new(env_id: &str, agent_id: &str, hyperparameters: Hyperparameters, mode: Mode) -> Self {
        Self {
            env_id: env_id.to_string(),
            agent_id: agent_id.to_string(),
            hyperparameters,
            mode,
            display_speed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionRecord {
    pub session_id: String,
    pub env_id: String,
    pub agent_id: String,
    pub hyperparameters: Hyperparameters,
    pub mode: Mode,
    pub status: SessionStatus,
    pub created_at: String,
    pub finished_at: Option<String>,
    pub failure: Option<String>,
    pub episodes_completed: u64,
    pub display_speed: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "camelCase")]
pub enum Control {
    Start,
    Pause,
    Resume,
    Stop,
    SetDisplaySpeed { fps: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub episodes: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
}

/// Mean, population standard deviation and range of episode rewards.
pub fn summarize(rewards: &[f64]) -> Option<Summary> {
    if rewards.is_empty() {
        return None;
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Some(Summary {
        episodes: rewards.len() as u64,
        mean_reward: mean,
        std_reward: var.sqrt(),
        min_reward: rewards.iter().copied().fold(f64::INFINITY, f64::min),
        max_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Plugin(String),
    #[error("{0}")]
    Internal(String),
}

impl EngineError {
    /// Stable machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::NotFound(_) => "not_found",
            EngineError::Incompatible(_) => "incompatible",
            EngineError::State(_) => "state_error",
            EngineError::BadRequest(_) => "bad_request",
            EngineError::Plugin(_) => "plugin_error",
            EngineError::Internal(_) => "internal",
        }
    }
}

impl From<AgentError> for EngineError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::UnknownAgent(_) => EngineError::NotFound(e.to_string()),
            AgentError::Incompatible(_) => EngineError::Incompatible(e.to_string()),
            AgentError::InvalidArgument(_) | AgentError::Weights(_) => {
                EngineError::BadRequest(e.to_string())
            }
            AgentError::Plugin(p) => p.into(),
            AgentError::Numerics(_) | AgentError::Contract(_) => {
                EngineError::Internal(e.to_string())
            }
        }
    }
}

impl From<PluginError> for EngineError {
    fn from(e: PluginError) -> Self {
        EngineError::Plugin(e.to_string())
    }
}

impl From<EnvError> for EngineError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Plugin(p) => p.into(),
            other => EngineError::Internal(format!("environment error: {other}")),
        }
    }
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Incompatible(_) => EngineError::Incompatible(e.to_string()),
            ModelError::Format(_) | ModelError::Corrupt(_) => {
                EngineError::BadRequest(e.to_string())
            }
            ModelError::Agent(a) => a.into(),
            ModelError::Io(_) => EngineError::Internal(e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub workers: usize,
    pub clock: Arc<dyn Clock>,
    pub plugin_timeout: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            workers: default_workers(),
            clock: Arc::new(SystemClock::default()),
            plugin_timeout: DEFAULT_TIMEOUT,
        }
    }
}

struct Inner {
    catalog: Arc<Catalog>,
    clock: Arc<dyn Clock>,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    pool: WorkerPool,
}

impl Drop for Inner {
    fn drop(&mut self) {
        for s in self.sessions.read().expect("registry lock").values() {
            s.stop.store(true, Ordering::SeqCst);
        }
    }
}

/// Session registry plus worker pool. Cloning yields another handle to the
/// same engine; the pool shuts down when the last handle is dropped.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("workers", &self.inner.pool.size())
            .field(
                "sessions",
                &self.inner.sessions.read().expect("registry lock").len(),
            )
            .finish()
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(EngineConfig::default())
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                catalog: Arc::new(Catalog::new(config.plugin_timeout)),
                clock: config.clock,
                sessions: RwLock::default(),
                next_id: AtomicU64::new(1),
                pool: WorkerPool::new(config.workers),
            }),
        }
    }

    pub fn workers(&self) -> usize {
        self.inner.pool.size()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.inner.catalog
    }

    pub fn clock(&self) -> &dyn Clock {
        self.inner.clock.as_ref()
    }

    pub fn register_plugin(
        &self,
        kind: PluginKind,
        command: PluginCommand,
    ) -> Result<RegisteredPlugin, EngineError> {
        self.inner.catalog.register(kind, command)
    }

    pub fn create_session(&self, spec: SessionSpec) -> Result<SessionRecord, EngineError> {
        self.create(spec, None)
    }

    /// A session whose agent starts from stored weights. The agent id and
    /// hyperparameters come from the artifact.
    pub fn create_session_from_model(
        &self,
        artifact: Arc<ModelArtifact>,
        env_id: &str,
        mode: Mode,
        hyperparameters: Hyperparameters,
    ) -> Result<SessionRecord, EngineError> {
        let env = self.inner.catalog.env_descriptor(env_id)?;
        artifact.check_env(&env)?;
        let spec = SessionSpec::new(env_id, &artifact.metadata.agent_id, hyperparameters, mode);
        self.create(spec, Some(artifact))
    }

    fn create(
        &self,
        spec: SessionSpec,
        model: Option<Arc<ModelArtifact>>,
    ) -> Result<SessionRecord, EngineError> {
        let catalog = &self.inner.catalog;
        let env = catalog.env_descriptor(&spec.env_id)?;
        let agent = catalog.agent_descriptor(&spec.agent_id)?;
        check_compatible(&agent, &env)?;
        spec.hyperparameters
            .validate()
            .map_err(|e| EngineError::BadRequest(e.to_string()))?;
        if spec.display_speed > MAX_DISPLAY_SPEED {
            return Err(bad_speed(spec.display_speed));
        }
        if let Some(model) = &model {
            if !catalog.is_plugin_agent(&spec.agent_id) {
                // Surface weight mismatches now rather than on the worker.
                model.instantiate(&env)?;
            }
        }
        let n = self.inner.next_id.fetch_add(1, Ordering::SeqCst);
        let id = format!("s{n}");
        let session = Arc::new(Session::new(
            id.clone(),
            spec,
            env,
            self.inner.clock.timestamp(),
            model,
        ));
        let record = session.record();
        self.inner
            .sessions
            .write()
            .expect("registry lock")
            .insert(id, session);
        Ok(record)
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, EngineError> {
        self.inner
            .sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::NotFound(format!("unknown session `{id}`")))
    }

    pub fn session(&self, id: &str) -> Result<SessionRecord, EngineError> {
        Ok(self.get(id)?.record())
    }

    pub fn sessions(&self) -> Vec<SessionRecord> {
        self.inner
            .sessions
            .read()
            .expect("registry lock")
            .values()
            .map(|s| s.record())
            .collect()
    }

    fn schedule(&self, session: Arc<Session>) {
        let catalog = Arc::clone(&self.inner.catalog);
        let clock = Arc::clone(&self.inner.clock);
        self.inner
            .pool
            .submit(move || session::drive(&session, &catalog, clock.as_ref()));
    }

    pub fn control(&self, id: &str, command: Control) -> Result<SessionRecord, EngineError> {
        let session = self.get(id)?;
        let clock = self.inner.clock.as_ref();
        let mut s = session.lock();
        let illegal = |status: SessionStatus| {
            EngineError::State(format!(
                "cannot {} session `{id}` while it is {}",
                command_name(command),
                status.as_str()
            ))
        };
        match command {
            Control::Start => {
                if s.status != SessionStatus::Created {
                    return Err(illegal(s.status));
                }
                session.transition(&mut s, SessionStatus::Running, clock, None);
                self.schedule(Arc::clone(&session));
            }
            Control::Pause => {
                if s.status != SessionStatus::Running || s.pause_requested {
                    return Err(illegal(s.status));
                }
                s.pause_requested = true;
            }
            Control::Resume => match s.status {
                SessionStatus::Paused => {
                    session.transition(&mut s, SessionStatus::Running, clock, None);
                    self.schedule(Arc::clone(&session));
                }
                SessionStatus::Running if s.pause_requested => s.pause_requested = false,
                other => return Err(illegal(other)),
            },
            Control::Stop => match s.status {
                SessionStatus::Running => session.stop.store(true, Ordering::SeqCst),
                SessionStatus::Paused => {
                    session.stop.store(true, Ordering::SeqCst);
                    session.transition(&mut s, SessionStatus::Finished, clock, None);
                }
                other => return Err(illegal(other)),
            },
            Control::SetDisplaySpeed { fps } => {
                if s.status.is_terminal() {
                    return Err(illegal(s.status));
                }
                if fps > MAX_DISPLAY_SPEED {
                    return Err(bad_speed(fps));
                }
                session.display_speed.store(fps, Ordering::Relaxed);
            }
        }
        Ok(session.record_of(&s))
    }

    pub fn start(&self, id: &str) -> Result<SessionRecord, EngineError> {
        self.control(id, Control::Start)
    }

    pub fn subscribe(&self, id: &str) -> Result<Subscription, EngineError> {
        Ok(self.get(id)?.events.subscribe())
    }

    /// Blocks until the session reaches a terminal status.
    pub fn wait(&self, id: &str) -> Result<SessionRecord, EngineError> {
        self.wait_for(id, |s| s.is_terminal(), None)
    }

    /// Blocks until `done(status)` holds or the timeout passes; returns the
    /// record either way.
    pub fn wait_for(
        &self,
        id: &str,
        done: impl Fn(SessionStatus) -> bool,
        timeout: Option<Duration>,
    ) -> Result<SessionRecord, EngineError> {
        let session = self.get(id)?;
        let deadline = timeout.map(|t| std::time::Instant::now() + t);
        let mut s = session.lock();
        while !done(s.status) {
            s = match deadline {
                None => session.changed.wait(s).expect("session lock"),
                Some(d) => {
                    let now = std::time::Instant::now();
                    if now >= d {
                        break;
                    }
                    session
                        .changed
                        .wait_timeout(s, d - now)
                        .expect("session lock")
                        .0
                }
            };
        }
        Ok(session.record_of(&s))
    }

    pub fn metrics(&self, id: &str) -> Result<Vec<MetricEvent>, EngineError> {
        Ok(self.get(id)?.events.metrics())
    }

    pub fn history(&self, id: &str) -> Result<Vec<SessionEvent>, EngineError> {
        Ok(self.get(id)?.events.history())
    }

    pub fn results_csv(&self, id: &str) -> Result<String, EngineError> {
        Ok(modelstore::results_csv(&self.metrics(id)?))
    }

    /// Reward statistics of a finished test session.
    pub fn evaluate(&self, id: &str) -> Result<Summary, EngineError> {
        let session = self.get(id)?;
        let status = session.lock().status;
        if session.spec.mode != Mode::Test {
            return Err(EngineError::State(format!(
                "session `{id}` is not a test session"
            )));
        }
        if status != SessionStatus::Finished {
            return Err(EngineError::State(format!(
                "session `{id}` is {}, evaluation needs a finished session",
                status.as_str()
            )));
        }
        let rewards: Vec<f64> = session
            .events
            .metrics()
            .iter()
            .map(|m| m.total_reward)
            .collect();
        summarize(&rewards)
            .ok_or_else(|| EngineError::State(format!("session `{id}` completed no episodes")))
    }

    /// Snapshot of a finished or paused session's agent as an artifact.
    pub fn model_artifact(&self, id: &str) -> Result<ModelArtifact, EngineError> {
        let session = self.get(id)?;
        let s = session.lock();
        if !matches!(s.status, SessionStatus::Finished | SessionStatus::Paused) {
            return Err(EngineError::State(format!(
                "session `{id}` is {}; only finished or paused sessions can be saved",
                s.status.as_str()
            )));
        }
        let mut runner = session.runner.lock().expect("runner lock");
        let runner = runner
            .as_mut()
            .ok_or_else(|| EngineError::State(format!("session `{id}` never ran an agent")))?;
        let sections = runner.agent.save()?;
        Ok(ModelArtifact::new(
            &session.spec.agent_id,
            &session.env,
            &session.spec.hyperparameters,
            s.episodes_completed,
            self.inner.clock.timestamp(),
            sections,
        ))
    }

    /// Starts every session and waits for all of them.
    pub fn run_parallel(&self, ids: &[String]) -> Vec<Result<SessionRecord, EngineError>> {
        let started: Vec<_> = ids.iter().map(|id| self.start(id).map(|_| ())).collect();
        ids.iter()
            .zip(started)
            .map(|(id, started)| started.and_then(|_| self.wait(id)))
            .collect()
    }

    /// Creates, starts and waits for one session.
    pub fn run_to_completion(&self, spec: SessionSpec) -> Result<SessionRecord, EngineError> {
        let id = self.create_session(spec)?.session_id;
        self.start(&id)?;
        self.wait(&id)
    }
}

fn command_name(c: Control) -> &'static str {
    match c {
        Control::Start => "start",
        Control::Pause => "pause",
        Control::Resume => "resume",
        Control::Stop => "stop",
        Control::SetDisplaySpeed { .. } => "set the display speed of",
    }
}

fn bad_speed(fps: u32) -> EngineError {
    EngineError::BadRequest(format!(
        "display speed must be 0..={MAX_DISPLAY_SPEED} frames/sec, got {fps}"
    ))
}
