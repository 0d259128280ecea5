use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::events::{Broadcaster, FrameEvent, MetricEvent, SessionEvent, StatusEvent};
use super::{Catalog, Clock, EngineError, SessionRecord, SessionSpec, SessionStatus};
use crate::agents::{Agent, Mode};
use crate::envkit::{EnvDescriptor, Environment, Transition};
use crate::modelstore::ModelArtifact;

/// Mutable part of a session, guarded by one lock.
#[derive(Debug)]
pub(crate) struct SessionState {
    pub status: SessionStatus,
    pub finished_at: Option<String>,
    pub failure: Option<String>,
    pub episodes_completed: u64,
    pub pause_requested: bool,
    pub started_ms: Option<u64>,
}

/// Environment and agent of a session that has started; parked here while
/// paused and after finishing so the trained agent can be saved.
pub(crate) struct Runner {
    pub env: Box<dyn Environment>,
    pub agent: Box<dyn Agent>,
    seeded: bool,
}

pub(crate) struct Session {
    pub id: String,
    pub spec: SessionSpec,
    pub env: EnvDescriptor,
    pub created_at: String,
    pub model: Option<Arc<ModelArtifact>>,
    pub events: Broadcaster,
    pub state: Mutex<SessionState>,
    pub changed: Condvar,
    pub runner: Mutex<Option<Runner>>,
    pub stop: AtomicBool,
    pub display_speed: AtomicU32,
}

impl Session {
    pub fn new(
        id: String,
        spec: SessionSpec,
        env: EnvDescriptor,
        created_at: String,
        model: Option<Arc<ModelArtifact>>,
    ) -> Self {
        let speed = spec.display_speed;
        Self {
            id,
            spec,
            env,
            created_at,
            model,
            events: Broadcaster::default(),
            state: Mutex::new(SessionState {
                status: SessionStatus::Created,
                finished_at: None,
                failure: None,
                episodes_completed: 0,
                pause_requested: false,
                started_ms: None,
            }),
            changed: Condvar::new(),
            runner: Mutex::new(None),
            stop: AtomicBool::new(false),
            display_speed: AtomicU32::new(speed),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().expect("session lock")
    }

    pub fn record(&self) -> SessionRecord {
        let s = self.lock();
        self.record_of(&s)
    }

    pub fn record_of(&self, s: &SessionState) -> SessionRecord {
        SessionRecord {
            session_id: self.id.clone(),
            env_id: self.spec.env_id.clone(),
            agent_id: self.spec.agent_id.clone(),
            hyperparameters: self.spec.hyperparameters.clone(),
            mode: self.spec.mode,
            status: s.status,
            created_at: self.created_at.clone(),
            finished_at: s.finished_at.clone(),
            failure: s.failure.clone(),
            episodes_completed: s.episodes_completed,
            display_speed: self.display_speed.load(Ordering::Relaxed),
        }
    }

    /// Applies a status change and announces it. Terminal statuses close
    /// the event stream.
    pub fn transition(
        &self,
        s: &mut SessionState,
        to: SessionStatus,
        clock: &dyn Clock,
        message: Option<String>,
    ) {
        debug_assert!(s.status.can_become(to), "{:?} -> {to:?}", s.status);
        s.status = to;
        if to.is_terminal() {
            s.finished_at = Some(clock.timestamp());
            if to == SessionStatus::Failed {
                s.failure = message.clone();
            }
        }
        self.events.publish(SessionEvent::Status(StatusEvent {
            session_id: self.id.clone(),
            status: to,
            episodes_completed: s.episodes_completed,
            message,
        }));
        if to.is_terminal() {
            self.events.close();
        }
        self.changed.notify_all();
    }
}

enum Outcome {
    Finished,
    Paused,
}

/// Worker entry point: runs episodes until done, paused, stopped or failed.
pub(crate) fn drive(session: &Session, catalog: &Catalog, clock: &dyn Clock) {
    let result = panic::catch_unwind(AssertUnwindSafe(|| run(session, catalog, clock)));
    let failure = match result {
        Ok(Ok(Outcome::Paused)) => return,
        Ok(Ok(Outcome::Finished)) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(panic) => Some(format!(
            "internal error: {}",
            panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("panic")
        )),
    };
    let mut s = session.lock();
    match failure {
        None => session.transition(&mut s, SessionStatus::Finished, clock, None),
        Some(msg) => {
            tracing::warn!(session = %session.id, "session failed: {msg}");
            // A failed runner is not kept: its agent may be half-updated.
            session.runner.lock().expect("runner lock").take();
            session.transition(&mut s, SessionStatus::Failed, clock, Some(msg));
        }
    }
}

fn build_runner(session: &Session, catalog: &Catalog) -> Result<Runner, EngineError> {
    let env = catalog.make_env(&session.spec.env_id)?;
    let mut agent = catalog.make_agent(
        &session.spec.agent_id,
        &session.env,
        &session.spec.hyperparameters,
    )?;
    if let Some(model) = &session.model {
        agent.load(&model.sections)?;
    }
    Ok(Runner {
        env,
        agent,
        seeded: false,
    })
}

fn run(session: &Session, catalog: &Catalog, clock: &dyn Clock) -> Result<Outcome, EngineError> {
    let existing = session.runner.lock().expect("runner lock").take();
    let mut runner = match existing {
        Some(r) => r,
        None => build_runner(session, catalog)?,
    };
    let hp = &session.spec.hyperparameters;
    let max_steps = (hp.max_steps_per_episode as usize).min(session.env.max_episode_steps);
    let started_ms = {
        let mut s = session.lock();
        *s.started_ms.get_or_insert_with(|| clock.now_ms())
    };
    let mut throttle = FrameThrottle::default();

    loop {
        {
            let mut s = session.lock();
            if s.episodes_completed >= hp.episodes || session.stop.load(Ordering::SeqCst) {
                drop(s);
                *session.runner.lock().expect("runner lock") = Some(runner);
                return Ok(Outcome::Finished);
            }
            if s.pause_requested {
                s.pause_requested = false;
                *session.runner.lock().expect("runner lock") = Some(runner);
                session.transition(&mut s, SessionStatus::Paused, clock, None);
                return Ok(Outcome::Paused);
            }
        }
        let episode = session.lock().episodes_completed;
        let Some(stats) = runner.episode(session, episode, max_steps, &mut throttle)? else {
            *session.runner.lock().expect("runner lock") = Some(runner);
            return Ok(Outcome::Finished);
        };
        let mut s = session.lock();
        session.events.publish(SessionEvent::Metric(MetricEvent {
            session_id: session.id.clone(),
            episode_index: episode,
            total_reward: stats.total_reward,
            mean_loss: stats.mean_loss,
            epsilon: stats.epsilon,
            steps_in_episode: stats.steps,
            wall_clock_ms: clock.now_ms().saturating_sub(started_ms),
        }));
        s.episodes_completed += 1;
    }
}

struct EpisodeStats {
    total_reward: f64,
    mean_loss: Option<f64>,
    epsilon: Option<f64>,
    steps: u64,
}

impl Runner {
    /// One episode; `None` when a stop request interrupted it.
    fn episode(
        &mut self,
        session: &Session,
        episode: u64,
        max_steps: usize,
        throttle: &mut FrameThrottle,
    ) -> Result<Option<EpisodeStats>, EngineError> {
        let mode = session.spec.mode;
        let seed = (!self.seeded).then_some(session.spec.hyperparameters.seed);
        self.agent.begin_episode(mode)?;
        let reset = self.env.reset(seed)?;
        self.seeded = true;
        let mut obs = reset.observation;
        let mut total_reward = 0.0;
        let mut losses = Vec::new();
        let mut steps = 0u64;
        while (steps as usize) < max_steps {
            if session.stop.load(Ordering::SeqCst) {
                return Ok(None);
            }
            let action = self.agent.choose_action(&obs, mode)?;
            let result = self.env.step(action)?;
            steps += 1;
            total_reward += result.reward;
            if mode == Mode::Train {
                self.agent.observe(&Transition {
                    observation: obs,
                    action,
                    reward: result.reward,
                    next_observation: result.observation.clone(),
                    done: result.done,
                })?;
                losses.extend(self.agent.update()?);
            }
            let fps = session.display_speed.load(Ordering::Relaxed);
            if throttle.due(fps) && session.events.has_subscribers() {
                session.events.publish(SessionEvent::Frame(FrameEvent {
                    session_id: session.id.clone(),
                    episode_index: episode,
                    step_index: steps,
                    frame: result.frame,
                }));
            }
            obs = result.observation;
            if result.done {
                break;
            }
        }
        losses.extend(self.agent.end_episode(mode)?);
        if let Some(bad) = losses.iter().find(|l| !l.is_finite()) {
            return Err(EngineError::Internal(format!(
                "agent produced a non-finite loss ({bad})"
            )));
        }
        let mean_loss =
            (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        let epsilon = self
            .agent
            .epsilon()
            .map(|e| if mode == Mode::Test { 0.0 } else { e });
        Ok(Some(EpisodeStats {
            total_reward,
            mean_loss,
            epsilon,
            steps,
        }))
    }
}

/// Real-time rate limiter for frame events; independent of the metric clock.
#[derive(Debug, Default)]
pub(crate) struct FrameThrottle {
    last: Option<Instant>,
}

impl FrameThrottle {
    pub fn due(&mut self, fps: u32) -> bool {
        if fps == 0 {
            return false;
        }
        let now = Instant::now();
        let interval = Duration::from_secs_f64(1.0 / f64::from(fps));
        match self.last {
            Some(t) if now.duration_since(t) < interval => false,
            _ => {
                self.last = Some(now);
                true
            }
        }
    }
}
