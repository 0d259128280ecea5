use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::SessionStatus;
use crate::envkit::Frame;

/// Frames a subscriber may have queued before the oldest is dropped.
pub const FRAME_QUEUE_CAP: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricEvent {
    pub session_id: String,
    pub episode_index: u64,
    pub total_reward: f64,
    pub mean_loss: Option<f64>,
    pub epsilon: Option<f64>,
    pub steps_in_episode: u64,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameEvent {
    pub session_id: String,
    pub episode_index: u64,
    pub step_index: u64,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusEvent {
    pub session_id: String,
    pub status: SessionStatus,
    pub episodes_completed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum SessionEvent {
    Metric(MetricEvent),
    Frame(FrameEvent),
    Status(StatusEvent),
}

impl SessionEvent {
    pub fn is_frame(&self) -> bool {
        matches!(self, SessionEvent::Frame(_))
    }
}

#[derive(Debug, Default)]
struct QueueState {
    events: VecDeque<SessionEvent>,
    frames: usize,
    dropped_frames: u64,
    closed: bool,
}

#[derive(Debug, Default)]
struct Queue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl Queue {
    fn push(&self, event: SessionEvent) {
        let mut s = self.state.lock().expect("queue lock");
        if event.is_frame() {
            if s.frames == FRAME_QUEUE_CAP {
                if let Some(pos) = s.events.iter().position(SessionEvent::is_frame) {
                    s.events.remove(pos);
                    s.frames -= 1;
                    s.dropped_frames += 1;
                }
            }
            s.frames += 1;
        }
        s.events.push_back(event);
        self.ready.notify_all();
    }

    fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }
}

#[derive(Debug, Default)]
struct Hub {
    history: Vec<SessionEvent>,
    subscribers: Vec<Arc<Queue>>,
    closed: bool,
}

/// Per-session fan-out. Metric and status events are kept as history and
/// replayed to late subscribers; frames go only to current subscribers and
/// may be dropped per subscriber when its queue is full.
#[derive(Debug, Default)]
pub struct Broadcaster {
    hub: Mutex<Hub>,
}

impl Broadcaster {
    pub fn publish(&self, event: SessionEvent) {
        let mut hub = self.hub.lock().expect("hub lock");
        hub.subscribers.retain(|q| Arc::strong_count(q) > 1);
        for q in &hub.subscribers {
            q.push(event.clone());
        }
        if !event.is_frame() {
            hub.history.push(event);
        }
    }

    pub fn has_subscribers(&self) -> bool {
        let hub = self.hub.lock().expect("hub lock");
        hub.subscribers.iter().any(|q| Arc::strong_count(q) > 1)
    }

    /// Marks the stream finished; subscribers drain what is queued and
    /// then see the end.
    pub fn close(&self) {
        let mut hub = self.hub.lock().expect("hub lock");
        hub.closed = true;
        for q in hub.subscribers.drain(..) {
            q.close();
        }
    }

    pub fn subscribe(&self) -> Subscription {
        let mut hub = self.hub.lock().expect("hub lock");
        let queue = Arc::new(Queue::default());
        {
            let mut s = queue.state.lock().expect("queue lock");
            s.events.extend(hub.history.iter().cloned());
            s.closed = hub.closed;
        }
        if !hub.closed {
            hub.subscribers.push(Arc::clone(&queue));
        }
        Subscription { queue }
    }

    pub fn metrics(&self) -> Vec<MetricEvent> {
        let hub = self.hub.lock().expect("hub lock");
        hub.history
            .iter()
            .filter_map(|e| match e {
                SessionEvent::Metric(m) => Some(m.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn history(&self) -> Vec<SessionEvent> {
        self.hub.lock().expect("hub lock").history.clone()
    }
}

#[derive(Debug, PartialEq)]
pub enum Recv {
    Event(SessionEvent),
    Timeout,
    Closed,
}

/// A subscriber's view of a session's event stream.
#[derive(Debug)]
pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn recv_timeout(&self, timeout: Duration) -> Recv {
        let deadline = Instant::now() + timeout;
        let mut s = self.queue.state.lock().expect("queue lock");
        loop {
            if let Some(e) = s.events.pop_front() {
                if e.is_frame() {
                    s.frames -= 1;
                }
                return Recv::Event(e);
            }
            if s.closed {
                return Recv::Closed;
            }
            let now = Instant::now();
            if now >= deadline {
                return Recv::Timeout;
            }
            s = self
                .queue
                .ready
                .wait_timeout(s, deadline - now)
                .expect("queue lock")
                .0;
        }
    }

    /// Blocks until the next event; `None` once the stream has ended.
    pub fn recv(&self) -> Option<SessionEvent> {
        loop {
            match self.recv_timeout(Duration::from_secs(3600)) {
                Recv::Event(e) => return Some(e),
                Recv::Closed => return None,
                Recv::Timeout => {}
            }
        }
    }

    pub fn dropped_frames(&self) -> u64 {
        self.queue.state.lock().expect("queue lock").dropped_frames
    }
}

impl Iterator for Subscription {
    type Item = SessionEvent;

    fn next(&mut self) -> Option<SessionEvent> {
        self.recv()
    }
}
