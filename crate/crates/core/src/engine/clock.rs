use std::fmt::Debug;
use std::time::Instant;

/// Time source for metric timings and record timestamps.
pub trait Clock: Send + Sync + Debug {
    /// Monotonic milliseconds since an arbitrary origin.
    fn now_ms(&self) -> u64;
    /// Wall-clock time as RFC 3339.
    fn timestamp(&self) -> String;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn timestamp(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

/// Always reads zero and the Unix epoch, making results files reproducible
/// byte for byte.
#[derive(Debug, Default, Clone, Copy)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now_ms(&self) -> u64 {
        0
    }

    fn timestamp(&self) -> String {
        "1970-01-01T00:00:00.000Z".to_string()
    }
}
