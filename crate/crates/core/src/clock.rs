//! Time sources for memory timestamps and audit entries.
//!
//! Replays need byte-identical output, so anything that stamps records takes
//! a [`SharedClock`] instead of reading wall time directly.

use std::fmt::Debug;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};

pub trait Clock: Send + Sync + Debug {
    fn now(&self) -> DateTime<Utc>;
}

pub type SharedClock = Arc<dyn Clock>;

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: every reading advances by a fixed step from `start`.
#[derive(Debug)]
pub struct LogicalClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl LogicalClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            start,
            step_ms: step.num_milliseconds(),
            ticks: AtomicI64::new(0),
        }
    }

    /// 2023-01-01T00:00:00Z, one second per reading.
    pub fn at_epoch() -> Self {
        Self::new(
            Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            Duration::seconds(1),
        )
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> DateTime<Utc> {
        let tick = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + Duration::milliseconds(tick * self.step_ms)
    }
}

pub fn system() -> SharedClock {
    Arc::new(SystemClock)
}

pub fn logical() -> SharedClock {
    Arc::new(LogicalClock::at_epoch())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_steps() {
        let clock = LogicalClock::at_epoch();
        let a = clock.now();
        let b = clock.now();
        assert_eq!(b - a, Duration::seconds(1));
        assert_eq!(a.to_rfc3339(), "2023-01-01T00:00:00+00:00");
    }
}
