use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Source of timestamps (seconds since the Unix epoch).
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    }
}

/// Deterministic clock: every reading advances by a fixed step.
#[derive(Debug)]
pub struct LogicalClock {
    start: f64,
    step_millis: u64,
    ticks: AtomicU64,
}

impl LogicalClock {
    pub const DEFAULT_START: f64 = 1_700_000_000.0;

    pub fn new(start: f64, step_millis: u64) -> Self {
        LogicalClock { start, step_millis, ticks: AtomicU64::new(0) }
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        LogicalClock::new(Self::DEFAULT_START, 1000)
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> f64 {
        let tick = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + (tick * self.step_millis) as f64 / 1000.0
    }
}
