//! Time sources. Every component reads time through [`Clock`] so the same code
//! runs against wall-clock time, an accelerated simulated clock, or a manual
//! clock driven by tests.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

pub const NANOS_PER_SEC: i64 = 1_000_000_000;

pub fn secs_to_ns(secs: f64) -> i64 {
    (secs * NANOS_PER_SEC as f64).round() as i64
}

pub fn ns_to_secs(ns: i64) -> f64 {
    ns as f64 / NANOS_PER_SEC as f64
}

/// Parses a timestamp given as integer nanoseconds since the epoch or as
/// RFC 3339.
pub fn parse_time(s: &str) -> Result<i64, String> {
    let s = s.trim();
    if let Ok(ns) = s.parse::<i64>() {
        return Ok(ns);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .ok()
        .and_then(|d| d.timestamp_nanos_opt())
        .ok_or_else(|| format!("{s:?} is neither epoch nanoseconds nor an RFC 3339 time"))
}

pub trait Clock: Send + Sync {
    /// Current time in nanoseconds since the Unix epoch.
    fn now_ns(&self) -> i64;

    /// Simulated seconds per wall-clock second.
    fn scale(&self) -> f64 {
        1.0
    }

    /// Converts a span of clock time into the wall-clock duration it takes.
    fn to_wall(&self, ns: i64) -> Duration {
        Duration::from_nanos((ns.max(0) as f64 / self.scale()) as u64)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ns(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as i64)
            .unwrap_or(0)
    }
}

/// Simulated clock that starts at `origin_ns` and runs `scale` times faster
/// than the wall clock.
#[derive(Debug, Clone)]
pub struct ScaledClock {
    origin_ns: i64,
    started: Instant,
    scale: f64,
}

impl ScaledClock {
    pub fn new(origin_ns: i64, scale: f64) -> Self {
        assert!(scale > 0.0, "time scale must be positive");
        Self {
            origin_ns,
            started: Instant::now(),
            scale,
        }
    }
}

impl Clock for ScaledClock {
    fn now_ns(&self) -> i64 {
        let elapsed = self.started.elapsed().as_nanos() as f64 * self.scale;
        self.origin_ns + elapsed as i64
    }

    fn scale(&self) -> f64 {
        self.scale
    }
}

/// Clock that only moves when told to. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(start_ns: i64) -> Self {
        Self(Arc::new(AtomicI64::new(start_ns)))
    }

    pub fn set(&self, ns: i64) {
        self.0.store(ns, Ordering::SeqCst);
    }

    pub fn advance(&self, ns: i64) -> i64 {
        self.0.fetch_add(ns, Ordering::SeqCst) + ns
    }
}

impl Clock for ManualClock {
    fn now_ns(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}
