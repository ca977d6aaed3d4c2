//! Injectable time source.

use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, TimeZone, Utc};

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to. Clones share the same instant.
#[derive(Debug, Clone)]
pub struct ManualClock {
    inner: Arc<Mutex<DateTime<Utc>>>,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(start)),
        }
    }

    /// 2025-11-01T00:00:00Z, the default epoch for simulations.
    pub fn at_default_epoch() -> Self {
        Self::new(Utc.with_ymd_and_hms(2025, 11, 1, 0, 0, 0).unwrap())
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.inner.lock().unwrap() = to;
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.inner.lock().unwrap();
        *now += by;
    }

    pub fn advance_secs(&self, secs: i64) {
        self.advance(Duration::seconds(secs));
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.inner.lock().unwrap()
    }
}

pub type SharedClock = Arc<dyn Clock>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_clones_share_time() {
        let clock = ManualClock::at_default_epoch();
        let other = clock.clone();
        clock.advance_secs(90);
        assert_eq!(other.now(), clock.now());
        assert_eq!(
            other.now(),
            Utc.with_ymd_and_hms(2025, 11, 1, 0, 1, 30).unwrap()
        );
    }
}
