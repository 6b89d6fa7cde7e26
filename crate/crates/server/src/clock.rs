use std::time::{Duration, SystemTime, UNIX_EPOCH};

use realchart::Millis;
use tokio::time::Instant;

/// Wall-clock milliseconds derived from tokio's monotonic clock, so pausing
/// tokio time pauses this clock too.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    origin: Instant,
    origin_ms: Millis,
}

impl Clock {
    /// A clock reading `origin_ms` right now.
    pub fn starting_at(origin_ms: Millis) -> Self {
        Self {
            origin: Instant::now(),
            origin_ms,
        }
    }

    pub fn system() -> Self {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_millis() as Millis;
        Self::starting_at(now)
    }

    pub fn now(&self) -> Millis {
        self.origin_ms + self.origin.elapsed().as_millis() as Millis
    }

    /// The instant at which [`now`](Self::now) reads `ms`.
    pub fn instant_at(&self, ms: Millis) -> Instant {
        self.origin + Duration::from_millis(ms.saturating_sub(self.origin_ms))
    }
}
