//! Commit timestamps.
//!
//! Timestamps are UTC unix seconds with strict per-project monotonicity: a
//! commit that lands within the same second as the previous one is bumped
//! forward by one second. Logical mode replaces the wall clock with a
//! deterministic counter (1, 2, 3, ...) so test output is byte-stable.

use serde::{Deserialize, Serialize};

pub type Timestamp = i64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Wall,
    Logical,
}

impl ClockMode {
    /// Next commit timestamp, strictly greater than `last` (0 when none).
    pub fn next(self, last: Timestamp) -> Timestamp {
        match self {
            ClockMode::Logical => last + 1,
            ClockMode::Wall => {
                let now = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs() as i64)
                    .unwrap_or(0);
                now.max(last + 1)
            }
        }
    }
}
