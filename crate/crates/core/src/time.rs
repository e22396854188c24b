//! Integer-nanosecond simulation time.
//!
//! All simulated quantities (guard intervals, RTTs, burst durations, agent
//! intervals) are held as whole nanoseconds so multi-second runs never
//! accumulate floating-point drift. Sub-nanosecond transmission times round
//! up, which keeps guard spacing conservative.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// A point in simulated time (or a span), in nanoseconds since run start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    /// Integer division rounding toward zero, e.g. for window bucketing.
    pub fn div_nanos(self, denom: u64) -> u64 {
        self.0 / denom
    }
}

/// Time to serialize `bytes` at `bits_per_sec`, rounded up to whole
/// nanoseconds. Rounding up is conservative: spacing derived from it can
/// never undercut a guard interval.
pub fn transmission_time(bytes: u64, bits_per_sec: u64) -> SimTime {
    assert!(bits_per_sec > 0, "zero line rate");
    let bits = bytes as u128 * 8;
    let ns = (bits * 1_000_000_000).div_ceil(bits_per_sec as u128);
    SimTime::from_nanos(ns as u64)
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}
