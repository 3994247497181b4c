//! Simulated time in integer microseconds.

pub type SimTime = u64;

pub const MICROS_PER_MS: u64 = 1_000;
pub const MICROS_PER_SEC: u64 = 1_000_000;

pub fn from_secs(s: f64) -> SimTime {
    (s * MICROS_PER_SEC as f64).round().max(0.0) as SimTime
}

pub fn from_millis(ms: u64) -> SimTime {
    ms * MICROS_PER_MS
}

pub fn to_secs(t: SimTime) -> f64 {
    t as f64 / MICROS_PER_SEC as f64
}
