//! Trickle timer driving DIO emission.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::time::{from_millis, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrickleConfig {
    pub i_min_ms: u64,
    pub doublings: u32,
    pub redundancy_k: u32,
}

impl Default for TrickleConfig {
    fn default() -> Self {
        TrickleConfig {
            i_min_ms: 4096,
            doublings: 8,
            redundancy_k: 10,
        }
    }
}

impl TrickleConfig {
    pub fn i_min(&self) -> SimTime {
        from_millis(self.i_min_ms)
    }

    pub fn i_max(&self) -> SimTime {
        self.i_min() << self.doublings
    }

    pub fn interval_min_log2(&self) -> u8 {
        (63 - self.i_min_ms.max(1).leading_zeros()) as u8
    }
}

/// A scheduled Trickle step. The engine arms both timers and hands them back
/// tagged with `generation`; mismatched generations are stale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrickleSchedule {
    pub generation: u64,
    pub fire_at: SimTime,
    pub interval_end: SimTime,
}

#[derive(Debug, Clone)]
pub struct TrickleState {
    pub config: TrickleConfig,
    pub current_interval: SimTime,
    pub interval_start: SimTime,
    pub t: SimTime,
    pub counter: u32,
    pub suppressed_count: u32,
    pub generation: u64,
    pub running: bool,
}

impl TrickleState {
    pub fn new(config: TrickleConfig) -> Self {
        TrickleState {
            current_interval: config.i_min(),
            config,
            interval_start: 0,
            t: 0,
            counter: 0,
            suppressed_count: 0,
            generation: 0,
            running: false,
        }
    }

    fn begin_interval<R: Rng>(&mut self, now: SimTime, interval: SimTime, rng: &mut R) -> TrickleSchedule {
        self.generation += 1;
        self.running = true;
        self.current_interval = interval;
        self.interval_start = now;
        self.counter = 0;
        let half = interval / 2;
        let offset = half + rng.gen_range(0..half.max(1));
        self.t = now + offset;
        TrickleSchedule {
            generation: self.generation,
            fire_at: self.t,
            interval_end: now + interval,
        }
    }

    /// Starts over at `i_min`.
    pub fn reset<R: Rng>(&mut self, now: SimTime, rng: &mut R) -> TrickleSchedule {
        let i_min = self.config.i_min();
        self.begin_interval(now, i_min, rng)
    }

    pub fn stop(&mut self) {
        self.generation += 1;
        self.running = false;
    }

    pub fn hear_consistent(&mut self) {
        self.counter += 1;
    }

    /// Resets unless already at the minimum interval.
    pub fn hear_inconsistent<R: Rng>(&mut self, now: SimTime, rng: &mut R) -> Option<TrickleSchedule> {
        if !self.running || self.current_interval > self.config.i_min() {
            Some(self.reset(now, rng))
        } else {
            None
        }
    }

    /// Called at `t`; true when the node should transmit.
    pub fn fire(&mut self, generation: u64) -> bool {
        if generation != self.generation || !self.running {
            return false;
        }
        if self.config.redundancy_k == 0 || self.counter < self.config.redundancy_k {
            true
        } else {
            self.suppressed_count += 1;
            false
        }
    }

    /// Called at the end of an interval: doubles up to `i_max`.
    pub fn interval_end<R: Rng>(&mut self, generation: u64, now: SimTime, rng: &mut R) -> Option<TrickleSchedule> {
        if generation != self.generation || !self.running {
            return None;
        }
        let next = (self.current_interval * 2).min(self.config.i_max());
        Some(self.begin_interval(now, next, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interval_doubles_then_saturates() {
        let cfg = TrickleConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tr = TrickleState::new(cfg);
        let mut s = tr.reset(0, &mut rng);
        let mut last = tr.current_interval;
        for _ in 0..12 {
            assert!(s.fire_at >= s.interval_end - tr.current_interval / 2 - 1);
            assert!(s.fire_at < s.interval_end);
            s = tr.interval_end(s.generation, s.interval_end, &mut rng).unwrap();
            assert!(tr.current_interval >= last);
            assert!(tr.current_interval <= cfg.i_max());
            last = tr.current_interval;
        }
        assert_eq!(tr.current_interval, cfg.i_max());
        assert_eq!(cfg.i_max(), 4096 * 256 * 1000);
    }

    #[test]
    fn redundancy_suppresses() {
        let cfg = TrickleConfig {
            redundancy_k: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tr = TrickleState::new(cfg);
        let s = tr.reset(0, &mut rng);
        tr.hear_consistent();
        tr.hear_consistent();
        assert!(!tr.fire(s.generation));
        assert_eq!(tr.suppressed_count, 1);
    }

    #[test]
    fn inconsistency_resets_to_imin() {
        let cfg = TrickleConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tr = TrickleState::new(cfg);
        let s = tr.reset(0, &mut rng);
        assert!(tr.hear_inconsistent(10, &mut rng).is_none());
        let s = tr.interval_end(s.generation, s.interval_end, &mut rng).unwrap();
        let r = tr.hear_inconsistent(s.interval_end - 1, &mut rng).unwrap();
        assert_eq!(tr.current_interval, cfg.i_min());
        assert!(!tr.fire(s.generation));
        assert!(tr.fire(r.generation));
    }

    #[test]
    fn imin_log2() {
        assert_eq!(TrickleConfig::default().interval_min_log2(), 12);
    }
}
