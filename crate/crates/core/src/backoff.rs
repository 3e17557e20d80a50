//! Learned multiplicative backoff.
//!
//! On abort the current backoff of a transaction type grows by `1 + α`, on
//! commit it shrinks by the same kind of factor, with α looked up by
//! `(type, prior-abort bucket, outcome)`. The result is clamped to
//! `[floor, ceiling]`.

use std::time::{Duration, Instant};

use num_rational::Ratio;

use crate::policy::{AbortBucket, Alpha, BackoffPolicyTable, Outcome};

pub const DEFAULT_FLOOR: Duration = Duration::from_micros(10);
pub const DEFAULT_CEILING: Duration = Duration::from_millis(100);

const PS_PER_NS: u128 = 1_000;

pub fn bucket(prior_aborts: u32) -> AbortBucket {
    match prior_aborts {
        0 => AbortBucket::Zero,
        1 => AbortBucket::One,
        _ => AbortBucket::TwoPlus,
    }
}

/// Exact, unclamped update rule.
pub fn adjust(backoff: Ratio<u128>, alpha: Alpha, outcome: Outcome) -> Ratio<u128> {
    assert!(!alpha.is_negative(), "α must be ≥ 0");
    let a = alpha.0;
    let factor = Ratio::new(
        (*a.denom() + *a.numer()) as u128,
        *a.denom() as u128,
    );
    match outcome {
        Outcome::Aborted => backoff * factor,
        Outcome::Committed => backoff / factor,
    }
}

pub fn clamp(value: Ratio<u128>, floor: Ratio<u128>, ceiling: Ratio<u128>) -> Ratio<u128> {
    if value < floor {
        floor
    } else if value > ceiling {
        ceiling
    } else {
        value
    }
}

/// Per-worker backoff state, one current value per transaction type.
///
/// Values are held in whole picoseconds; each update is computed exactly
/// and then rounded to the nearest picosecond.
#[derive(Debug, Clone)]
pub struct BackoffState {
    current_ps: Vec<u128>,
    floor_ps: u128,
    ceiling_ps: u128,
}

impl BackoffState {
    pub fn new(type_count: usize) -> Self {
        Self::with_bounds(type_count, DEFAULT_FLOOR, DEFAULT_CEILING)
    }

    pub fn with_bounds(type_count: usize, floor: Duration, ceiling: Duration) -> Self {
        assert!(floor <= ceiling, "backoff floor exceeds ceiling");
        let floor_ps = floor.as_nanos() * PS_PER_NS;
        Self {
            current_ps: vec![floor_ps; type_count],
            floor_ps,
            ceiling_ps: ceiling.as_nanos() * PS_PER_NS,
        }
    }

    pub fn current(&self, type_index: usize) -> Duration {
        Duration::from_nanos((self.current_ps[type_index] / PS_PER_NS) as u64)
    }

    pub fn current_ps(&self, type_index: usize) -> u128 {
        self.current_ps[type_index]
    }

    pub fn set_current(&mut self, type_index: usize, value: Duration) {
        let ps = value.as_nanos() * PS_PER_NS;
        self.current_ps[type_index] = ps.clamp(self.floor_ps, self.ceiling_ps);
    }

    pub fn floor(&self) -> Duration {
        Duration::from_nanos((self.floor_ps / PS_PER_NS) as u64)
    }

    pub fn ceiling(&self) -> Duration {
        Duration::from_nanos((self.ceiling_ps / PS_PER_NS) as u64)
    }

    pub fn reset(&mut self) {
        for c in &mut self.current_ps {
            *c = self.floor_ps;
        }
    }

    pub fn on_outcome(
        &mut self,
        type_index: usize,
        prior_aborts_bucket: AbortBucket,
        outcome: Outcome,
        table: &BackoffPolicyTable,
    ) -> Duration {
        let alpha = table.alpha(type_index, prior_aborts_bucket, outcome);
        let next = adjust(Ratio::from_integer(self.current_ps[type_index]), alpha, outcome);
        let clamped = clamp(
            next,
            Ratio::from_integer(self.floor_ps),
            Ratio::from_integer(self.ceiling_ps),
        );
        self.current_ps[type_index] = clamped.round().to_integer();
        self.current(type_index)
    }
}

/// Waits for `d`: spins (yielding) below one millisecond, sleeps above.
pub fn pause(d: Duration) {
    if d >= Duration::from_millis(1) {
        std::thread::sleep(d);
        return;
    }
    let start = Instant::now();
    while start.elapsed() < d {
        std::thread::yield_now();
    }
}

/// Binary exponential backoff, kept as a comparison baseline for tests.
#[derive(Debug, Clone)]
pub struct ExponentialBackoff {
    current: Duration,
    floor: Duration,
    ceiling: Duration,
}

impl ExponentialBackoff {
    pub fn new(floor: Duration, ceiling: Duration) -> Self {
        Self { current: floor, floor, ceiling }
    }

    pub fn current(&self) -> Duration {
        self.current
    }

    pub fn on_outcome(&mut self, outcome: Outcome) -> Duration {
        self.current = match outcome {
            Outcome::Aborted => (self.current * 2).min(self.ceiling),
            Outcome::Committed => self.floor,
        };
        self.current
    }
}
