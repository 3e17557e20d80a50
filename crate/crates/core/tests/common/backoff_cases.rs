//! Exhaustive check of the backoff update against integer arithmetic.

use std::time::Duration;

use learned_cc::backoff::{adjust, bucket, BackoffState};
use learned_cc::policy::{AbortBucket, Alpha, AlphaSet, BackoffPolicyTable, Outcome, WorkloadSchema};
use num_rational::Ratio;

const FLOOR: Duration = Duration::from_micros(10);
const CEILING: Duration = Duration::from_millis(100);

/// Starting backoffs: both bounds, values that clamp either way, and
/// values whose scaled result is not a whole picosecond.
fn starts() -> Vec<Duration> {
    [10_000, 10_001, 13_717, 25_000, 100_000, 333_333, 1_000_000, 7_777_777, 30_000_000, 49_999_999, 60_000_000, 100_000_000]
        .into_iter()
        .map(Duration::from_nanos)
        .collect()
}

/// `start · (d+n)/d` on abort or `start · d/(d+n)` on commit, clamped, then
/// rounded half-up to a picosecond.
fn expected_ps(start_ps: u128, alpha: Alpha, outcome: Outcome) -> u128 {
    let (n, d) = (*alpha.0.numer() as u128, *alpha.0.denom() as u128);
    let (num, den) = match outcome {
        Outcome::Aborted => (start_ps * (d + n), d),
        Outcome::Committed => (start_ps * d, d + n),
    };
    let floor = FLOOR.as_nanos() * 1000;
    let ceiling = CEILING.as_nanos() * 1000;
    if num < floor * den {
        floor
    } else if num > ceiling * den {
        ceiling
    } else {
        (2 * num + den) / (2 * den)
    }
}

/// Runs every (type, α, outcome, bucket, start) combination; returns the
/// number of cases checked and a description of each mismatch.
pub fn run(schema: &WorkloadSchema) -> (usize, Vec<String>) {
    // Entries not under test get an α outside the admissible set, so a wrong
    // lookup cannot go unnoticed.
    let decoy = Alpha::new(3, 7);
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for (k, want) in [(0, AbortBucket::Zero), (1, AbortBucket::One), (2, AbortBucket::TwoPlus), (3, AbortBucket::TwoPlus), (1000, AbortBucket::TwoPlus)] {
        if bucket(k) != want {
            mismatches.push(format!("bucket({k}) = {:?}, want {want:?}", bucket(k)));
        }
    }
    let alphas = AlphaSet::default();
    for t in 0..schema.type_count() {
        for &alpha in alphas.values() {
            for outcome in Outcome::ALL {
                for b in AbortBucket::ALL {
                    let mut table = BackoffPolicyTable::uniform(schema, decoy);
                    table.entries.insert((t, b, outcome), alpha);
                    for start in starts() {
                        checked += 1;
                        let start_ps = start.as_nanos() * 1000;
                        let (n, d) = (*alpha.0.numer() as u128, *alpha.0.denom() as u128);
                        let exact = adjust(Ratio::from_integer(start_ps), alpha, outcome);
                        let (en, ed) = match outcome {
                            Outcome::Aborted => (start_ps * (d + n), d),
                            Outcome::Committed => (start_ps * d, d + n),
                        };
                        if *exact.numer() * ed != en * *exact.denom() {
                            mismatches.push(format!("adjust t={t} α={alpha} {outcome} {start:?}: {exact}"));
                        }
                        let mut state = BackoffState::with_bounds(schema.type_count(), FLOOR, CEILING);
                        state.set_current(t, start);
                        state.on_outcome(t, b, outcome, &table);
                        let got = state.current_ps(t);
                        let want = expected_ps(start_ps, alpha, outcome);
                        if got != want {
                            mismatches.push(format!("t={t} bucket={b} α={alpha} {outcome} {start:?}: got {got} ps, want {want} ps"));
                        }
                        // Other types are untouched.
                        let other = (t + 1) % schema.type_count();
                        if other != t && state.current_ps(other) != FLOOR.as_nanos() * 1000 {
                            mismatches.push(format!("t={t}: type {other} changed"));
                        }
                    }
                }
            }
        }
    }
    (checked, mismatches)
}
