//! Deterministic single-thread scheduler.
//!
//! Logical workers share one engine whose clock counts scheduler ticks.
//! Every tick polls one runnable worker chosen by a seeded RNG, so a run is
//! a pure function of the seed, the policy and the input streams.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::CommitRecord;
use super::program::TxnProgram;
use super::txn::{Poll, Txn};
use super::worker::WorkerStats;
use super::Engine;
use crate::backoff::{bucket, BackoffState};
use crate::policy::Outcome;

pub type ProgramStream = Box<dyn Iterator<Item = Arc<dyn TxnProgram>>>;

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub ticks: u64,
    pub seed: u64,
    /// Backoff durations are converted to ticks at this rate.
    pub ns_per_tick: u64,
    pub keep_log: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { ticks: 20_000, seed: 0, ns_per_tick: 100, keep_log: false }
    }
}

struct SimWorker {
    programs: ProgramStream,
    current: Option<(Arc<dyn TxnProgram>, Txn)>,
    prior_aborts: u32,
    backoff: BackoffState,
    wake_at: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SimReport {
    pub ticks: u64,
    pub stats: WorkerStats,
    pub log: Vec<CommitRecord>,
}

impl SimReport {
    /// Commits per thousand ticks.
    pub fn throughput(&self) -> f64 {
        if self.ticks == 0 {
            return 0.0;
        }
        self.stats.total_commits() as f64 * 1000.0 / self.ticks as f64
    }
}

/// Runs `streams.len()` logical workers on `engine`, whose clock must be
/// logical.
pub fn run(engine: &Engine, streams: Vec<ProgramStream>, config: SimConfig) -> SimReport {
    assert!(engine.clock().is_logical(), "simulation needs a logical clock");
    let n_types = engine.schema().type_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut workers: Vec<SimWorker> = streams
        .into_iter()
        .map(|programs| SimWorker {
            programs,
            current: None,
            prior_aborts: 0,
            backoff: BackoffState::new(n_types),
            wake_at: 0,
        })
        .collect();
    let mut report = SimReport { stats: WorkerStats::new(n_types), ..Default::default() };
    let start = engine.now();
    let mut runnable: Vec<usize> = Vec::with_capacity(workers.len());
    while engine.now() - start < config.ticks {
        let now = engine.now();
        runnable.clear();
        runnable.extend((0..workers.len()).filter(|&i| workers[i].wake_at <= now));
        if runnable.is_empty() {
            match workers.iter().map(|w| w.wake_at).min() {
                Some(_) => {
                    engine.clock().tick();
                    continue;
                }
                None => break,
            }
        }
        let wi = runnable[rng.random_range(0..runnable.len())];
        let w = &mut workers[wi];
        if w.current.is_none() {
            let Some(p) = w.programs.next() else {
                w.wake_at = u64::MAX;
                engine.clock().tick();
                continue;
            };
            let txn = engine.begin(p.clone());
            w.current = Some((p, txn));
        }
        let (program, txn) = w.current.as_mut().expect("current transaction");
        let t = program.type_index();
        match txn.poll(engine) {
            Poll::Progress | Poll::Blocked => {}
            Poll::Committed(mut r) => {
                r.worker = wi as u32;
                let (_, policy) = engine.policy();
                w.backoff.on_outcome(t, bucket(w.prior_aborts), Outcome::Committed, policy.backoff());
                report.stats.commits[t] += 1;
                if config.keep_log {
                    report.log.push(r);
                }
                w.prior_aborts = 0;
                w.current = None;
            }
            Poll::Aborted(reason) => {
                let (_, policy) = engine.policy();
                let d = w.backoff.on_outcome(t, bucket(w.prior_aborts), Outcome::Aborted, policy.backoff());
                report.stats.count_abort(t, reason);
                w.prior_aborts += 1;
                let p = program.clone();
                w.current = Some((p.clone(), engine.begin(p)));
                w.wake_at = engine.now() + (d.as_nanos() as u64 / config.ns_per_tick.max(1));
            }
        }
        engine.clock().tick();
    }
    // Unfinished attempts must not stay visible to anyone inspecting the store.
    for w in &mut workers {
        if let Some((_, txn)) = w.current.as_mut() {
            txn.abandon(engine);
        }
    }
    report.ticks = engine.now() - start;
    report
}
