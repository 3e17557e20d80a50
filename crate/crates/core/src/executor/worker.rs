use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::log::CommitRecord;
use super::program::TxnProgram;
use super::txn::{AbortReason, Poll};
use super::Engine;
use crate::backoff::{bucket, pause, BackoffState};
use crate::policy::Outcome;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub commits: Vec<u64>,
    pub aborts: Vec<u64>,
    pub dependency_aborts: u64,
    pub validation_aborts: u64,
    pub rollback_limit_aborts: u64,
}

impl WorkerStats {
    pub fn new(type_count: usize) -> Self {
        Self { commits: vec![0; type_count], aborts: vec![0; type_count], ..Default::default() }
    }

    pub fn total_commits(&self) -> u64 {
        self.commits.iter().sum()
    }

    pub fn total_aborts(&self) -> u64 {
        self.aborts.iter().sum()
    }

    pub fn merge(&mut self, other: &WorkerStats) {
        for (a, b) in self.commits.iter_mut().zip(&other.commits) {
            *a += b;
        }
        for (a, b) in self.aborts.iter_mut().zip(&other.aborts) {
            *a += b;
        }
        self.dependency_aborts += other.dependency_aborts;
        self.validation_aborts += other.validation_aborts;
        self.rollback_limit_aborts += other.rollback_limit_aborts;
    }

    pub fn count_abort(&mut self, type_index: usize, reason: AbortReason) {
        self.aborts[type_index] += 1;
        match reason {
            AbortReason::DependencyAborted => self.dependency_aborts += 1,
            AbortReason::Validation => self.validation_aborts += 1,
            AbortReason::RollbackLimit => self.rollback_limit_aborts += 1,
        }
    }
}

#[derive(Debug)]
pub enum TxnResult {
    Committed { record: CommitRecord, attempts: u32 },
    /// Retry cap reached, or the run was stopped mid-transaction.
    GaveUp { attempts: u32 },
}

impl TxnResult {
    pub fn committed(&self) -> Option<&CommitRecord> {
        match self {
            TxnResult::Committed { record, .. } => Some(record),
            TxnResult::GaveUp { .. } => None,
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            TxnResult::Committed { attempts, .. } | TxnResult::GaveUp { attempts } => *attempts,
        }
    }
}

/// Runs transactions one at a time on the calling thread, retrying aborted
/// ones with learned backoff until they commit.
#[derive(Debug)]
pub struct Worker<'e> {
    engine: &'e Engine,
    id: u32,
    backoff: BackoffState,
    generation: u64,
    pub stats: WorkerStats,
}

impl<'e> Worker<'e> {
    pub fn new(engine: &'e Engine, id: u32) -> Self {
        let n = engine.schema().type_count();
        Self {
            engine,
            id,
            backoff: BackoffState::new(n),
            generation: engine.policy().0,
            stats: WorkerStats::new(n),
        }
    }

    pub fn backoff(&self) -> &BackoffState {
        &self.backoff
    }

    pub fn run_transaction(&mut self, program: Arc<dyn TxnProgram>, stop: Option<&AtomicBool>) -> TxnResult {
        let engine = self.engine;
        let t = program.type_index();
        let mut prior_aborts = 0u32;
        let stopped = || stop.is_some_and(|s| s.load(Ordering::Relaxed));
        loop {
            let (generation, policy) = engine.policy();
            if generation != self.generation {
                // Backoff learned under the old policy does not carry over.
                self.backoff.reset();
                self.generation = generation;
            }
            let mut txn = super::Txn::begin(engine, program.clone(), policy.clone());
            let outcome = loop {
                match txn.poll(engine) {
                    Poll::Progress => {}
                    Poll::Blocked => {
                        if stopped() {
                            txn.abandon(engine);
                            return TxnResult::GaveUp { attempts: prior_aborts + 1 };
                        }
                        std::thread::yield_now();
                    }
                    Poll::Committed(r) => break Ok(r),
                    Poll::Aborted(reason) => break Err(reason),
                }
            };
            let b = bucket(prior_aborts);
            match outcome {
                Ok(mut record) => {
                    record.worker = self.id;
                    self.backoff.on_outcome(t, b, Outcome::Committed, policy.backoff());
                    self.stats.commits[t] += 1;
                    return TxnResult::Committed { record, attempts: prior_aborts + 1 };
                }
                Err(reason) => {
                    self.stats.count_abort(t, reason);
                    let wait = self.backoff.on_outcome(t, b, Outcome::Aborted, policy.backoff());
                    prior_aborts += 1;
                    if engine.config().retry_cap.is_some_and(|cap| prior_aborts >= cap) || stopped() {
                        return TxnResult::GaveUp { attempts: prior_aborts };
                    }
                    pause(wait);
                }
            }
        }
    }
}
