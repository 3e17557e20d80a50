//! Policy-driven transaction execution.
//!
//! A [`Txn`] is a resumable state machine: every [`Txn::poll`] performs at
//! most one access (with its waits and optional early validation) or the
//! final commit, and returns [`Poll::Blocked`] instead of sleeping when a
//! wait is not yet satisfied. Threads drive it through [`Worker`]; the
//! deterministic [`sim`] scheduler drives many transactions on one thread.

mod log;
mod program;
pub mod sim;
mod txn;
mod worker;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use thiserror::Error;

pub use log::{CommitLog, CommitRecord, LogError, LoggedAccess, LOG_FORMAT};
pub use program::{read, write, Observed, Op, ScriptedProgram, TxnProgram};
pub use txn::{AbortReason, Poll, Txn, TxnView};
pub use worker::{TxnResult, Worker, WorkerStats};

use crate::policy::{
    validate_table_with, ActionRow, AlphaSet, BackoffPolicyTable, CcPolicyTable, Violation,
    WorkloadSchema,
};
use crate::store::Store;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    /// Longest a wait target is honoured before execution proceeds, in
    /// clock units.
    pub wait_timeout: u64,
    /// Longest the commit (and early validation) waits for dirty-read
    /// sources before aborting, in clock units.
    pub commit_wait_timeout: u64,
    /// Early-validation failures tolerated within one attempt before the
    /// attempt aborts.
    pub max_rollbacks: u32,
    /// Attempts per transaction before giving up; `None` retries forever.
    pub retry_cap: Option<u32>,
}

impl ExecConfig {
    /// Real-time defaults; clock units are nanoseconds.
    pub fn realtime() -> Self {
        Self {
            wait_timeout: Duration::from_millis(10).as_nanos() as u64,
            commit_wait_timeout: Duration::from_millis(10).as_nanos() as u64,
            max_rollbacks: 8,
            retry_cap: None,
        }
    }

    /// Defaults for the logical clock, where one unit is one scheduler tick.
    pub fn logical() -> Self {
        Self { wait_timeout: 400, commit_wait_timeout: 400, max_rollbacks: 8, retry_cap: None }
    }
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self::realtime()
    }
}

#[derive(Debug)]
pub enum Clock {
    Real(Instant),
    Logical(AtomicU64),
}

impl Clock {
    pub fn now(&self) -> u64 {
        match self {
            Clock::Real(start) => start.elapsed().as_nanos() as u64,
            Clock::Logical(t) => t.load(Ordering::Relaxed),
        }
    }

    pub fn tick(&self) {
        if let Clock::Logical(t) = self {
            t.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn is_logical(&self) -> bool {
        matches!(self, Clock::Logical(_))
    }
}

/// Both tables in lookup-friendly form.
#[derive(Debug, Clone)]
pub struct PolicySet {
    cc: CcPolicyTable,
    backoff: BackoffPolicyTable,
    rows: Vec<Vec<ActionRow>>,
}

impl PolicySet {
    pub fn new(
        schema: &WorkloadSchema,
        cc: CcPolicyTable,
        backoff: BackoffPolicyTable,
    ) -> Result<Self, Vec<Violation>> {
        Self::with_alphas(schema, cc, backoff, &AlphaSet::default())
    }

    pub fn with_alphas(
        schema: &WorkloadSchema,
        cc: CcPolicyTable,
        backoff: BackoffPolicyTable,
        alphas: &AlphaSet,
    ) -> Result<Self, Vec<Violation>> {
        validate_table_with(schema, &cc, &backoff, alphas)?;
        let rows = (0..schema.type_count())
            .map(|t| {
                (1..=schema.access_count(t))
                    .map(|a| cc.rows[&(t, a)].clone())
                    .collect()
            })
            .collect();
        Ok(Self { cc, backoff, rows })
    }

    pub fn row(&self, type_index: usize, access_id: u16) -> &ActionRow {
        &self.rows[type_index][access_id as usize - 1]
    }

    pub fn access_count(&self, type_index: usize) -> u16 {
        self.rows[type_index].len() as u16
    }

    pub fn cc(&self) -> &CcPolicyTable {
        &self.cc
    }

    pub fn backoff(&self) -> &BackoffPolicyTable {
        &self.backoff
    }
}

#[derive(Debug, Error)]
pub enum SwapError {
    #[error("policy schema `{found}` does not match engine schema `{expected}`")]
    SchemaMismatch { found: String, expected: String },
    #[error("invalid policy: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Shared engine state: store, current policy, id and timestamp counters.
#[derive(Debug)]
pub struct Engine {
    schema: WorkloadSchema,
    store: Arc<Store>,
    policy: RwLock<(u64, Arc<PolicySet>)>,
    next_attempt: AtomicU64,
    commit_ts: AtomicU64,
    clock: Clock,
    config: ExecConfig,
}

impl Engine {
    pub fn new(schema: WorkloadSchema, store: Arc<Store>, policy: PolicySet, config: ExecConfig) -> Self {
        Self::with_clock(schema, store, policy, config, Clock::Real(Instant::now()))
    }

    pub fn with_clock(
        schema: WorkloadSchema,
        store: Arc<Store>,
        policy: PolicySet,
        config: ExecConfig,
        clock: Clock,
    ) -> Self {
        Self {
            schema,
            store,
            policy: RwLock::new((0, Arc::new(policy))),
            next_attempt: AtomicU64::new(1),
            commit_ts: AtomicU64::new(0),
            clock,
            config,
        }
    }

    pub fn schema(&self) -> &WorkloadSchema {
        &self.schema
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn config(&self) -> &ExecConfig {
        &self.config
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    /// Current policy and its generation number.
    pub fn policy(&self) -> (u64, Arc<PolicySet>) {
        let p = self.policy.read();
        (p.0, p.1.clone())
    }

    /// Replaces the policy. Workers pick it up at their next attempt; no
    /// barrier is needed because final validation is policy independent.
    pub fn swap_policy(&self, cc: CcPolicyTable, backoff: BackoffPolicyTable) -> Result<(), SwapError> {
        if cc.schema_name != self.schema.name() {
            return Err(SwapError::SchemaMismatch {
                found: cc.schema_name,
                expected: self.schema.name().to_string(),
            });
        }
        let set = PolicySet::new(&self.schema, cc, backoff).map_err(SwapError::Invalid)?;
        let mut p = self.policy.write();
        *p = (p.0 + 1, Arc::new(set));
        Ok(())
    }

    pub(crate) fn allocate_attempt(&self) -> u64 {
        self.next_attempt.fetch_add(1, Ordering::Relaxed)
    }

    pub(crate) fn next_commit_ts(&self) -> u64 {
        self.commit_ts.fetch_add(1, Ordering::AcqRel) + 1
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    /// Starts a fresh attempt of `program` under the current policy.
    pub fn begin(&self, program: Arc<dyn TxnProgram>) -> Txn {
        let (_, policy) = self.policy();
        Txn::begin(self, program, policy)
    }
}
