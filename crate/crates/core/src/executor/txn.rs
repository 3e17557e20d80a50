use std::collections::BTreeMap;
use std::sync::Arc;

use super::log::{CommitRecord, LoggedAccess};
use super::program::{Observed, Op, TxnProgram};
use super::{Engine, PolicySet};
use crate::policy::{ReadVersion, WaitTarget, WriteVisibility};
use crate::store::{AccessEntry, Record, TableId, TxnHandle, TxnStatus, Value, VersionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// A dirty-read source aborted, or never finished, before commit.
    DependencyAborted,
    /// Final read validation failed.
    Validation,
    /// Too many early-validation failures within one attempt.
    RollbackLimit,
}

#[derive(Debug)]
pub enum Poll {
    /// One access (or a rollback) completed; call again.
    Progress,
    /// Waiting on another transaction; nothing changed.
    Blocked,
    Committed(CommitRecord),
    Aborted(AbortReason),
}

#[derive(Debug, Clone)]
struct ReadEntry {
    op: usize,
    record: Arc<Record>,
    vid: VersionId,
    /// Writer of a dirty value.
    source: Option<Arc<TxnHandle>>,
}

#[derive(Debug, Clone)]
struct WriteEntry {
    op: usize,
    record: Arc<Record>,
    value: Option<Value>,
    published: Option<VersionId>,
}

#[derive(Debug, Clone)]
struct Dep {
    handle: Arc<TxnHandle>,
    /// History length when the dependency was recorded; rollback to a
    /// checkpoint at or below it forgets the dependency.
    origin: usize,
    dirty: bool,
}

#[derive(Debug, Clone)]
enum Phase {
    Next,
    PreAccess { op: Op, since: u64 },
    PreValidate { access_id: u16, since: u64 },
    DirtyWait { since: u64 },
    Commit { since: u64 },
    Finished,
}

enum WaitState {
    Ready,
    Pending,
    DepAborted,
}

/// One attempt of one transaction.
#[derive(Debug)]
pub struct Txn {
    handle: Arc<TxnHandle>,
    program: Arc<dyn TxnProgram>,
    policy: Arc<PolicySet>,
    history: Vec<Observed>,
    rset: Vec<ReadEntry>,
    wset: Vec<WriteEntry>,
    deps: Vec<Dep>,
    checkpoint: usize,
    publish_seq: u32,
    rollbacks: u32,
    max_rollbacks: u32,
    phase: Phase,
}

/// Read-only snapshot of a transaction's bookkeeping, for tests and
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnView {
    pub attempt: u64,
    pub cursor: usize,
    pub checkpoint: usize,
    pub read_vids: Vec<VersionId>,
    pub write_count: usize,
    pub deps: Vec<u64>,
    pub dirty_sources: Vec<u64>,
    pub rollbacks: u32,
}

impl Txn {
    pub(super) fn begin(engine: &Engine, program: Arc<dyn TxnProgram>, policy: Arc<PolicySet>) -> Self {
        let handle = TxnHandle::new(engine.allocate_attempt(), program.type_index());
        Self {
            handle,
            program,
            policy,
            history: Vec::new(),
            rset: Vec::new(),
            wset: Vec::new(),
            deps: Vec::new(),
            checkpoint: 0,
            publish_seq: 0,
            rollbacks: 0,
            max_rollbacks: engine.config().max_rollbacks,
            phase: Phase::Next,
        }
    }

    pub fn handle(&self) -> &Arc<TxnHandle> {
        &self.handle
    }

    pub fn attempt(&self) -> u64 {
        self.handle.attempt()
    }

    pub fn type_index(&self) -> usize {
        self.program.type_index()
    }

    pub fn history(&self) -> &[Observed] {
        &self.history
    }

    pub fn view(&self) -> TxnView {
        TxnView {
            attempt: self.attempt(),
            cursor: self.history.len(),
            checkpoint: self.checkpoint,
            read_vids: self.rset.iter().map(|r| r.vid).collect(),
            write_count: self.wset.len(),
            deps: self.deps.iter().map(|d| d.handle.attempt()).collect(),
            dirty_sources: self
                .rset
                .iter()
                .filter_map(|r| r.source.as_ref().map(|s| s.attempt()))
                .collect(),
            rollbacks: self.rollbacks,
        }
    }

    /// True once the program has issued all of its ops.
    pub fn is_committing(&self) -> bool {
        matches!(self.phase, Phase::Commit { .. })
    }

    pub fn poll(&mut self, engine: &Engine) -> Poll {
        loop {
            match std::mem::replace(&mut self.phase, Phase::Finished) {
                Phase::Finished => panic!("poll on a finished transaction"),
                Phase::Next => match self.program.next_op(&self.history) {
                    None => self.phase = Phase::Commit { since: engine.now() },
                    Some(Op::ScanFirst { table, from, to }) => {
                        let found = engine
                            .store()
                            .scan_first_committed(table, &from, &to)
                            .expect("program scans a known table");
                        self.history.push(Observed::Scanned(found));
                        self.phase = Phase::Next;
                    }
                    Some(op) => self.phase = Phase::PreAccess { op, since: engine.now() },
                },
                Phase::PreAccess { op, since } => {
                    let access_id = op.access_id().expect("policy-governed op");
                    let policy = Arc::clone(&self.policy);
                    let row = policy.row(self.type_index(), access_id);
                    match self.check_waits(&row.wait_targets) {
                        WaitState::DepAborted => return self.rollback(),
                        WaitState::Pending if engine.now().saturating_sub(since) < engine.config().wait_timeout => {
                            self.phase = Phase::PreAccess { op, since };
                            return Poll::Blocked;
                        }
                        _ => {}
                    }
                    let validate = match op {
                        Op::Read { table, key, .. } => {
                            let dirty = row.read_version == ReadVersion::DirtyRead;
                            let early = row.early_validate;
                            self.do_read(engine, table, &key, dirty);
                            early
                        }
                        Op::Write { table, key, value, .. } => {
                            let public = row.write_visibility == WriteVisibility::Public;
                            self.do_write(engine, table, &key, value);
                            public
                        }
                        Op::ScanFirst { .. } => unreachable!(),
                    };
                    self.handle.advance_progress(access_id as u32);
                    if validate {
                        self.phase = Phase::PreValidate { access_id, since: engine.now() };
                    } else {
                        self.phase = Phase::Next;
                        return Poll::Progress;
                    }
                }
                Phase::PreValidate { access_id, since } => {
                    let t = self.type_index();
                    if access_id < self.policy.access_count(t) {
                        let targets = self.policy.row(t, access_id + 1).wait_targets.clone();
                        match self.check_waits(&targets) {
                            WaitState::DepAborted => return self.rollback(),
                            WaitState::Pending if engine.now().saturating_sub(since) < engine.config().wait_timeout => {
                                self.phase = Phase::PreValidate { access_id, since };
                                return Poll::Blocked;
                            }
                            _ => {}
                        }
                    }
                    self.phase = Phase::DirtyWait { since: engine.now() };
                }
                Phase::DirtyWait { since } => {
                    match self.dirty_sources_state(self.checkpoint) {
                        WaitState::DepAborted => return self.rollback(),
                        WaitState::Pending => {
                            if engine.now().saturating_sub(since) < engine.config().commit_wait_timeout {
                                self.phase = Phase::DirtyWait { since };
                                return Poll::Blocked;
                            }
                            return self.rollback();
                        }
                        WaitState::Ready => {}
                    }
                    if !self.validate_reads(self.checkpoint) {
                        return self.rollback();
                    }
                    self.publish_segment(engine);
                    self.phase = Phase::Next;
                    return Poll::Progress;
                }
                Phase::Commit { since } => {
                    self.handle.set_status(TxnStatus::Validating);
                    match self.dirty_sources_state(0) {
                        WaitState::DepAborted => return self.abort(engine, &[], AbortReason::DependencyAborted),
                        WaitState::Pending => {
                            if engine.now().saturating_sub(since) < engine.config().commit_wait_timeout {
                                self.phase = Phase::Commit { since };
                                return Poll::Blocked;
                            }
                            return self.abort(engine, &[], AbortReason::DependencyAborted);
                        }
                        WaitState::Ready => {}
                    }
                    return self.final_commit(engine);
                }
            }
        }
    }

    fn add_dep(&mut self, handle: Arc<TxnHandle>, origin: usize, dirty: bool) {
        if handle.attempt() == self.attempt() {
            return;
        }
        if let Some(d) = self.deps.iter_mut().find(|d| d.handle.attempt() == handle.attempt()) {
            if dirty && !d.dirty {
                d.dirty = true;
                d.origin = origin;
            }
            return;
        }
        self.deps.push(Dep { handle, origin, dirty });
    }

    fn check_waits(&self, targets: &[WaitTarget]) -> WaitState {
        let mut pending = false;
        for d in &self.deps {
            let status = d.handle.status();
            if d.dirty && status == TxnStatus::Aborted {
                return WaitState::DepAborted;
            }
            if status.is_finished() {
                continue;
            }
            let ok = match targets.get(d.handle.type_index()).copied().unwrap_or(WaitTarget::NoWait) {
                WaitTarget::NoWait => true,
                WaitTarget::Access(a) => d.handle.progress() >= a as u32,
                WaitTarget::Commit => false,
            };
            pending |= !ok;
        }
        if pending {
            WaitState::Pending
        } else {
            WaitState::Ready
        }
    }

    /// State of the writers of dirty values read at or after op `from`.
    fn dirty_sources_state(&self, from: usize) -> WaitState {
        let mut pending = false;
        for r in self.rset.iter().filter(|r| r.op >= from) {
            if let Some(src) = &r.source {
                match src.status() {
                    TxnStatus::Aborted => return WaitState::DepAborted,
                    TxnStatus::Committed => {}
                    _ => pending = true,
                }
            }
        }
        if pending {
            WaitState::Pending
        } else {
            WaitState::Ready
        }
    }

    fn own_write(&self, table: TableId, key: &[u8]) -> Option<&WriteEntry> {
        self.wset
            .iter()
            .rev()
            .find(|w| w.record.table() == table && w.record.key() == key)
    }

    fn do_read(&mut self, engine: &Engine, table: TableId, key: &[u8], dirty: bool) {
        let op = self.history.len();
        if let Some(w) = self.own_write(table, key) {
            let v = w.value.clone();
            self.history.push(Observed::Value(v));
            return;
        }
        let record = engine
            .store()
            .lookup_or_insert(table, key)
            .expect("program accesses a known table");
        let me = self.attempt();
        let dirty_entry = if dirty {
            record
                .find_last_visible_write()
                .filter(|e| e.owner.attempt() != me && !e.owner.status().is_finished())
        } else {
            None
        };
        let (value, vid, source) = match dirty_entry {
            Some(e) => (e.value, e.vid, Some(e.owner)),
            None => {
                let (v, vid) = record.read_committed();
                (v, vid, None)
            }
        };
        if let Some(src) = &source {
            self.add_dep(src.clone(), op, true);
        }
        self.rset.push(ReadEntry { op, record, vid, source });
        self.history.push(Observed::Value(value));
    }

    fn do_write(&mut self, engine: &Engine, table: TableId, key: &[u8], value: Option<Value>) {
        let op = self.history.len();
        let record = engine
            .store()
            .lookup_or_insert(table, key)
            .expect("program accesses a known table");
        self.wset.push(WriteEntry { op, record, value, published: None });
        self.history.push(Observed::Written);
    }

    fn validate_reads(&self, from: usize) -> bool {
        let me = self.attempt();
        self.rset
            .iter()
            .filter(|r| r.op >= from)
            .all(|r| r.record.committed_vid() == r.vid && !r.record.latched_by_other(me))
    }

    /// Appends the validated segment to the access lists and advances the
    /// checkpoint.
    fn publish_segment(&mut self, engine: &Engine) {
        let from = self.checkpoint;
        let mut entries: Vec<(usize, Arc<Record>, AccessEntry)> = Vec::new();
        for r in self.rset.iter().filter(|r| r.op >= from) {
            entries.push((r.op, r.record.clone(), AccessEntry::read(self.handle.clone(), r.vid)));
        }
        for w in self.wset.iter_mut().filter(|w| w.op >= from) {
            self.publish_seq += 1;
            let vid = VersionId::new(self.handle.attempt(), self.publish_seq);
            w.published = Some(vid);
            entries.push((w.op, w.record.clone(), AccessEntry::write(self.handle.clone(), w.value.clone(), vid)));
        }
        entries.sort_by_key(|(op, _, _)| *op);
        let preceding = engine
            .store()
            .append_entries(entries.into_iter().map(|(_, r, e)| (r, e)).collect());
        for h in preceding {
            self.add_dep(h, from, false);
        }
        self.checkpoint = self.history.len();
    }

    fn rollback(&mut self) -> Poll {
        let cp = self.checkpoint;
        self.history.truncate(cp);
        self.rset.retain(|r| r.op < cp);
        self.wset.retain(|w| w.op < cp);
        self.deps.retain(|d| d.origin < cp);
        self.rollbacks += 1;
        self.phase = Phase::Next;
        if self.rollbacks > self.max_rollbacks {
            self.handle.set_status(TxnStatus::Aborted);
            self.phase = Phase::Finished;
            return Poll::Aborted(AbortReason::RollbackLimit);
        }
        Poll::Progress
    }

    fn abort(&mut self, engine: &Engine, latched: &[Arc<Record>], reason: AbortReason) -> Poll {
        for r in latched {
            r.unlatch(self.attempt());
        }
        engine.store().mark_aborted(&self.handle);
        self.phase = Phase::Finished;
        Poll::Aborted(reason)
    }

    fn final_commit(&mut self, engine: &Engine) -> Poll {
        let me = self.attempt();
        // Latest write per record, in global (table, key) order.
        let mut writes: BTreeMap<(TableId, Vec<u8>), &WriteEntry> = BTreeMap::new();
        for w in &self.wset {
            writes.insert((w.record.table(), w.record.key().to_vec()), w);
        }
        let mut latched: Vec<Arc<Record>> = Vec::with_capacity(writes.len());
        for w in writes.values() {
            w.record.latch(me);
            latched.push(w.record.clone());
        }
        let ts = engine.next_commit_ts();
        let ok = self
            .rset
            .iter()
            .all(|r| r.record.committed_vid() == r.vid && !r.record.latched_by_other(me));
        if !ok {
            return self.abort(engine, &latched, AbortReason::Validation);
        }
        let mut logged_writes = Vec::with_capacity(writes.len());
        for ((table, key), w) in &writes {
            let vid = w.published.unwrap_or(VersionId::new(me, 0));
            engine.store().install_committed(&w.record, w.value.clone(), vid, me);
            logged_writes.push(LoggedAccess { table: *table, key: key.clone(), vid });
        }
        for r in &latched {
            r.unlatch(me);
        }
        self.handle.set_status(TxnStatus::Committed);
        self.phase = Phase::Finished;
        Poll::Committed(CommitRecord {
            attempt: me,
            txn_type: self.type_index(),
            ts,
            worker: 0,
            reads: self
                .rset
                .iter()
                .map(|r| LoggedAccess { table: r.record.table(), key: r.record.key().to_vec(), vid: r.vid })
                .collect(),
            writes: logged_writes,
        })
    }

    /// Gives up on this attempt without committing.
    pub fn abandon(&mut self, engine: &Engine) {
        if !matches!(self.phase, Phase::Finished) {
            self.abort(engine, &[], AbortReason::Validation);
        }
    }
}
