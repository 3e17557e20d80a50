//! Single-version in-memory storage.
//!
//! Each record holds its latest committed value and version-id, a latch
//! word naming the attempt that holds it, and an access list of published
//! uncommitted writes and validated reads used for dependency tracking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Bound;
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Key = Vec<u8>;
pub type Value = Arc<[u8]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableId(pub u32);

/// Identifies one version of one record. `seqno == 0` is the committed
/// install of an attempt's write that was never published; published
/// versions carry `seqno >= 1`. The initial (loaded or absent) version of
/// every record is [`VersionId::INITIAL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionId {
    pub attempt: u64,
    pub seqno: u32,
}

impl VersionId {
    pub const INITIAL: VersionId = VersionId { attempt: 0, seqno: 0 };

    pub fn new(attempt: u64, seqno: u32) -> Self {
        Self { attempt, seqno }
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.attempt, self.seqno)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TxnStatus {
    Running = 0,
    Validating = 1,
    Committed = 2,
    Aborted = 3,
}

impl TxnStatus {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => TxnStatus::Running,
            1 => TxnStatus::Validating,
            2 => TxnStatus::Committed,
            _ => TxnStatus::Aborted,
        }
    }

    pub fn is_finished(self) -> bool {
        matches!(self, TxnStatus::Committed | TxnStatus::Aborted)
    }
}

/// Shared status of one transaction attempt: written by its owner, read by
/// transactions that depend on it.
#[derive(Debug)]
pub struct TxnHandle {
    attempt: u64,
    type_index: usize,
    progress: AtomicU32,
    status: AtomicU8,
}

impl TxnHandle {
    pub fn new(attempt: u64, type_index: usize) -> Arc<Self> {
        Arc::new(Self {
            attempt,
            type_index,
            progress: AtomicU32::new(0),
            status: AtomicU8::new(TxnStatus::Running as u8),
        })
    }

    pub fn attempt(&self) -> u64 {
        self.attempt
    }

    pub fn type_index(&self) -> usize {
        self.type_index
    }

    /// Last completed access-id. Never decreases.
    pub fn progress(&self) -> u32 {
        self.progress.load(Ordering::Acquire)
    }

    pub fn advance_progress(&self, access_id: u32) {
        self.progress.fetch_max(access_id, Ordering::AcqRel);
    }

    pub fn status(&self) -> TxnStatus {
        TxnStatus::from_u8(self.status.load(Ordering::Acquire))
    }

    pub fn set_status(&self, s: TxnStatus) {
        self.status.store(s as u8, Ordering::Release);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryState {
    Live,
    Committed,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct AccessEntry {
    pub owner: Arc<TxnHandle>,
    pub kind: EntryKind,
    /// Written value (`None` deletes); unused for reads.
    pub value: Option<Value>,
    /// Published version-id of a write; the version read for a read.
    pub vid: VersionId,
}

impl AccessEntry {
    pub fn read(owner: Arc<TxnHandle>, vid: VersionId) -> Self {
        Self { owner, kind: EntryKind::Read, value: None, vid }
    }

    pub fn write(owner: Arc<TxnHandle>, value: Option<Value>, vid: VersionId) -> Self {
        debug_assert!(vid.seqno >= 1, "published writes carry seqno >= 1");
        Self { owner, kind: EntryKind::Write, value, vid }
    }

    pub fn state(&self) -> EntryState {
        match self.owner.status() {
            TxnStatus::Committed => EntryState::Committed,
            TxnStatus::Aborted => EntryState::Aborted,
            _ => EntryState::Live,
        }
    }
}

#[derive(Debug, Clone)]
struct Committed {
    value: Option<Value>,
    vid: VersionId,
}

#[derive(Debug)]
pub struct Record {
    table: TableId,
    key: Key,
    committed: RwLock<Committed>,
    latch: AtomicU64,
    access_list: Mutex<Vec<AccessEntry>>,
}

impl Record {
    fn new(table: TableId, key: Key, value: Option<Value>) -> Self {
        Self {
            table,
            key,
            committed: RwLock::new(Committed { value, vid: VersionId::INITIAL }),
            latch: AtomicU64::new(0),
            access_list: Mutex::new(Vec::new()),
        }
    }

    pub fn table(&self) -> TableId {
        self.table
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    /// The committed `(value, vid)` pair, always one that was installed
    /// together.
    pub fn read_committed(&self) -> (Option<Value>, VersionId) {
        let c = self.committed.read();
        (c.value.clone(), c.vid)
    }

    pub fn committed_vid(&self) -> VersionId {
        self.committed.read().vid
    }

    pub fn committed_value(&self) -> Option<Value> {
        self.committed.read().value.clone()
    }

    /// Attempt holding the latch, if any.
    pub fn latch_owner(&self) -> Option<u64> {
        match self.latch.load(Ordering::Acquire) {
            0 => None,
            a => Some(a),
        }
    }

    /// True when latched by an attempt other than `me`.
    pub fn latched_by_other(&self, me: u64) -> bool {
        matches!(self.latch_owner(), Some(a) if a != me)
    }

    pub fn try_latch(&self, attempt: u64) -> bool {
        debug_assert_ne!(attempt, 0);
        self.latch
            .compare_exchange(0, attempt, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    /// Spins (yielding) until the latch is acquired.
    pub fn latch(&self, attempt: u64) {
        while !self.try_latch(attempt) {
            std::thread::yield_now();
        }
    }

    pub fn unlatch(&self, attempt: u64) {
        let prev = self.latch.swap(0, Ordering::AcqRel);
        assert_eq!(prev, attempt, "latch released by non-owner");
    }

    /// Latest write entry whose owner has not aborted.
    pub fn find_last_visible_write(&self) -> Option<AccessEntry> {
        self.access_list
            .lock()
            .iter()
            .rev()
            .find(|e| e.kind == EntryKind::Write && e.state() != EntryState::Aborted)
            .cloned()
    }

    pub fn access_list(&self) -> Vec<AccessEntry> {
        self.access_list.lock().clone()
    }

    pub fn access_list_len(&self) -> usize {
        self.access_list.lock().len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown table {0:?}")]
    UnknownTable(TableId),
    #[error("key not found")]
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    /// Finished transactions whose access-list entries are kept per record.
    pub retention: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { retention: 9 }
    }
}

#[derive(Debug, Default)]
struct Table {
    name: String,
    index: RwLock<BTreeMap<Key, Arc<Record>>>,
}

/// Test-mode log of every published and installed version.
///
/// A version published before commit and later installed unchanged is the
/// same version; anything else that reuses a `(record, vid)` pair counts as
/// a duplicate.
#[derive(Debug, Default)]
pub struct VersionRegistry {
    seen: Mutex<HashMap<(TableId, Key), HashMap<VersionId, RegisteredVersion>>>,
    duplicates: AtomicU64,
    recorded: AtomicU64,
}

#[derive(Debug, Clone)]
struct RegisteredVersion {
    value: Option<Value>,
    published: bool,
    installed: bool,
}

impl VersionRegistry {
    fn publish(&self, table: TableId, key: &[u8], vid: VersionId, value: &Option<Value>) {
        self.recorded.fetch_add(1, Ordering::Relaxed);
        let mut seen = self.seen.lock();
        let versions = seen.entry((table, key.to_vec())).or_default();
        if versions.contains_key(&vid) {
            self.duplicates.fetch_add(1, Ordering::Relaxed);
            return;
        }
        versions.insert(vid, RegisteredVersion { value: value.clone(), published: true, installed: false });
    }

    fn install(&self, table: TableId, key: &[u8], vid: VersionId, value: &Option<Value>) {
        self.recorded.fetch_add(1, Ordering::Relaxed);
        let mut seen = self.seen.lock();
        let versions = seen.entry((table, key.to_vec())).or_default();
        match versions.get_mut(&vid) {
            None => {
                versions.insert(vid, RegisteredVersion { value: value.clone(), published: false, installed: true });
            }
            Some(v) if v.published && !v.installed && v.value == *value => v.installed = true,
            Some(_) => {
                self.duplicates.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates.load(Ordering::Relaxed)
    }

    pub fn recorded(&self) -> u64 {
        self.recorded.load(Ordering::Relaxed)
    }
}

#[derive(Debug)]
pub struct Store {
    tables: Vec<Table>,
    config: StoreConfig,
    registry: Option<VersionRegistry>,
}

impl Store {
    pub fn new<S: Into<String>>(table_names: impl IntoIterator<Item = S>, config: StoreConfig) -> Self {
        assert!(config.retention >= 1, "retention must be at least 1");
        Self {
            tables: table_names
                .into_iter()
                .map(|n| Table { name: n.into(), index: RwLock::default() })
                .collect(),
            config,
            registry: None,
        }
    }

    /// Enables the version-id registry.
    pub fn with_registry(mut self) -> Self {
        self.registry = Some(VersionRegistry::default());
        self
    }

    pub fn registry(&self) -> Option<&VersionRegistry> {
        self.registry.as_ref()
    }

    pub fn config(&self) -> StoreConfig {
        self.config
    }

    pub fn table_id(&self, name: &str) -> Option<TableId> {
        self.tables.iter().position(|t| t.name == name).map(|i| TableId(i as u32))
    }

    pub fn table_name(&self, id: TableId) -> Option<&str> {
        self.tables.get(id.0 as usize).map(|t| t.name.as_str())
    }

    fn table(&self, id: TableId) -> Result<&Table, StoreError> {
        self.tables.get(id.0 as usize).ok_or(StoreError::UnknownTable(id))
    }

    /// Read-path lookup: absent keys (and placeholders whose committed
    /// value is a deletion) are not found.
    pub fn lookup(&self, table: TableId, key: &[u8]) -> Result<Arc<Record>, StoreError> {
        let t = self.table(table)?;
        let rec = t.index.read().get(key).cloned().ok_or(StoreError::NotFound)?;
        if rec.committed_value().is_none() {
            return Err(StoreError::NotFound);
        }
        Ok(rec)
    }

    /// Write-path lookup: creates an empty record on first access.
    pub fn lookup_or_insert(&self, table: TableId, key: &[u8]) -> Result<Arc<Record>, StoreError> {
        let t = self.table(table)?;
        if let Some(r) = t.index.read().get(key) {
            return Ok(r.clone());
        }
        let mut index = t.index.write();
        Ok(index
            .entry(key.to_vec())
            .or_insert_with(|| Arc::new(Record::new(table, key.to_vec(), None)))
            .clone())
    }

    /// Initial load, outside any transaction. The version is `INITIAL`.
    pub fn load(&self, table: TableId, key: Key, value: &[u8]) -> Result<(), StoreError> {
        let t = self.table(table)?;
        let rec = Arc::new(Record::new(table, key.clone(), Some(Arc::from(value))));
        t.index.write().insert(key, rec);
        Ok(())
    }

    pub fn len(&self, table: TableId) -> Result<usize, StoreError> {
        Ok(self.table(table)?.index.read().len())
    }

    pub fn is_empty(&self, table: TableId) -> Result<bool, StoreError> {
        Ok(self.len(table)? == 0)
    }

    /// First key in `[from, to)` whose committed value exists. Reads only
    /// committed state and does not participate in validation.
    pub fn scan_first_committed(
        &self,
        table: TableId,
        from: &[u8],
        to: &[u8],
    ) -> Result<Option<(Key, Value)>, StoreError> {
        let t = self.table(table)?;
        let index = t.index.read();
        for (k, rec) in index.range::<[u8], _>((Bound::Included(from), Bound::Excluded(to))) {
            if let Some(v) = rec.committed_value() {
                return Ok(Some((k.clone(), v)));
            }
        }
        Ok(None)
    }

    /// Every key with a committed value, in key order. For offline checks.
    pub fn committed_rows(&self, table: TableId) -> Result<Vec<(Key, Value)>, StoreError> {
        let t = self.table(table)?;
        let index = t.index.read();
        Ok(index
            .iter()
            .filter_map(|(k, rec)| rec.committed_value().map(|v| (k.clone(), v)))
            .collect())
    }

    /// Appends validated entries in buffer order, one record lock at a time.
    ///
    /// Returns the owners of LIVE entries that preceded any appended write
    /// (excluding the appender itself); the appender now depends on them.
    pub fn append_entries(&self, entries: Vec<(Arc<Record>, AccessEntry)>) -> Vec<Arc<TxnHandle>> {
        let mut deps: Vec<Arc<TxnHandle>> = Vec::new();
        let mut seen = HashSet::new();
        for (rec, entry) in entries {
            if let (Some(reg), EntryKind::Write) = (&self.registry, entry.kind) {
                reg.publish(rec.table, &rec.key, entry.vid, &entry.value);
            }
            let mut list = rec.access_list.lock();
            if entry.kind == EntryKind::Write {
                let me = entry.owner.attempt();
                for e in list.iter() {
                    if e.owner.attempt() != me
                        && e.state() == EntryState::Live
                        && seen.insert(e.owner.attempt())
                    {
                        deps.push(e.owner.clone());
                    }
                }
            }
            list.push(entry);
            if list.len() > 3 * self.config.retention {
                reclaim_list(&mut list, self.config.retention);
            }
        }
        deps
    }

    /// Installs a committed version. The caller must hold the record latch.
    pub fn install_committed(&self, rec: &Record, value: Option<Value>, vid: VersionId, attempt: u64) {
        assert_eq!(
            rec.latch.load(Ordering::Acquire),
            attempt,
            "install_committed without holding the latch"
        );
        if let Some(reg) = &self.registry {
            reg.install(rec.table, &rec.key, vid, &value);
        }
        let mut c = rec.committed.write();
        c.value = value;
        c.vid = vid;
    }

    /// Marks an attempt aborted. Its entries become ABORTED through the
    /// shared handle, so published writes stop being visible at once.
    /// Idempotent.
    pub fn mark_aborted(&self, handle: &TxnHandle) {
        handle.set_status(TxnStatus::Aborted);
    }

    /// Drops finished entries beyond the retention window. Entries of live
    /// transactions are never removed.
    pub fn reclaim(&self, rec: &Record) {
        reclaim_list(&mut rec.access_list.lock(), self.config.retention);
    }
}

fn reclaim_list(list: &mut Vec<AccessEntry>, retention: usize) {
    let mut kept_finished: HashSet<u64> = HashSet::new();
    let mut keep = vec![true; list.len()];
    for (i, e) in list.iter().enumerate().rev() {
        if e.state() == EntryState::Live {
            continue;
        }
        let owner = e.owner.attempt();
        if kept_finished.contains(&owner) {
            continue;
        }
        if kept_finished.len() < retention {
            kept_finished.insert(owner);
        } else {
            keep[i] = false;
        }
    }
    let mut it = keep.into_iter();
    list.retain(|_| it.next().unwrap_or(true));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> Store {
        Store::new(["t"], StoreConfig::default())
    }

    fn val(s: &str) -> Option<Value> {
        Some(Arc::from(s.as_bytes()))
    }

    #[test]
    fn lookup_after_load_and_identity() {
        let s = store();
        s.load(TableId(0), b"k".to_vec(), b"v").unwrap();
        let a = s.lookup(TableId(0), b"k").unwrap();
        let b = s.lookup(TableId(0), b"k").unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.committed_value().as_deref(), Some(&b"v"[..]));
    }

    #[test]
    fn read_path_absent_is_not_found() {
        let s = store();
        assert_eq!(s.lookup(TableId(0), b"nope").unwrap_err(), StoreError::NotFound);
        s.lookup_or_insert(TableId(0), b"nope").unwrap();
        assert_eq!(s.lookup(TableId(0), b"nope").unwrap_err(), StoreError::NotFound);
        assert_eq!(s.lookup(TableId(3), b"x").unwrap_err(), StoreError::UnknownTable(TableId(3)));
    }

    #[test]
    fn last_visible_write() {
        let s = store();
        let r = s.lookup_or_insert(TableId(0), b"k").unwrap();
        assert!(r.find_last_visible_write().is_none());
        let t1 = TxnHandle::new(1, 0);
        let t2 = TxnHandle::new(2, 0);
        let t3 = TxnHandle::new(3, 0);
        s.append_entries(vec![
            (r.clone(), AccessEntry::write(t1.clone(), val("a"), VersionId::new(1, 1))),
            (r.clone(), AccessEntry::read(t2, VersionId::INITIAL)),
            (r.clone(), AccessEntry::write(t3.clone(), val("c"), VersionId::new(3, 1))),
        ]);
        assert_eq!(r.find_last_visible_write().unwrap().owner.attempt(), 3);
        s.mark_aborted(&t3);
        s.mark_aborted(&t3);
        assert_eq!(r.find_last_visible_write().unwrap().owner.attempt(), 1);
        s.mark_aborted(&t1);
        assert!(r.find_last_visible_write().is_none());
    }

    #[test]
    fn append_reports_live_predecessors() {
        let s = store();
        let r = s.lookup_or_insert(TableId(0), b"k").unwrap();
        let t1 = TxnHandle::new(1, 0);
        let t2 = TxnHandle::new(2, 1);
        assert!(s.append_entries(vec![]).is_empty());
        let d = s.append_entries(vec![(r.clone(), AccessEntry::read(t1.clone(), VersionId::INITIAL))]);
        assert!(d.is_empty());
        let d = s.append_entries(vec![(r.clone(), AccessEntry::write(t2, val("x"), VersionId::new(2, 1)))]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].attempt(), 1);
        assert_eq!(r.access_list_len(), 2);
    }

    #[test]
    fn install_changes_vid_and_keeps_entry_visible() {
        let s = store();
        s.load(TableId(0), b"k".to_vec(), b"v1").unwrap();
        let r = s.lookup(TableId(0), b"k").unwrap();
        let before = r.committed_vid();
        let t = TxnHandle::new(7, 0);
        s.append_entries(vec![(r.clone(), AccessEntry::write(t.clone(), val("v2"), VersionId::new(7, 1)))]);
        r.latch(7);
        s.install_committed(&r, val("v2"), VersionId::new(7, 1), 7);
        r.unlatch(7);
        t.set_status(TxnStatus::Committed);
        assert_ne!(r.committed_vid(), before);
        let e = r.find_last_visible_write().unwrap();
        assert_eq!(e.state(), EntryState::Committed);
    }

    #[test]
    #[should_panic(expected = "without holding the latch")]
    fn install_requires_latch() {
        let s = store();
        let r = s.lookup_or_insert(TableId(0), b"k").unwrap();
        s.install_committed(&r, val("x"), VersionId::new(1, 0), 1);
    }

    #[test]
    fn reclaim_keeps_retention_window() {
        let s = Store::new(["t"], StoreConfig { retention: 1 });
        let r = s.lookup_or_insert(TableId(0), b"k").unwrap();
        let t1 = TxnHandle::new(1, 0);
        let t2 = TxnHandle::new(2, 0);
        let live = TxnHandle::new(3, 0);
        s.append_entries(vec![
            (r.clone(), AccessEntry::write(t1.clone(), val("a"), VersionId::new(1, 1))),
            (r.clone(), AccessEntry::write(t2.clone(), val("b"), VersionId::new(2, 1))),
            (r.clone(), AccessEntry::read(live.clone(), VersionId::INITIAL)),
        ]);
        s.reclaim(&r);
        assert_eq!(r.access_list_len(), 3, "live owners keep everything");
        t1.set_status(TxnStatus::Committed);
        t2.set_status(TxnStatus::Committed);
        s.reclaim(&r);
        let owners: Vec<u64> = r.access_list().iter().map(|e| e.owner.attempt()).collect();
        assert_eq!(owners, vec![2, 3]);
        s.reclaim(&r);
        assert_eq!(r.access_list_len(), 2);
    }

    #[test]
    fn concurrent_appenders_keep_all_entries() {
        let s = Arc::new(store());
        let r = s.lookup_or_insert(TableId(0), b"k").unwrap();
        let threads: Vec<_> = (0..4u64)
            .map(|t| {
                let s = s.clone();
                let r = r.clone();
                std::thread::spawn(move || {
                    let h = TxnHandle::new(t + 1, 0);
                    for i in 0..50u32 {
                        s.append_entries(vec![(r.clone(), AccessEntry::write(h.clone(), None, VersionId::new(t + 1, i + 1)))]);
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        let list = r.access_list();
        assert_eq!(list.len(), 200);
        for t in 1..=4u64 {
            let seqs: Vec<u32> = list.iter().filter(|e| e.owner.attempt() == t).map(|e| e.vid.seqno).collect();
            assert!(seqs.windows(2).all(|w| w[0] < w[1]), "per-owner publish order preserved");
        }
    }

    #[test]
    fn committed_reads_are_never_torn() {
        let s = Arc::new(store());
        s.load(TableId(0), b"k".to_vec(), &0u64.to_le_bytes()).unwrap();
        let r = s.lookup(TableId(0), b"k").unwrap();
        let writer = {
            let s = s.clone();
            let r = r.clone();
            std::thread::spawn(move || {
                for a in 1..=2000u64 {
                    r.latch(a);
                    s.install_committed(&r, Some(Arc::from(&a.to_le_bytes()[..])), VersionId::new(a, 0), a);
                    r.unlatch(a);
                }
            })
        };
        for _ in 0..20000 {
            let (v, vid) = r.read_committed();
            let n = u64::from_le_bytes(v.unwrap()[..8].try_into().unwrap());
            assert_eq!(n, vid.attempt);
        }
        writer.join().unwrap();
    }

    #[test]
    fn registry_flags_duplicates_only() {
        let s = Store::new(["t"], StoreConfig::default()).with_registry();
        let r = s.lookup_or_insert(TableId(0), b"k").unwrap();
        let h = TxnHandle::new(5, 0);
        s.append_entries(vec![(r.clone(), AccessEntry::write(h.clone(), val("x"), VersionId::new(5, 1)))]);
        r.latch(5);
        s.install_committed(&r, val("x"), VersionId::new(5, 1), 5);
        assert_eq!(s.registry().unwrap().duplicates(), 0);
        s.install_committed(&r, val("y"), VersionId::new(5, 1), 5);
        r.unlatch(5);
        assert_eq!(s.registry().unwrap().duplicates(), 1);
    }

    #[test]
    fn scan_skips_deleted() {
        let s = store();
        s.load(TableId(0), vec![1], b"a").unwrap();
        s.load(TableId(0), vec![2], b"b").unwrap();
        let r = s.lookup(TableId(0), &[1]).unwrap();
        r.latch(9);
        s.install_committed(&r, None, VersionId::new(9, 0), 9);
        r.unlatch(9);
        let (k, v) = s.scan_first_committed(TableId(0), &[0], &[9]).unwrap().unwrap();
        assert_eq!((k, &v[..]), (vec![2], &b"b"[..]));
        assert!(s.scan_first_committed(TableId(0), &[3], &[9]).unwrap().is_none());
    }
}
