//! Offline serializability check over a commit log.
//!
//! Per key, committed writes are ordered by commit timestamp into a version
//! chain starting at [`VersionId::INITIAL`]. That yields the usual
//! dependency edges: write→write between consecutive installs, write→read
//! from a version's installer to its readers, and read→write from a reader
//! to the installer of the next version. The history is conflict
//! serializable iff the graph is acyclic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::executor::CommitRecord;
use crate::store::{Key, TableId, VersionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Ww,
    Wr,
    Rw,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("attempt {0} appears twice in the log")]
    DuplicateAttempt(u64),
    #[error("commit timestamp {0} appears twice in the log")]
    DuplicateTimestamp(u64),
    #[error("attempt {reader} read version {vid:?} of table {table}, key {key}, which no logged transaction installed")]
    UnknownVersion { reader: u64, table: u32, key: String, vid: VersionId },
    #[error("version {vid:?} of table {table}, key {key} was installed twice")]
    DuplicateVersion { table: u32, key: String, vid: VersionId },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SerializationGraph {
    /// Node `i` is the transaction with this attempt id.
    pub nodes: Vec<u64>,
    /// `(from, to, kind)` over node indices; no self-edges.
    pub edges: BTreeSet<(usize, usize, EdgeKind)>,
}

impl SerializationGraph {
    fn successors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b, _) in &self.edges {
            if adj[a].last() != Some(&b) {
                adj[a].push(b);
            }
        }
        adj
    }

    /// A cycle as a list of attempt ids (first ≠ last; the edge from the
    /// last back to the first closes it), if one exists.
    pub fn find_cycle(&self) -> Option<Vec<u64>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let adj = self.successors();
        let mut mark = vec![Mark::New; adj.len()];
        for root in 0..adj.len() {
            if mark[root] != Mark::New {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            mark[root] = Mark::Open;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if let Some(&u) = adj[v].get(*next) {
                    *next += 1;
                    match mark[u] {
                        Mark::New => {
                            mark[u] = Mark::Open;
                            stack.push((u, 0));
                        }
                        Mark::Open => {
                            let start = stack.iter().position(|&(n, _)| n == u).expect("open node on stack");
                            return Some(stack[start..].iter().map(|&(n, _)| self.nodes[n]).collect());
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[v] = Mark::Done;
                    stack.pop();
                }
            }
        }
        None
    }

    /// An equivalent serial order (attempt ids), if the graph is acyclic.
    pub fn topological_order(&self) -> Option<Vec<u64>> {
        let adj = self.successors();
        let mut indegree = vec![0usize; adj.len()];
        for outs in &adj {
            for &u in outs {
                indegree[u] += 1;
            }
        }
        let mut ready: BTreeSet<usize> = (0..adj.len()).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(adj.len());
        while let Some(v) = ready.pop_first() {
            order.push(self.nodes[v]);
            for &u in &adj[v] {
                indegree[u] -= 1;
                if indegree[u] == 0 {
                    ready.insert(u);
                }
            }
        }
        (order.len() == adj.len()).then_some(order)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// With one equivalent serial order.
    Serializable(Vec<u64>),
    /// Attempt ids along a dependency cycle.
    Cycle(Vec<u64>),
}

impl Verdict {
    pub fn is_serializable(&self) -> bool {
        matches!(self, Verdict::Serializable(_))
    }
}

type Chains = HashMap<(TableId, Key), Vec<(usize, VersionId)>>;

/// Writers of every key ordered by commit timestamp.
fn version_chains(log: &[CommitRecord]) -> Result<Chains, OracleError> {
    let mut seen_attempts = BTreeSet::new();
    let mut seen_ts = BTreeSet::new();
    for r in log {
        if !seen_attempts.insert(r.attempt) {
            return Err(OracleError::DuplicateAttempt(r.attempt));
        }
        if !seen_ts.insert(r.ts) {
            return Err(OracleError::DuplicateTimestamp(r.ts));
        }
    }
    let mut by_ts: Vec<usize> = (0..log.len()).collect();
    by_ts.sort_by_key(|&i| log[i].ts);
    let mut chains: Chains = HashMap::new();
    for i in by_ts {
        // A transaction's last write to a key is the one it installed.
        let mut last: BTreeMap<(TableId, &Key), VersionId> = BTreeMap::new();
        for w in &log[i].writes {
            last.insert((w.table, &w.key), w.vid);
        }
        for ((table, key), vid) in last {
            let chain = chains.entry((table, key.clone())).or_default();
            if vid == VersionId::INITIAL || chain.iter().any(|&(_, v)| v == vid) {
                return Err(OracleError::DuplicateVersion { table: table.0, key: hex::encode(key), vid });
            }
            chain.push((i, vid));
        }
    }
    Ok(chains)
}

pub fn build_serialization_graph(log: &[CommitRecord]) -> Result<SerializationGraph, OracleError> {
    let chains = version_chains(log)?;
    let mut edges = BTreeSet::new();
    let mut add = |a: usize, b: usize, k: EdgeKind| {
        if a != b {
            edges.insert((a, b, k));
        }
    };
    for chain in chains.values() {
        for pair in chain.windows(2) {
            add(pair[0].0, pair[1].0, EdgeKind::Ww);
        }
    }
    for (reader, r) in log.iter().enumerate() {
        for a in &r.reads {
            let chain = chains.get(&(a.table, a.key.clone())).map(Vec::as_slice).unwrap_or(&[]);
            let next = if a.vid == VersionId::INITIAL {
                0
            } else {
                let pos = chain.iter().position(|&(_, v)| v == a.vid).ok_or_else(|| OracleError::UnknownVersion {
                    reader: r.attempt,
                    table: a.table.0,
                    key: hex::encode(&a.key),
                    vid: a.vid,
                })?;
                add(chain[pos].0, reader, EdgeKind::Wr);
                pos + 1
            };
            if let Some(&(writer, _)) = chain.get(next) {
                add(reader, writer, EdgeKind::Rw);
            }
        }
    }
    Ok(SerializationGraph { nodes: log.iter().map(|r| r.attempt).collect(), edges })
}

pub fn check_serializable(log: &[CommitRecord]) -> Result<Verdict, OracleError> {
    let g = build_serialization_graph(log)?;
    Ok(match g.topological_order() {
        Some(order) => Verdict::Serializable(order),
        None => Verdict::Cycle(g.find_cycle().expect("cyclic graph has a cycle")),
    })
}

/// Every dependency edge points forward in commit-timestamp order. Returns
/// the first offending `(from, to)` attempt pair otherwise.
pub fn check_commit_order(log: &[CommitRecord]) -> Result<Result<(), (u64, u64)>, OracleError> {
    let g = build_serialization_graph(log)?;
    for &(a, b, _) in &g.edges {
        if log[a].ts >= log[b].ts {
            return Ok(Err((log[a].attempt, log[b].attempt)));
        }
    }
    Ok(Ok(()))
}

/// Exhaustive check for tiny logs: is there a serial order in which every
/// read sees the version it logged, and every key's installs happen in the
/// logged order? Independent of the graph construction.
pub fn brute_force_serializable(log: &[CommitRecord]) -> bool {
    assert!(log.len() <= 8, "brute force is for tiny logs");
    let mut install_order: HashMap<(TableId, &Key), Vec<(u64, VersionId)>> = HashMap::new();
    for r in log {
        let mut last: BTreeMap<(TableId, &Key), VersionId> = BTreeMap::new();
        for w in &r.writes {
            last.insert((w.table, &w.key), w.vid);
        }
        for (k, vid) in last {
            install_order.entry(k).or_default().push((r.ts, vid));
        }
    }
    for v in install_order.values_mut() {
        v.sort();
    }
    let mut perm: Vec<usize> = (0..log.len()).collect();
    loop {
        if replays(log, &perm, &install_order) {
            return true;
        }
        if !next_permutation(&mut perm) {
            return false;
        }
    }
}

fn replays(log: &[CommitRecord], perm: &[usize], install_order: &HashMap<(TableId, &Key), Vec<(u64, VersionId)>>) -> bool {
    let mut current: HashMap<(TableId, &Key), VersionId> = HashMap::new();
    let mut installs: HashMap<(TableId, &Key), usize> = HashMap::new();
    for &i in perm {
        let r = &log[i];
        for a in &r.reads {
            if current.get(&(a.table, &a.key)).copied().unwrap_or(VersionId::INITIAL) != a.vid {
                return false;
            }
        }
        let mut last: BTreeMap<(TableId, &Key), VersionId> = BTreeMap::new();
        for w in &r.writes {
            last.insert((w.table, &w.key), w.vid);
        }
        for (k, vid) in last {
            let n = installs.entry(k).or_insert(0);
            if install_order[&k][*n].1 != vid {
                return false;
            }
            *n += 1;
            current.insert(k, vid);
        }
    }
    true
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else { return false };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
