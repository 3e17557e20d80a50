//! Scripted interleavings under the OCC seed with hand-derived outcomes.
//!
//! Rule applied by hand: a transaction commits iff no record it read from
//! committed state was overwritten by another commit between its read and
//! its own commit. Reads of its own writes are not validated; absent keys
//! count as a version and are validated too.

use std::sync::Arc;

use learned_cc::executor::{Clock, CommitRecord, Engine, ExecConfig, Op, Poll, PolicySet, ScriptedProgram, Txn};
use learned_cc::policy::{seed_backoff, seed_policy, AccessKind, SeedKind, TxnTypeSpec, WorkloadSchema};
use learned_cc::store::{Store, StoreConfig, TableId};
use learned_cc::workloads::oracle;

#[derive(Debug, Clone, Copy)]
pub enum Step {
    R(&'static str),
    W(&'static str, &'static str),
    Del(&'static str),
}

use Step::*;

pub struct Case {
    pub name: &'static str,
    pub txns: Vec<Vec<Step>>,
    /// Space-separated 1-based transaction numbers; each token polls that
    /// transaction once. A `c` suffix marks the commit poll.
    pub schedule: &'static str,
    /// Expected commit (true) or abort per transaction.
    pub expect: Vec<bool>,
    /// Committed values afterwards; `None` = absent.
    pub finals: Vec<(&'static str, Option<&'static str>)>,
}

const T: TableId = TableId(0);

pub fn schema() -> WorkloadSchema {
    WorkloadSchema::new("scripted", vec![TxnTypeSpec::new("T", vec![AccessKind::Rmw; 6])]).unwrap()
}

fn program(steps: &[Step]) -> Arc<ScriptedProgram> {
    let ops = steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let access_id = i as u16 + 1;
            match *s {
                R(k) => Op::Read { access_id, table: T, key: k.as_bytes().to_vec() },
                W(k, v) => Op::Write { access_id, table: T, key: k.as_bytes().to_vec(), value: Some(Arc::from(v.as_bytes())) },
                Del(k) => Op::Write { access_id, table: T, key: k.as_bytes().to_vec(), value: None },
            }
        })
        .collect();
    ScriptedProgram::new(0, ops)
}

/// Runs one case; `Err` describes the first mismatch.
pub fn run_case(case: &Case) -> Result<(), String> {
    let schema = schema();
    let store = Arc::new(Store::new(["t"], StoreConfig::default()).with_registry());
    for k in ["a", "b", "c", "d"] {
        store.load(T, k.as_bytes().to_vec(), b"0").unwrap();
    }
    let policy = PolicySet::new(&schema, seed_policy(&schema, SeedKind::Occ), seed_backoff(&schema)).unwrap();
    let engine = Engine::with_clock(schema, store.clone(), policy, ExecConfig::logical(), Clock::Logical(Default::default()));
    let mut txns: Vec<Txn> = case.txns.iter().map(|s| engine.begin(program(s))).collect();
    let mut outcome: Vec<Option<bool>> = vec![None; txns.len()];
    let mut log: Vec<CommitRecord> = Vec::new();
    for tok in case.schedule.split_whitespace() {
        let commit = tok.ends_with('c');
        let i: usize = tok.trim_end_matches('c').parse::<usize>().map_err(|e| format!("{tok}: {e}"))? - 1;
        let poll = txns[i].poll(&engine);
        engine.clock().tick();
        match (commit, poll) {
            (false, Poll::Progress) => {}
            (true, Poll::Committed(r)) => {
                outcome[i] = Some(true);
                log.push(r);
            }
            (true, Poll::Aborted(_)) => outcome[i] = Some(false),
            (_, p) => return Err(format!("{}: step {tok} gave {p:?}", case.name)),
        }
    }
    let got: Vec<Option<bool>> = outcome;
    let want: Vec<Option<bool>> = case.expect.iter().map(|&b| Some(b)).collect();
    if got != want {
        return Err(format!("{}: outcomes {got:?}, expected {want:?}", case.name));
    }
    for (k, v) in &case.finals {
        let actual = store.lookup(T, k.as_bytes()).ok().and_then(|r| r.committed_value());
        if actual.as_deref() != v.map(str::as_bytes) {
            return Err(format!("{}: key {k} = {actual:?}, expected {v:?}", case.name));
        }
    }
    match oracle::check_serializable(&log) {
        Ok(v) if v.is_serializable() => {}
        other => return Err(format!("{}: oracle says {other:?}", case.name)),
    }
    if store.registry().unwrap().duplicates() != 0 {
        return Err(format!("{}: duplicate version ids", case.name));
    }
    Ok(())
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "serial rmw pair",
            txns: vec![vec![R("a"), W("a", "1")], vec![R("a"), W("a", "2")]],
            schedule: "1 1 1c 2 2 2c",
            expect: vec![true, true],
            finals: vec![("a", Some("2"))],
        },
        Case {
            name: "lost update, first committer wins",
            txns: vec![vec![R("a"), W("a", "1")], vec![R("a"), W("a", "2")]],
            schedule: "1 2 1 2 1c 2c",
            expect: vec![true, false],
            finals: vec![("a", Some("1"))],
        },
        Case {
            name: "lost update, second committer loses",
            txns: vec![vec![R("a"), W("a", "1")], vec![R("a"), W("a", "2")]],
            schedule: "1 2 1 2 2c 1c",
            expect: vec![false, true],
            finals: vec![("a", Some("2"))],
        },
        Case {
            name: "read invalidated by blind write",
            txns: vec![vec![R("a")], vec![W("a", "2")]],
            schedule: "1 2 2c 1c",
            expect: vec![false, true],
            finals: vec![("a", Some("2"))],
        },
        Case {
            name: "reader commits before writer",
            txns: vec![vec![R("a")], vec![W("a", "2")]],
            schedule: "1 1c 2 2c",
            expect: vec![true, true],
            finals: vec![("a", Some("2"))],
        },
        Case {
            name: "reader validates before writer installs",
            txns: vec![vec![R("a")], vec![W("a", "2")]],
            schedule: "1 2 1c 2c",
            expect: vec![true, true],
            finals: vec![("a", Some("2"))],
        },
        Case {
            name: "blind writes both commit, last install wins",
            txns: vec![vec![W("a", "1")], vec![W("a", "2")]],
            schedule: "1 2 2c 1c",
            expect: vec![true, true],
            finals: vec![("a", Some("1"))],
        },
        Case {
            name: "write skew, first committer wins",
            txns: vec![vec![R("a"), R("b"), W("a", "1")], vec![R("a"), R("b"), W("b", "2")]],
            schedule: "1 1 2 2 1 2 1c 2c",
            expect: vec![true, false],
            finals: vec![("a", Some("1")), ("b", Some("0"))],
        },
        Case {
            name: "write skew, reversed commit order",
            txns: vec![vec![R("a"), R("b"), W("a", "1")], vec![R("a"), R("b"), W("b", "2")]],
            schedule: "1 1 2 2 1 2 2c 1c",
            expect: vec![false, true],
            finals: vec![("a", Some("0")), ("b", Some("2"))],
        },
        Case {
            name: "disjoint keys interleaved",
            txns: vec![vec![R("a"), W("a", "1")], vec![R("b"), W("b", "2")]],
            schedule: "1 2 1 2 2c 1c",
            expect: vec![true, true],
            finals: vec![("a", Some("1")), ("b", Some("2"))],
        },
        Case {
            name: "read-only transaction sees torn snapshot",
            txns: vec![vec![W("a", "1"), W("b", "1")], vec![R("a"), R("b")]],
            schedule: "2 1 1 1c 2 2c",
            expect: vec![true, false],
            finals: vec![("a", Some("1")), ("b", Some("1"))],
        },
        Case {
            name: "read-only transaction after writer",
            txns: vec![vec![W("a", "1"), W("b", "1")], vec![R("a"), R("b")]],
            schedule: "1 1 1c 2 2 2c",
            expect: vec![true, true],
            finals: vec![("a", Some("1")), ("b", Some("1"))],
        },
        Case {
            name: "read spanning a commit of an unread key",
            txns: vec![vec![W("b", "1")], vec![R("a"), R("b")]],
            schedule: "2 1 1c 2 2c",
            expect: vec![true, true],
            finals: vec![("b", Some("1"))],
        },
        Case {
            name: "own write read back is not validated",
            txns: vec![vec![W("a", "1"), R("a")], vec![W("a", "2")]],
            schedule: "1 1 2 2c 1c",
            expect: vec![true, true],
            finals: vec![("a", Some("1"))],
        },
        Case {
            name: "three-way lost update",
            txns: vec![
                vec![R("a"), W("a", "1")],
                vec![R("a"), W("a", "2")],
                vec![R("a"), W("a", "3")],
            ],
            schedule: "1 2 3 1 2 3 2c 1c 3c",
            expect: vec![false, true, false],
            finals: vec![("a", Some("2"))],
        },
        Case {
            name: "read-write chain, forward commit order",
            txns: vec![
                vec![R("a"), W("b", "1")],
                vec![R("b"), W("c", "2")],
                vec![R("c"), W("a", "3")],
            ],
            schedule: "1 2 3 1 2 3 1c 2c 3c",
            expect: vec![true, false, true],
            finals: vec![("a", Some("3")), ("b", Some("1")), ("c", Some("0"))],
        },
        Case {
            name: "read-write chain, reverse commit order",
            txns: vec![
                vec![R("a"), W("b", "1")],
                vec![R("b"), W("c", "2")],
                vec![R("c"), W("a", "3")],
            ],
            schedule: "1 2 3 1 2 3 3c 2c 1c",
            expect: vec![false, true, true],
            finals: vec![("a", Some("3")), ("b", Some("0")), ("c", Some("2"))],
        },
        Case {
            name: "absent key read then inserted",
            txns: vec![vec![R("x")], vec![W("x", "9")]],
            schedule: "1 2 2c 1c",
            expect: vec![false, true],
            finals: vec![("x", Some("9"))],
        },
        Case {
            name: "read key deleted before commit",
            txns: vec![vec![R("a"), W("b", "1")], vec![Del("a")]],
            schedule: "1 2 2c 1 1c",
            expect: vec![false, true],
            finals: vec![("a", None), ("b", Some("0"))],
        },
        Case {
            name: "private write invisible to concurrent reader",
            txns: vec![vec![R("a"), W("a", "1")], vec![R("a")]],
            schedule: "1 1 2 1c 2c",
            expect: vec![true, false],
            finals: vec![("a", Some("1"))],
        },
        Case {
            name: "concurrent reader commits first",
            txns: vec![vec![R("a"), W("a", "1")], vec![R("a")]],
            schedule: "1 1 2 2c 1c",
            expect: vec![true, true],
            finals: vec![("a", Some("1"))],
        },
        Case {
            name: "read after concurrent commit",
            txns: vec![vec![W("a", "1"), R("b")], vec![W("b", "2")]],
            schedule: "1 2 2c 1 1c",
            expect: vec![true, true],
            finals: vec![("a", Some("1")), ("b", Some("2"))],
        },
        Case {
            name: "late read of a concurrently written key",
            txns: vec![vec![R("a"), R("b"), R("c"), W("d", "1")], vec![W("c", "2")]],
            schedule: "1 1 2 2c 1 1 1c",
            expect: vec![true, true],
            finals: vec![("c", Some("2")), ("d", Some("1"))],
        },
        Case {
            name: "early read of a concurrently written key",
            txns: vec![vec![R("a"), R("b"), R("c"), W("d", "1")], vec![W("c", "2")]],
            schedule: "1 1 1 2 2c 1 1c",
            expect: vec![false, true],
            finals: vec![("c", Some("2")), ("d", Some("0"))],
        },
        Case {
            name: "rmw after committed rmw sees new version",
            txns: vec![vec![R("a"), W("a", "1")], vec![R("a"), W("a", "2")]],
            schedule: "1 1 1c 2 2 2c",
            expect: vec![true, true],
            finals: vec![("a", Some("2"))],
        },
        Case {
            name: "delete and reinsert race",
            txns: vec![vec![R("a"), Del("a")], vec![R("a"), W("a", "5")]],
            schedule: "1 2 1 2 1c 2c",
            expect: vec![true, false],
            finals: vec![("a", None)],
        },
    ]
}
