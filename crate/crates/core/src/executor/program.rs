use std::fmt;
use std::sync::Arc;

use crate::store::{Key, TableId, Value};

/// One data access issued by a transaction program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Read { access_id: u16, table: TableId, key: Key },
    /// `value == None` deletes the record.
    Write { access_id: u16, table: TableId, key: Key, value: Option<Value> },
    /// Committed-only ordered lookup of the first live key in `[from, to)`.
    /// Not governed by the policy and not validated.
    ScanFirst { table: TableId, from: Key, to: Key },
}

impl Op {
    pub fn access_id(&self) -> Option<u16> {
        match self {
            Op::Read { access_id, .. } | Op::Write { access_id, .. } => Some(*access_id),
            Op::ScanFirst { .. } => None,
        }
    }
}

/// Result of an executed op, fed back to the program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observed {
    Value(Option<Value>),
    Written,
    Scanned(Option<(Key, Value)>),
}

impl Observed {
    pub fn value(&self) -> Option<&[u8]> {
        match self {
            Observed::Value(Some(v)) => Some(v),
            _ => None,
        }
    }

    pub fn scanned_key(&self) -> Option<&[u8]> {
        match self {
            Observed::Scanned(Some((k, _))) => Some(k),
            _ => None,
        }
    }
}

/// A transaction program with its inputs bound.
///
/// `next_op` must be a pure function of the inputs and `history` (the
/// results of every op issued so far); rollback replays a program from a
/// truncated history.
pub trait TxnProgram: Send + Sync + fmt::Debug {
    fn type_index(&self) -> usize;

    fn next_op(&self, history: &[Observed]) -> Option<Op>;
}

/// A fixed op list, independent of what is read. Used for scripted
/// schedules.
#[derive(Debug, Clone)]
pub struct ScriptedProgram {
    pub type_index: usize,
    pub ops: Vec<Op>,
}

impl ScriptedProgram {
    pub fn new(type_index: usize, ops: Vec<Op>) -> Arc<Self> {
        Arc::new(Self { type_index, ops })
    }
}

impl TxnProgram for ScriptedProgram {
    fn type_index(&self) -> usize {
        self.type_index
    }

    fn next_op(&self, history: &[Observed]) -> Option<Op> {
        self.ops.get(history.len()).cloned()
    }
}

pub fn read(access_id: u16, table: TableId, key: &[u8]) -> Op {
    Op::Read { access_id, table, key: key.to_vec() }
}

pub fn write(access_id: u16, table: TableId, key: &[u8], value: &[u8]) -> Op {
    Op::Write { access_id, table, key: key.to_vec(), value: Some(Arc::from(value)) }
}
