//! Synthetic contention microbenchmark: ten transaction types of eight
//! read-modify-writes each. The first access hits a small hot table with
//! Zipf skew, the middle six a large uniformly accessed table, and the last
//! a table private to the type.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use super::{encode, field, key, worker_rng, InputStream, Workload};
use crate::executor::{Observed, Op, TxnProgram};
use crate::policy::{AccessKind, TxnTypeSpec, WorkloadSchema};
use crate::store::{Store, TableId};

pub const ACCESSES: u16 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroConfig {
    pub types: usize,
    pub hot_keys: u64,
    pub cold_keys: u64,
    /// Key range of each type-private table.
    pub unique_keys: u64,
    /// Zipf exponent for the hot access; 0 is uniform.
    pub theta: f64,
    /// Partition the hot range by worker so that no two workers ever touch
    /// the same hot key.
    pub disjoint_hot: Option<u32>,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self { types: 10, hot_keys: 4096, cold_keys: 1_000_000, unique_keys: 100_000, theta: 0.8, disjoint_hot: None }
    }
}

#[derive(Debug, Clone)]
pub struct Microbench {
    config: MicroConfig,
}

const HOT: TableId = TableId(0);
const COLD: TableId = TableId(1);

fn unique_table(type_index: usize) -> TableId {
    TableId(2 + type_index as u32)
}

impl Microbench {
    pub fn new(config: MicroConfig) -> Self {
        assert!(config.types > 0 && config.hot_keys > 0 && config.cold_keys > 0 && config.unique_keys > 0);
        Self { config }
    }

    pub fn config(&self) -> &MicroConfig {
        &self.config
    }

    pub fn schema_for(types: usize) -> WorkloadSchema {
        let specs = (1..=types)
            .map(|t| TxnTypeSpec::new(format!("T{t}"), vec![AccessKind::Rmw; ACCESSES as usize]))
            .collect();
        WorkloadSchema::new("microbench", specs).expect("valid schema")
    }
}

impl Workload for Microbench {
    fn schema(&self) -> WorkloadSchema {
        Self::schema_for(self.config.types)
    }

    fn table_names(&self) -> Vec<String> {
        let mut names = vec!["hot".to_string(), "cold".to_string()];
        names.extend((1..=self.config.types).map(|t| format!("unique_{t}")));
        names
    }

    /// Only the hot table is preloaded; the others materialise on first touch.
    fn load(&self, store: &Store) {
        for k in 0..self.config.hot_keys {
            store.load(HOT, key(&[k]), &encode(&[0])).expect("hot table");
        }
    }

    fn generator(&self, seed: u64, worker: u32) -> InputStream {
        let c = self.config;
        let mut rng = worker_rng(seed, worker);
        let (hot_base, hot_len) = match c.disjoint_hot {
            Some(n) => {
                let n = n.max(1) as u64;
                let len = (c.hot_keys / n).max(1);
                ((worker as u64 % n) * len, len)
            }
            None => (0, c.hot_keys),
        };
        let zipf = Zipf::new(hot_len as f64, c.theta).expect("zipf parameters");
        Box::new(std::iter::from_fn(move || {
            let type_index = rng.random_range(0..c.types);
            let hot = hot_base + zipf.sample(&mut rng) as u64 - 1;
            let mut keys = vec![(HOT, hot)];
            keys.extend((0..6).map(|_| (COLD, rng.random_range(0..c.cold_keys))));
            keys.push((unique_table(type_index), rng.random_range(0..c.unique_keys)));
            Some(Arc::new(MicroTxn { type_index, keys }) as Arc<dyn TxnProgram>)
        }))
    }
}

/// Eight read-increment-write steps; access-id `i` is the read and write of
/// the `i`-th key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroTxn {
    pub type_index: usize,
    pub keys: Vec<(TableId, u64)>,
}

impl TxnProgram for MicroTxn {
    fn type_index(&self) -> usize {
        self.type_index
    }

    fn next_op(&self, history: &[Observed]) -> Option<Op> {
        let step = history.len();
        let (table, k) = *self.keys.get(step / 2)?;
        let access_id = (step / 2 + 1) as u16;
        let key = key(&[k]);
        if step.is_multiple_of(2) {
            Some(Op::Read { access_id, table, key })
        } else {
            let n = field(history[step - 1].value(), 0);
            Some(Op::Write { access_id, table, key, value: Some(encode(&[n + 1])) })
        }
    }
}
