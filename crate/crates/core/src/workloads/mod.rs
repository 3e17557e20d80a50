//! Workload schemas, input generators and transaction programs, plus the
//! offline serializability oracle.

pub mod micro;
pub mod oracle;
pub mod tpcc;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::executor::TxnProgram;
use crate::policy::WorkloadSchema;
use crate::store::{Store, StoreConfig, Value};

pub use micro::{MicroConfig, Microbench};
pub use tpcc::{TpccConfig, TpccLite};

/// Deterministic per-worker stream of bound transaction programs.
pub type InputStream = Box<dyn Iterator<Item = Arc<dyn TxnProgram>> + Send>;

pub trait Workload: Send + Sync {
    fn schema(&self) -> WorkloadSchema;

    fn table_names(&self) -> Vec<String>;

    /// Populates a fresh store.
    fn load(&self, store: &Store);

    /// Input stream for one worker; identical `(seed, worker)` pairs give
    /// identical streams.
    fn generator(&self, seed: u64, worker: u32) -> InputStream;

    fn build_store(&self, config: StoreConfig, registry: bool) -> Arc<Store> {
        let mut store = Store::new(self.table_names(), config);
        if registry {
            store = store.with_registry();
        }
        self.load(&store);
        Arc::new(store)
    }
}

pub(crate) fn worker_rng(seed: u64, worker: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64 + 1);
    rng
}

/// Big-endian composite key, so ordered scans follow field order.
pub fn key(parts: &[u64]) -> Vec<u8> {
    parts.iter().flat_map(|p| p.to_be_bytes()).collect()
}

pub fn key_parts(key: &[u8]) -> Vec<u64> {
    key.chunks_exact(8)
        .map(|c| u64::from_be_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

/// Row of little-endian `i64` fields.
pub fn encode(fields: &[i64]) -> Value {
    let bytes: Vec<u8> = fields.iter().flat_map(|f| f.to_le_bytes()).collect();
    Arc::from(bytes)
}

pub fn decode(value: &[u8]) -> Vec<i64> {
    value
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

/// Field `i` of an optional row, or 0.
pub(crate) fn field(value: Option<&[u8]>, i: usize) -> i64 {
    value.map(decode).and_then(|v| v.get(i).copied()).unwrap_or(0)
}

/// Looks a workload up by CLI name: `tpcc` (with warehouses) or `micro`
/// (with zipf θ).
pub fn by_name(name: &str, warehouses: u32, theta: f64) -> Option<Box<dyn Workload>> {
    match name {
        "tpcc" | "tpcc-lite" => Some(Box::new(TpccLite::new(TpccConfig { warehouses, ..TpccConfig::default() }))),
        "micro" | "microbench" => Some(Box::new(Microbench::new(MicroConfig { theta, ..MicroConfig::default() }))),
        _ => None,
    }
}
