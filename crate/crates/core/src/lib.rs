//! Multi-threaded in-memory transactional key-value engine whose
//! concurrency control is a learned policy table, plus an evolutionary
//! trainer that searches the policy space for commit throughput.

pub mod backoff;
pub mod bench;
pub mod cli;
pub mod executor;
pub mod policy;
pub mod store;
pub mod trainer;
pub mod workloads;
