//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod backoff_cases;
pub mod histories;
pub mod occ_cases;

use std::sync::Arc;

use learned_cc::executor::{sim, Clock, Engine, ExecConfig, PolicySet};
use learned_cc::policy::{seed_backoff, seed_policy, BackoffPolicyTable, CcPolicyTable, SeedKind, WorkloadSchema};
use learned_cc::store::{Store, StoreConfig};
use learned_cc::trainer::{mutate, Individual};
use learned_cc::policy::AlphaSet;
use learned_cc::workloads::Workload;
use rand::Rng;

/// A policy reached by mutating a random seed a few times at a high rate,
/// so every kind of action shows up.
pub fn random_policy(schema: &WorkloadSchema, rng: &mut impl Rng) -> (CcPolicyTable, BackoffPolicyTable) {
    let kind = SeedKind::ALL[rng.random_range(0..3)];
    let mut ind = Individual { id: 0, cc: seed_policy(schema, kind), backoff: seed_backoff(schema), fitness: None };
    for _ in 0..rng.random_range(1..4) {
        let p = rng.random_range(0.05..0.6);
        let lambda = rng.random_range(1..5);
        ind = mutate(&ind, schema, &AlphaSet::default(), p, lambda, rng, 0);
    }
    (ind.cc, ind.backoff)
}

pub fn sim_engine(workload: &dyn Workload, cc: CcPolicyTable, backoff: BackoffPolicyTable) -> (Engine, Arc<Store>) {
    let schema = workload.schema();
    let store = workload.build_store(StoreConfig::default(), true);
    let policy = PolicySet::new(&schema, cc, backoff).expect("valid policy");
    let engine = Engine::with_clock(schema, store.clone(), policy, ExecConfig::logical(), Clock::Logical(Default::default()));
    (engine, store)
}

pub fn run_sim(engine: &Engine, workload: &dyn Workload, workers: u32, ticks: u64, seed: u64) -> sim::SimReport {
    let streams = (0..workers).map(|i| workload.generator(seed, i) as sim::ProgramStream).collect();
    sim::run(engine, streams, sim::SimConfig { ticks, seed, keep_log: true, ..Default::default() })
}
