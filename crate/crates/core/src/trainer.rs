//! Evolutionary search over policy tables.
//!
//! Every iteration each survivor spawns `children` mutants, the pool of
//! survivors and children is evaluated, and the best `population` survive.
//! There is no crossover. Survivors keep their cached fitness unless
//! `reevaluate` is set.

use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bench::{self, BenchConfig};
use crate::executor::{sim, Clock, Engine, ExecConfig, PolicySet, SwapError};
use crate::policy::{
    policy_hash, seed_backoff, seed_policy, AlphaSet, BackoffPolicyTable, CcPolicyTable, ReadVersion, SeedKind,
    WaitTarget, WorkloadSchema, WriteVisibility,
};
use crate::store::StoreConfig;
use crate::workloads::Workload;

#[derive(Debug, Clone)]
pub struct EaConfig {
    pub population: usize,
    pub children: usize,
    pub iterations: u32,
    pub p0: f64,
    pub lambda0: f64,
    pub seed: u64,
    /// Re-measure survivors every iteration instead of caching.
    pub reevaluate: bool,
    pub alphas: AlphaSet,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            population: 8,
            children: 4,
            iterations: 300,
            p0: 0.05,
            lambda0: 3.0,
            seed: 1,
            reevaluate: false,
            alphas: AlphaSet::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("evaluation failed: {0}")]
    Engine(#[from] SwapError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl EaConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.population < 1 {
            return Err(TrainError::Config("population must be ≥ 1".into()));
        }
        if self.children < 1 {
            return Err(TrainError::Config("children per parent must be ≥ 1".into()));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(TrainError::Config(format!("p0 = {} is outside (0, 1]", self.p0)));
        }
        if self.lambda0.is_nan() || self.lambda0 < 1.0 {
            return Err(TrainError::Config(format!("lambda0 = {} is below 1", self.lambda0)));
        }
        Ok(())
    }

    /// Mutation probability and interval for a 0-based iteration.
    pub fn schedule(&self, iteration: u32) -> (f64, u32) {
        let left = if self.iterations == 0 { 1.0 } else { 1.0 - iteration as f64 / self.iterations as f64 };
        let p = self.p0 * left;
        let lambda = (self.lambda0 * left).round().max(1.0) as u32;
        (p, lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// Creation order; lower is older.
    pub id: u64,
    pub cc: CcPolicyTable,
    pub backoff: BackoffPolicyTable,
    /// Commits per second, once evaluated.
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn hash(&self, schema: &WorkloadSchema) -> String {
        policy_hash(schema, &self.cc, &self.backoff)
    }
}

/// Moves an ordinal by a random non-zero offset in `[-λ, λ]`, clipped to
/// `[0, max]`.
fn step(ordinal: u32, max: u32, lambda: u32, rng: &mut impl Rng) -> u32 {
    let lambda = lambda.max(1) as i64;
    let mut offset = rng.random_range(-lambda..lambda);
    if offset >= 0 {
        offset += 1;
    }
    (ordinal as i64 + offset).clamp(0, max as i64) as u32
}

/// Mutates each cell of both tables independently with probability `p`.
/// Binary cells flip; wait targets and α values step through their ordered
/// domains.
pub fn mutate(
    parent: &Individual,
    schema: &WorkloadSchema,
    alphas: &AlphaSet,
    p: f64,
    lambda: u32,
    rng: &mut impl Rng,
    id: u64,
) -> Individual {
    let mut child = Individual { id, cc: parent.cc.clone(), backoff: parent.backoff.clone(), fitness: None };
    let p = p.clamp(0.0, 1.0);
    for row in child.cc.rows.values_mut() {
        for (x, w) in row.wait_targets.iter_mut().enumerate() {
            if rng.random_bool(p) {
                let d = schema.access_count(x);
                *w = WaitTarget::from_ordinal(step(w.ordinal(d), d as u32 + 1, lambda, rng), d);
            }
        }
        if rng.random_bool(p) {
            row.read_version = match row.read_version {
                ReadVersion::CleanRead => ReadVersion::DirtyRead,
                ReadVersion::DirtyRead => ReadVersion::CleanRead,
            };
        }
        if rng.random_bool(p) {
            row.write_visibility = match row.write_visibility {
                WriteVisibility::Private => WriteVisibility::Public,
                WriteVisibility::Public => WriteVisibility::Private,
            };
        }
        if rng.random_bool(p) {
            row.early_validate = !row.early_validate;
        }
    }
    let values = alphas.values();
    for alpha in child.backoff.entries.values_mut() {
        if rng.random_bool(p) {
            let pos = alphas.position(*alpha).unwrap_or(0) as u32;
            *alpha = values[step(pos, values.len() as u32 - 1, lambda, rng) as usize];
        }
    }
    child
}

/// Top `n` by fitness; ties go to the earlier-created individual.
pub fn select(mut pool: Vec<Individual>, n: usize) -> Vec<Individual> {
    pool.sort_by(|a, b| {
        let (fa, fb) = (a.fitness.unwrap_or(f64::NEG_INFINITY), b.fitness.unwrap_or(f64::NEG_INFINITY));
        fb.total_cmp(&fa).then(a.id.cmp(&b.id))
    });
    pool.truncate(n);
    pool
}

pub trait Evaluator {
    fn evaluate(&mut self, individual: &Individual) -> Result<f64, TrainError>;
}

impl<F: FnMut(&Individual) -> Result<f64, TrainError>> Evaluator for F {
    fn evaluate(&mut self, individual: &Individual) -> Result<f64, TrainError> {
        self(individual)
    }
}

/// Relative spread tolerated between two measurements of the same policy.
pub const NOISE_TOLERANCE: f64 = 0.15;

/// Measured commit throughput on a long-lived multi-threaded engine: each
/// evaluation swaps the candidate in, warms up, then measures.
pub struct ThroughputEvaluator<'w> {
    workload: &'w dyn Workload,
    engine: Engine,
    pub threads: u32,
    pub warmup: Duration,
    pub measure: Duration,
    pub seed: u64,
    evaluations: u64,
    /// Report of the most recent evaluation.
    pub last: Option<bench::BenchReport>,
}

impl<'w> ThroughputEvaluator<'w> {
    pub fn new(workload: &'w dyn Workload, threads: u32, warmup: Duration, measure: Duration, seed: u64) -> Result<Self, TrainError> {
        if measure.is_zero() {
            return Err(TrainError::Config("measure duration must be > 0".into()));
        }
        if threads < 1 {
            return Err(TrainError::Config("threads must be ≥ 1".into()));
        }
        let schema = workload.schema();
        let engine = bench::build_engine(
            workload,
            seed_policy(&schema, SeedKind::Occ),
            seed_backoff(&schema),
            ExecConfig::realtime(),
            false,
        )?;
        Ok(Self { workload, engine, threads, warmup, measure, seed, evaluations: 0, last: None })
    }

    /// Engine of the most recent evaluation.
    pub fn engine(&self) -> &Engine {
        &self.engine
    }
}

impl Evaluator for ThroughputEvaluator<'_> {
    fn evaluate(&mut self, ind: &Individual) -> Result<f64, TrainError> {
        // A freshly loaded store per candidate: no state carries over between
        // evaluations, and a long search does not accumulate records.
        self.engine = bench::build_engine(self.workload, ind.cc.clone(), ind.backoff.clone(), ExecConfig::realtime(), false)?;
        // Fresh inputs per evaluation so no candidate replays another's stream.
        let config = BenchConfig {
            threads: self.threads,
            warmup: self.warmup,
            measure: self.measure,
            seed: self.seed.wrapping_add(self.evaluations.wrapping_mul(0x9e37_79b9)),
            keep_log: false,
            swaps: Vec::new(),
        };
        self.evaluations += 1;
        let report = bench::run(&self.engine, self.workload, &config);
        let fitness = report.throughput();
        self.last = Some(report);
        Ok(fitness)
    }
}

/// Deterministic fitness: commits per thousand ticks of the single-thread
/// scheduler, on a freshly loaded store each time.
pub struct SimEvaluator {
    workload: Arc<dyn Workload>,
    pub workers: u32,
    pub config: sim::SimConfig,
    pub exec: ExecConfig,
}

impl SimEvaluator {
    pub fn new(workload: Arc<dyn Workload>, workers: u32, ticks: u64, seed: u64) -> Self {
        Self {
            workload,
            workers,
            config: sim::SimConfig { ticks, seed, ..sim::SimConfig::default() },
            exec: ExecConfig::logical(),
        }
    }
}

impl Evaluator for SimEvaluator {
    fn evaluate(&mut self, ind: &Individual) -> Result<f64, TrainError> {
        let schema = self.workload.schema();
        let policy = PolicySet::new(&schema, ind.cc.clone(), ind.backoff.clone()).map_err(SwapError::Invalid)?;
        let store = self.workload.build_store(StoreConfig::default(), false);
        let engine = Engine::with_clock(schema, store, policy, self.exec, Clock::Logical(Default::default()));
        let streams = (0..self.workers)
            .map(|i| self.workload.generator(self.config.seed, i) as sim::ProgramStream)
            .collect();
        Ok(sim::run(&engine, streams, self.config).throughput())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iteration: u32,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub p: f64,
    pub lambda: u32,
    pub best_policy_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Individual,
    /// Row 0 describes the initial population.
    pub history: Vec<HistoryRow>,
    /// Hash of every candidate in creation order.
    pub candidates: Vec<String>,
    /// Fitness of each warm-start seed, in [`SeedKind::ALL`] order.
    pub seed_fitness: Vec<f64>,
}

fn history_row(iteration: u32, population: &[Individual], p: f64, lambda: u32, schema: &WorkloadSchema) -> HistoryRow {
    let fits: Vec<f64> = population.iter().filter_map(|i| i.fitness).collect();
    let best = &population[0];
    HistoryRow {
        iteration,
        best_fitness: best.fitness.unwrap_or(0.0),
        mean_fitness: fits.iter().sum::<f64>() / fits.len().max(1) as f64,
        p,
        lambda,
        best_policy_hash: best.hash(schema),
    }
}

/// Runs the search. `on_iteration` sees each history row as it is produced.
pub fn train(
    config: &EaConfig,
    schema: &WorkloadSchema,
    evaluator: &mut dyn Evaluator,
    mut on_iteration: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut next_id = 0u64;
    let mut candidates = Vec::new();
    let mut fresh = |cc, backoff, candidates: &mut Vec<String>| {
        let ind = Individual { id: next_id, cc, backoff, fitness: None };
        next_id += 1;
        candidates.push(ind.hash(schema));
        ind
    };

    let mut population: Vec<Individual> = SeedKind::ALL
        .iter()
        .map(|&k| fresh(seed_policy(schema, k), seed_backoff(schema), &mut candidates))
        .collect();
    let seeds = population.len();
    // With no iterations to run, the answer is the best seed; skip the fills.
    let fills = if config.iterations == 0 { 0 } else { config.population.saturating_sub(seeds) };
    for i in 0..fills {
        let parent = population[i % seeds].clone();
        let child = mutate(&parent, schema, &config.alphas, config.p0, config.lambda0.round() as u32, &mut rng, 0);
        population.push(fresh(child.cc, child.backoff, &mut candidates));
    }
    for ind in population.iter_mut() {
        ind.fitness = Some(evaluator.evaluate(ind)?);
    }
    let seed_fitness = population[..seeds].iter().map(|i| i.fitness.unwrap_or(0.0)).collect();
    population = select(population, config.population);
    let mut history = vec![history_row(0, &population, config.p0, config.lambda0.round().max(1.0) as u32, schema)];
    on_iteration(&history[0]);

    for iteration in 0..config.iterations {
        let (p, lambda) = config.schedule(iteration);
        let mut pool = population.clone();
        if config.reevaluate {
            for ind in pool.iter_mut() {
                ind.fitness = Some(evaluator.evaluate(ind)?);
            }
        }
        for parent in &population {
            for _ in 0..config.children {
                let child = mutate(parent, schema, &config.alphas, p, lambda, &mut rng, 0);
                let mut child = fresh(child.cc, child.backoff, &mut candidates);
                child.fitness = Some(evaluator.evaluate(&child)?);
                pool.push(child);
            }
        }
        population = select(pool, config.population);
        let row = history_row(iteration + 1, &population, p, lambda, schema);
        on_iteration(&row);
        history.push(row);
    }
    Ok(TrainOutcome { best: population.swap_remove(0), history, candidates, seed_fitness })
}

pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{validate_table, Alpha};
    use crate::workloads::{MicroConfig, Microbench, TpccLite};
    use proptest::prelude::*;

    fn seed_individual(schema: &WorkloadSchema, kind: SeedKind) -> Individual {
        Individual { id: 0, cc: seed_policy(schema, kind), backoff: seed_backoff(schema), fitness: None }
    }

    fn with_fitness(id: u64, f: f64) -> Individual {
        let s = TpccLite::schema_spec();
        Individual { id, fitness: Some(f), ..seed_individual(&s, SeedKind::Occ) }
    }

    #[test]
    fn zero_probability_is_identity() {
        let s = TpccLite::schema_spec();
        let parent = seed_individual(&s, SeedKind::Pipeline);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let child = mutate(&parent, &s, &AlphaSet::default(), 0.0, 3, &mut rng, 1);
        assert_eq!((child.cc, child.backoff), (parent.cc, parent.backoff));
    }

    #[test]
    fn certain_mutation_flips_every_binary_cell() {
        let s = TpccLite::schema_spec();
        let parent = seed_individual(&s, SeedKind::Occ);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let child = mutate(&parent, &s, &AlphaSet::default(), 1.0, 1, &mut rng, 1);
        for (k, row) in &child.cc.rows {
            let old = &parent.cc.rows[k];
            assert_ne!(row.read_version, old.read_version);
            assert_ne!(row.write_visibility, old.write_visibility);
            assert_ne!(row.early_validate, old.early_validate);
        }
    }

    #[test]
    fn wait_steps_clip_at_commit() {
        // ACCESS(8) with d = 8 moved up by 2 lands on COMMIT, the top.
        let d = 8u16;
        let top = d as u32 + 1;
        assert_eq!(WaitTarget::from_ordinal((WaitTarget::Access(8).ordinal(d) + 2).min(top), d), WaitTarget::Commit);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let o = step(WaitTarget::Access(8).ordinal(d), top, 2, &mut rng);
            assert!((6..=top).contains(&o) && o != 8);
        }
    }

    #[test]
    fn step_offsets_are_uniform_and_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0u32; 7];
        for _ in 0..70_000 {
            counts[step(10, 20, 3, &mut rng) as usize - 7] += 1;
        }
        assert_eq!(counts[3], 0);
        for (i, &c) in counts.iter().enumerate() {
            if i != 3 {
                assert!((c as i64 - 11_667).abs() < 600, "{counts:?}");
            }
        }
    }

    #[test]
    fn select_keeps_best_and_breaks_ties_by_age() {
        let pool = vec![with_fitness(0, 5.0), with_fitness(1, 3.0), with_fitness(2, 9.0)];
        let ids: Vec<u64> = select(pool.clone(), 2).iter().map(|i| i.id).collect();
        assert_eq!(ids, vec![2, 0]);
        assert_eq!(select(pool.clone(), 3).len(), 3);
        let tie = vec![with_fitness(5, 1.0), with_fitness(3, 2.0), with_fitness(4, 1.0)];
        let ids: Vec<u64> = select(tie, 2).iter().map(|i| i.id).collect();
        assert_eq!(ids, vec![3, 4]);
    }

    #[test]
    fn schedule_decays_to_floor() {
        let c = EaConfig { iterations: 10, ..EaConfig::default() };
        assert_eq!(c.schedule(0), (0.05, 3));
        let (p, l) = c.schedule(5);
        assert!((p - 0.025).abs() < 1e-12);
        assert_eq!(l, 2);
        assert_eq!(c.schedule(9).1, 1);
    }

    #[test]
    fn config_validation() {
        assert!(EaConfig::default().validate().is_ok());
        assert!(EaConfig { population: 0, ..EaConfig::default() }.validate().is_err());
        assert!(EaConfig { children: 0, ..EaConfig::default() }.validate().is_err());
        assert!(EaConfig { p0: 0.0, ..EaConfig::default() }.validate().is_err());
        assert!(EaConfig { p0: 1.5, ..EaConfig::default() }.validate().is_err());
        assert!(EaConfig { lambda0: 0.5, ..EaConfig::default() }.validate().is_err());
        let w = Microbench::new(MicroConfig::default());
        assert!(ThroughputEvaluator::new(&w, 1, Duration::ZERO, Duration::ZERO, 1).is_err());
    }

    /// Fitness that depends only on table contents, so tests are exact.
    fn synthetic(ind: &Individual) -> Result<f64, TrainError> {
        let dirty = ind.cc.rows.values().filter(|r| r.read_version == ReadVersion::DirtyRead).count();
        let waits: u32 = ind.cc.rows.values().flat_map(|r| &r.wait_targets).map(|w| w.ordinal(12)).sum();
        Ok(1000.0 + dirty as f64 * 10.0 - waits as f64 * 0.1)
    }

    #[test]
    fn zero_iterations_returns_best_seed() {
        let s = TpccLite::schema_spec();
        let c = EaConfig { iterations: 0, ..EaConfig::default() };
        let out = train(&c, &s, &mut synthetic, |_| {}).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.candidates.len(), 3);
        let best_seed = out.seed_fitness.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(out.best.fitness, Some(best_seed));
    }

    #[test]
    fn best_so_far_is_monotone_and_runs_reproduce() {
        let s = TpccLite::schema_spec();
        let c = EaConfig { iterations: 15, seed: 9, ..EaConfig::default() };
        let a = train(&c, &s, &mut synthetic, |_| {}).unwrap();
        let b = train(&c, &s, &mut synthetic, |_| {}).unwrap();
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.candidates.len(), 8 + 15 * 32);
        for w in a.history.windows(2) {
            assert!(w[1].best_fitness >= w[0].best_fitness);
        }
        assert!(a.best.fitness.unwrap() >= a.seed_fitness.iter().cloned().fold(f64::MIN, f64::max));
        let other = train(&EaConfig { seed: 10, ..c }, &s, &mut synthetic, |_| {}).unwrap();
        assert_ne!(a.candidates, other.candidates);
    }

    #[test]
    fn history_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let row = HistoryRow { iteration: 0, best_fitness: 2.5, mean_fitness: 1.0, p: 0.05, lambda: 3, best_policy_hash: "ab".into() };
        write_history_csv(&path, &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iteration,best_fitness,mean_fitness,p,lambda,best_policy_hash");
        assert_eq!(text.lines().nth(1).unwrap(), "0,2.5,1.0,0.05,3,ab");
    }

    #[test]
    fn single_thread_evaluation_has_no_aborts() {
        let w = Microbench::new(MicroConfig { theta: 0.0, ..MicroConfig::default() });
        let s = w.schema();
        let mut e = ThroughputEvaluator::new(&w, 1, Duration::ZERO, Duration::from_millis(200), 1).unwrap();
        let f = e.evaluate(&seed_individual(&s, SeedKind::Occ)).unwrap();
        assert!(f > 0.0);
        assert_eq!(e.last.as_ref().unwrap().stats.total_aborts(), 0);
        assert_eq!(e.engine().store().len(crate::store::TableId(0)).unwrap(), 4096);
    }

    proptest! {
        #[test]
        fn mutation_stays_in_domain(seed in any::<u64>(), p in 0.0f64..=1.0, lambda in 1u32..6, kind in 0usize..3, micro in any::<bool>()) {
            let s = if micro { Microbench::schema_for(10) } else { TpccLite::schema_spec() };
            let alphas = AlphaSet::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ind = seed_individual(&s, SeedKind::ALL[kind]);
            for _ in 0..3 {
                ind = mutate(&ind, &s, &alphas, p, lambda, &mut rng, 0);
                prop_assert!(validate_table(&s, &ind.cc, &ind.backoff).is_ok());
                prop_assert!(ind.backoff.entries.values().all(|a| alphas.contains(*a) && *a >= Alpha::ZERO));
            }
        }
    }
}
