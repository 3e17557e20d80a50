//! Python bindings: policies, benchmark and simulator runs, log checking and
//! simulated training.

use std::fs;
use std::io::BufWriter;
use std::sync::Arc;
use std::time::Duration;

use engine::bench::{self as bench_run, BenchConfig};
use engine::executor::{sim, Clock, CommitLog, Engine, ExecConfig, PolicySet};
use engine::policy::{
    parse_policy, policy_hash, seed_backoff, seed_policy, serialize_policy, state_count as count_states, AlphaSet,
    BackoffPolicyTable, CcPolicyTable, SeedKind, WorkloadSchema,
};
use engine::store::StoreConfig;
use engine::trainer::{self, EaConfig, Individual, SimEvaluator};
use engine::workloads::micro::{MicroConfig, Microbench};
use engine::workloads::tpcc::{TpccConfig, TpccLite};
use engine::workloads::{oracle, Workload};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn schema_for(workload: &str) -> PyResult<WorkloadSchema> {
    match workload {
        "tpcc" | "tpcc-lite" => Ok(TpccLite::schema_spec()),
        "micro" | "microbench" => Ok(Microbench::schema_for(MicroConfig::default().types)),
        other => Err(value_error(format!("unknown workload `{other}`"))),
    }
}

fn build_workload(workload: &str, warehouses: u32, theta: f64, hot_keys: u64, small: bool) -> PyResult<Arc<dyn Workload>> {
    match workload {
        "tpcc" | "tpcc-lite" => {
            let base = if small { TpccConfig::tiny() } else { TpccConfig::default() };
            Ok(Arc::new(TpccLite::new(TpccConfig { warehouses, ..base })))
        }
        "micro" | "microbench" => Ok(Arc::new(Microbench::new(MicroConfig { theta, hot_keys, ..MicroConfig::default() }))),
        other => Err(value_error(format!("unknown workload `{other}`"))),
    }
}

/// A concurrency-control policy table plus its backoff table.
#[pyclass(module = "learned_cc", frozen, from_py_object)]
#[derive(Clone)]
struct Policy {
    schema: WorkloadSchema,
    cc: CcPolicyTable,
    backoff: BackoffPolicyTable,
}

impl Policy {
    fn check_schema(&self, schema: &WorkloadSchema) -> PyResult<()> {
        if self.schema.name() != schema.name() {
            return Err(value_error(format!(
                "policy schema `{}` does not match workload schema `{}`",
                self.schema.name(),
                schema.name()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl Policy {
    /// Built-in policy: "occ", "2pl" or "pipeline".
    #[staticmethod]
    #[pyo3(signature = (kind, workload = "tpcc"))]
    fn seed(kind: &str, workload: &str) -> PyResult<Self> {
        let schema = schema_for(workload)?;
        let kind = SeedKind::parse(kind).ok_or_else(|| value_error(format!("unknown seed policy `{kind}`")))?;
        Ok(Policy { cc: seed_policy(&schema, kind), backoff: seed_backoff(&schema), schema })
    }

    /// Parses a policy JSON document for `workload`.
    #[staticmethod]
    #[pyo3(signature = (text, workload = "tpcc"))]
    fn parse(text: &str, workload: &str) -> PyResult<Self> {
        let schema = schema_for(workload)?;
        let (cc, backoff) = parse_policy(text.as_bytes(), &schema).map_err(value_error)?;
        Ok(Policy { schema, cc, backoff })
    }

    #[staticmethod]
    #[pyo3(signature = (path, workload = "tpcc"))]
    fn load(path: &str, workload: &str) -> PyResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Self::parse(&text, workload)
    }

    fn to_json(&self) -> String {
        String::from_utf8(serialize_policy(&self.schema, &self.cc, &self.backoff)).expect("policy JSON is UTF-8")
    }

    fn save(&self, path: &str) -> PyResult<()> {
        fs::write(path, self.to_json()).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn schema(&self) -> &str {
        self.schema.name()
    }

    #[getter]
    fn hash(&self) -> String {
        policy_hash(&self.schema, &self.cc, &self.backoff)
    }

    fn render(&self) -> String {
        engine::cli::render_policy(&self.schema, &self.cc, &self.backoff)
    }

    /// A mutated copy: each cell changes with probability `p`, wait targets
    /// and α values by at most `lam` steps.
    #[pyo3(signature = (p, lam = 1, seed = 0))]
    fn mutate(&self, p: f64, lam: u32, seed: u64) -> PyResult<Self> {
        if !(p > 0.0 && p <= 1.0) || lam < 1 {
            return Err(value_error("need 0 < p ≤ 1 and lam ≥ 1"));
        }
        let parent = Individual { id: 0, cc: self.cc.clone(), backoff: self.backoff.clone(), fitness: None };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let child = trainer::mutate(&parent, &self.schema, &AlphaSet::default(), p, lam, &mut rng, 0);
        Ok(Policy { schema: self.schema.clone(), cc: child.cc, backoff: child.backoff })
    }

    fn __eq__(&self, other: &Policy) -> bool {
        self.schema.name() == other.schema.name() && self.cc == other.cc && self.backoff == other.backoff
    }

    fn __repr__(&self) -> String {
        format!("Policy(schema={:?}, hash={:?})", self.schema.name(), &self.hash()[..12])
    }
}

/// Number of (type, access) states in a workload's policy table.
#[pyfunction]
fn state_count(workload: &str) -> PyResult<usize> {
    Ok(count_states(&schema_for(workload)?))
}

fn write_log(records: Vec<engine::executor::CommitRecord>, path: &str) -> PyResult<()> {
    let file = fs::File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    CommitLog::new(records).write_to(BufWriter::new(file)).map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Runs real worker threads and returns throughput and abort counts.
#[pyfunction(name = "bench")]
#[pyo3(signature = (workload = "micro", policy = None, threads = 2, seconds = 0.5, seed = 1, theta = 0.8, hot_keys = 4096, warehouses = 1, log_path = None))]
#[allow(clippy::too_many_arguments)]
fn run_bench<'py>(
    py: Python<'py>,
    workload: &str,
    policy: Option<Policy>,
    threads: u32,
    seconds: f64,
    seed: u64,
    theta: f64,
    hot_keys: u64,
    warehouses: u32,
    log_path: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    if threads == 0 || seconds.is_nan() || seconds <= 0.0 {
        return Err(value_error("need threads ≥ 1 and seconds > 0"));
    }
    let wl = build_workload(workload, warehouses, theta, hot_keys, false)?;
    let schema = wl.schema();
    let policy = match policy {
        Some(p) => p,
        None => Policy { cc: seed_policy(&schema, SeedKind::Occ), backoff: seed_backoff(&schema), schema: schema.clone() },
    };
    policy.check_schema(&schema)?;
    let report = py.detach(|| {
        let engine = bench_run::build_engine(wl.as_ref(), policy.cc.clone(), policy.backoff.clone(), ExecConfig::realtime(), false)
            .map_err(value_error)?;
        let config = BenchConfig {
            threads,
            measure: Duration::from_secs_f64(seconds),
            seed,
            keep_log: log_path.is_some(),
            ..BenchConfig::default()
        };
        Ok::<_, PyErr>(bench_run::run(&engine, wl.as_ref(), &config))
    })?;
    let d = PyDict::new(py);
    d.set_item("throughput", report.throughput())?;
    d.set_item("commits", report.stats.total_commits())?;
    d.set_item("aborts", report.stats.total_aborts())?;
    d.set_item("commits_by_type", report.stats.commits.clone())?;
    d.set_item("timeline", report.timeline.clone())?;
    if let Some(path) = log_path {
        write_log(report.log, path)?;
    }
    Ok(d)
}

/// Deterministic single-threaded run on a logical clock.
#[pyfunction]
#[pyo3(signature = (workload = "micro", policy = None, workers = 4, ticks = 5000, seed = 1, theta = 0.8, hot_keys = 64, log_path = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    workload: &str,
    policy: Option<Policy>,
    workers: u32,
    ticks: u64,
    seed: u64,
    theta: f64,
    hot_keys: u64,
    log_path: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let wl = build_workload(workload, 1, theta, hot_keys, true)?;
    let schema = wl.schema();
    let policy = match policy {
        Some(p) => p,
        None => Policy { cc: seed_policy(&schema, SeedKind::Occ), backoff: seed_backoff(&schema), schema: schema.clone() },
    };
    policy.check_schema(&schema)?;
    let set = PolicySet::new(&schema, policy.cc.clone(), policy.backoff.clone())
        .map_err(|v| value_error(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))?;
    let store = wl.build_store(StoreConfig::default(), true);
    let engine = Engine::with_clock(schema, store.clone(), set, ExecConfig::logical(), Clock::Logical(Default::default()));
    let streams = (0..workers).map(|i| wl.generator(seed, i) as sim::ProgramStream).collect();
    let report = sim::run(&engine, streams, sim::SimConfig { ticks, seed, keep_log: true, ..Default::default() });
    let serializable = oracle::check_serializable(&report.log).map_err(value_error)?.is_serializable();
    let d = PyDict::new(py);
    d.set_item("commits", report.stats.total_commits())?;
    d.set_item("aborts", report.stats.total_aborts())?;
    d.set_item("throughput", report.throughput())?;
    d.set_item("serializable", serializable)?;
    d.set_item("duplicate_versions", store.registry().map_or(0, |r| r.duplicates()))?;
    if let Some(path) = log_path {
        write_log(report.log, path)?;
    }
    Ok(d)
}

/// Checks a commit log: returns (0, "OK …"), (1, "CYCLE: …") or
/// (2, "MALFORMED: …").
#[pyfunction]
fn check_log(path: &str) -> (i32, String) {
    let mut out = Vec::new();
    let code = engine::cli::run(["lcc", "check", path], &mut out, &mut Vec::new());
    (code, String::from_utf8_lossy(&out).trim_end().to_string())
}

/// Evolutionary search with the deterministic simulator as fitness.
/// Returns the best policy and one dict per history row.
#[pyfunction]
#[pyo3(signature = (workload = "micro", iterations = 10, seed = 1, workers = 4, ticks = 1500, theta = 1.0, hot_keys = 64))]
#[allow(clippy::too_many_arguments)]
fn train_sim<'py>(
    py: Python<'py>,
    workload: &str,
    iterations: u32,
    seed: u64,
    workers: u32,
    ticks: u64,
    theta: f64,
    hot_keys: u64,
) -> PyResult<(Policy, Vec<Bound<'py, PyDict>>)> {
    let wl = build_workload(workload, 1, theta, hot_keys, true)?;
    let schema = wl.schema();
    let config = EaConfig { iterations, seed, ..EaConfig::default() };
    let mut eval = SimEvaluator::new(wl, workers, ticks, seed);
    let outcome = py.detach(|| trainer::train(&config, &schema, &mut eval, |_| {})).map_err(value_error)?;
    let rows = outcome
        .history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("iteration", r.iteration)?;
            d.set_item("best_fitness", r.best_fitness)?;
            d.set_item("mean_fitness", r.mean_fitness)?;
            d.set_item("p", r.p)?;
            d.set_item("lambda", r.lambda)?;
            d.set_item("best_policy_hash", &r.best_policy_hash)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((Policy { schema, cc: outcome.best.cc, backoff: outcome.best.backoff }, rows))
}

#[pymodule]
fn learned_cc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(state_count, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(check_log, m)?)?;
    m.add_function(wrap_pyfunction!(train_sim, m)?)?;
    Ok(())
}
