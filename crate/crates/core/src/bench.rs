//! Multi-threaded benchmark driver.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::executor::{CommitRecord, Engine, ExecConfig, PolicySet, SwapError, TxnResult, Worker, WorkerStats};
use crate::policy::{BackoffPolicyTable, CcPolicyTable};
use crate::store::StoreConfig;
use crate::workloads::Workload;

/// Builds a freshly loaded engine running `cc`/`backoff` on the real clock.
pub fn build_engine(
    workload: &dyn Workload,
    cc: CcPolicyTable,
    backoff: BackoffPolicyTable,
    exec: ExecConfig,
    registry: bool,
) -> Result<Engine, SwapError> {
    let schema = workload.schema();
    if cc.schema_name != schema.name() {
        return Err(SwapError::SchemaMismatch { found: cc.schema_name, expected: schema.name().to_string() });
    }
    let policy = PolicySet::new(&schema, cc, backoff).map_err(SwapError::Invalid)?;
    let store = workload.build_store(StoreConfig::default(), registry);
    Ok(Engine::new(schema, store, policy, exec))
}

#[derive(Debug, Clone)]
pub struct PolicySwap {
    /// Offset from the start of the run.
    pub at: Duration,
    pub cc: CcPolicyTable,
    pub backoff: BackoffPolicyTable,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub threads: u32,
    /// Excluded from the throughput figure.
    pub warmup: Duration,
    pub measure: Duration,
    pub seed: u64,
    pub keep_log: bool,
    pub swaps: Vec<PolicySwap>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            threads: 8,
            warmup: Duration::ZERO,
            measure: Duration::from_secs(2),
            seed: 1,
            keep_log: false,
            swaps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles of `samples` (nanoseconds).
    pub fn from_nanos(mut samples: Vec<u64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_unstable();
        let pick = |q: f64| {
            let rank = ((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
            samples[rank - 1] as f64 / 1000.0
        };
        Self { samples: samples.len(), p50_us: pick(0.50), p90_us: pick(0.90), p99_us: pick(0.99) }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    /// Counts over the whole run, warmup included.
    pub stats: WorkerStats,
    /// Commits inside the measurement window.
    pub measured_commits: u64,
    pub measured_secs: f64,
    /// Per-type latency from first attempt to commit.
    pub latency: Vec<LatencySummary>,
    /// Commits completed in each wall-clock second of the run.
    pub timeline: Vec<u64>,
    /// Commit records in timestamp order, when requested.
    pub log: Vec<CommitRecord>,
}

impl BenchReport {
    /// Committed transactions per second over the measurement window.
    pub fn throughput(&self) -> f64 {
        if self.measured_secs <= 0.0 {
            return 0.0;
        }
        self.measured_commits as f64 / self.measured_secs
    }
}

struct WorkerOutput {
    stats: WorkerStats,
    latencies: Vec<Vec<u64>>,
    log: Vec<CommitRecord>,
}

/// Runs `config.threads` workers against `engine` for warmup + measure.
///
/// Scheduled swaps are applied from the calling thread; a swap that fails
/// validation panics, since callers validate tables up front.
pub fn run(engine: &Engine, workload: &dyn Workload, config: &BenchConfig) -> BenchReport {
    assert!(config.threads >= 1, "need at least one thread");
    let n_types = engine.schema().type_count();
    let total = config.warmup + config.measure;
    let stop = AtomicBool::new(false);
    let committed = AtomicU64::new(0);
    let timeline: Vec<AtomicU64> = (0..total.as_secs() + 2).map(|_| AtomicU64::new(0)).collect();
    let start = Instant::now();

    let (outputs, measured_commits, measured_secs) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.threads)
            .map(|id| {
                let (stop, committed, timeline) = (&stop, &committed, &timeline);
                let mut inputs = workload.generator(config.seed, id);
                s.spawn(move || {
                    let mut worker = Worker::new(engine, id);
                    let mut latencies = vec![Vec::new(); n_types];
                    let mut log = Vec::new();
                    while !stop.load(Ordering::Relaxed) {
                        let Some(program) = inputs.next() else { break };
                        let t = program.type_index();
                        let began = Instant::now();
                        if let TxnResult::Committed { record, .. } = worker.run_transaction(program, Some(stop)) {
                            let done = Instant::now();
                            committed.fetch_add(1, Ordering::Relaxed);
                            let sec = (done - start).as_secs() as usize;
                            timeline[sec.min(timeline.len() - 1)].fetch_add(1, Ordering::Relaxed);
                            latencies[t].push((done - began).as_nanos() as u64);
                            if config.keep_log {
                                log.push(record);
                            }
                        }
                    }
                    WorkerOutput { stats: worker.stats, latencies, log }
                })
            })
            .collect();

        let mut swaps: Vec<&PolicySwap> = config.swaps.iter().collect();
        swaps.sort_by_key(|s| s.at);
        let mut swaps = swaps.into_iter().peekable();
        let mut window_start: Option<(Instant, u64)> = None;
        loop {
            let now = start.elapsed();
            if window_start.is_none() && now >= config.warmup {
                window_start = Some((Instant::now(), committed.load(Ordering::Relaxed)));
            }
            while let Some(sw) = swaps.next_if(|sw| sw.at <= now) {
                engine.swap_policy(sw.cc.clone(), sw.backoff.clone()).expect("scheduled policy is valid");
            }
            if now >= total {
                break;
            }
            let mut next = total;
            if window_start.is_none() {
                next = next.min(config.warmup);
            }
            if let Some(sw) = swaps.peek() {
                next = next.min(sw.at);
            }
            std::thread::sleep((next - now).min(Duration::from_millis(50)));
        }
        let (w0, c0) = window_start.expect("window opened");
        let measured = (committed.load(Ordering::Relaxed) - c0, w0.elapsed().as_secs_f64());
        stop.store(true, Ordering::Relaxed);
        let outputs: Vec<WorkerOutput> = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        (outputs, measured.0, measured.1)
    });

    let mut stats = WorkerStats::new(n_types);
    let mut latencies = vec![Vec::new(); n_types];
    let mut log = Vec::new();
    for o in outputs {
        stats.merge(&o.stats);
        for (all, mine) in latencies.iter_mut().zip(o.latencies) {
            all.extend(mine);
        }
        log.extend(o.log);
    }
    log.sort_by_key(|r| r.ts);
    let mut timeline: Vec<u64> = timeline.iter().map(|c| c.load(Ordering::Relaxed)).collect();
    while timeline.len() > total.as_secs().max(1) as usize && timeline.last() == Some(&0) {
        timeline.pop();
    }
    BenchReport {
        stats,
        measured_commits,
        measured_secs,
        latency: latencies.into_iter().map(LatencySummary::from_nanos).collect(),
        timeline,
        log,
    }
}

/// Median of a non-empty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// `runs` independent runs, each on a freshly loaded engine.
pub fn run_repeated(
    workload: &dyn Workload,
    cc: &CcPolicyTable,
    backoff: &BackoffPolicyTable,
    config: &BenchConfig,
    runs: u32,
    registry: bool,
) -> Result<Vec<(Arc<Engine>, BenchReport)>, SwapError> {
    (0..runs)
        .map(|i| {
            let engine = Arc::new(build_engine(workload, cc.clone(), backoff.clone(), ExecConfig::realtime(), registry)?);
            let cfg = BenchConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
            let report = run(&engine, workload, &cfg);
            Ok((engine, report))
        })
        .collect()
}
