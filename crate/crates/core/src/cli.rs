//! Command-line front end. [`run`] returns the process exit code so the
//! commands can be tested in-process.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{self, BenchConfig, LatencySummary};
use crate::executor::{CommitLog, ExecConfig};
use crate::policy::{
    parse_policy, peek_schema_name, policy_hash, seed_backoff, seed_policy, serialize_policy, BackoffPolicyTable,
    CcPolicyTable, PolicyError, SeedKind, WorkloadSchema,
};
use crate::trainer::{self, EaConfig, Evaluator, SimEvaluator, ThroughputEvaluator};
use crate::workloads::{oracle, MicroConfig, Microbench, TpccConfig, TpccLite, Workload};

pub const RESULT_FORMAT: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "lcc", version, about = "Learned concurrency control benchmark and trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a workload and report throughput, aborts and latency.
    Bench(BenchArgs),
    /// Search for a policy with the evolutionary trainer.
    Train(TrainArgs),
    /// Check a commit log for serializability.
    Check {
        log: PathBuf,
    },
    /// Print a policy as a table.
    Show(ShowArgs),
}

#[derive(Debug, Clone, Args)]
struct WorkloadArgs {
    /// `tpcc` or `micro`.
    #[arg(long, default_value = "tpcc")]
    workload: String,
    /// TPC-C warehouses.
    #[arg(long, default_value_t = 1)]
    warehouses: u32,
    /// Microbenchmark Zipf exponent for the hot access.
    #[arg(long, default_value_t = 0.8)]
    theta: f64,
    /// Microbenchmark hot-table size.
    #[arg(long, default_value_t = 4096)]
    hot_keys: u64,
    /// Give each worker its own slice of the hot table.
    #[arg(long)]
    disjoint_hot: bool,
}

impl WorkloadArgs {
    fn build(&self, threads: u32) -> Result<Arc<dyn Workload>, String> {
        match self.workload.as_str() {
            "tpcc" | "tpcc-lite" => {
                if self.warehouses == 0 {
                    return Err("--warehouses must be ≥ 1".into());
                }
                Ok(Arc::new(TpccLite::new(TpccConfig { warehouses: self.warehouses, ..TpccConfig::default() })))
            }
            "micro" | "microbench" => {
                if self.theta.is_nan() || self.theta < 0.0 || self.hot_keys == 0 {
                    return Err("--theta must be ≥ 0 and --hot-keys ≥ 1".into());
                }
                Ok(Arc::new(Microbench::new(MicroConfig {
                    theta: self.theta,
                    hot_keys: self.hot_keys,
                    disjoint_hot: self.disjoint_hot.then_some(threads),
                    ..MicroConfig::default()
                })))
            }
            other => Err(format!("unknown workload `{other}` (expected tpcc or micro)")),
        }
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value_t = 8)]
    threads: u32,
    /// Measured run length.
    #[arg(long, default_value_t = 2.0)]
    seconds: f64,
    /// Unmeasured lead-in before each run.
    #[arg(long, default_value_t = 0.0)]
    warmup: f64,
    /// Policy file; overrides --seed-policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Built-in policy: occ, 2pl or pipeline.
    #[arg(long, default_value = "occ")]
    seed_policy: String,
    #[arg(long, default_value_t = 1)]
    runs: u32,
    /// Commit log path; with several runs, `.N` is appended per run.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    rng_seed: u64,
    /// Result document path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value_t = 8)]
    threads: u32,
    /// Measure window per evaluation.
    #[arg(long, default_value_t = 3.0)]
    seconds: f64,
    /// Warmup before each measure window.
    #[arg(long, default_value_t = 1.0)]
    warmup: f64,
    #[arg(long, default_value_t = 300)]
    iterations: u32,
    #[arg(long, default_value_t = 8)]
    population: usize,
    #[arg(long, default_value_t = 4)]
    children: usize,
    #[arg(long, default_value_t = 0.05)]
    p0: f64,
    #[arg(long, default_value_t = 3.0)]
    lambda0: f64,
    /// Re-measure survivors every iteration.
    #[arg(long)]
    reevaluate: bool,
    /// Use the deterministic simulator with this many ticks per evaluation
    /// instead of wall-clock throughput.
    #[arg(long)]
    sim_ticks: Option<u64>,
    #[arg(long, default_value_t = 1)]
    rng_seed: u64,
    /// Receives best_policy.json and history.csv.
    #[arg(long, default_value = "train-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ShowArgs {
    /// Policy file to print.
    policy: Option<PathBuf>,
    /// Print a built-in policy instead (needs --workload).
    #[arg(long)]
    seed_policy: Option<String>,
    #[arg(long)]
    workload: Option<String>,
    /// Print the JSON document instead of the table.
    #[arg(long)]
    json: bool,
}

/// Schema for a policy file's `schema` field.
pub fn schema_by_name(name: &str) -> Option<WorkloadSchema> {
    let tpcc = TpccLite::schema_spec();
    let micro = Microbench::schema_for(MicroConfig::default().types);
    [tpcc, micro].into_iter().find(|s| s.name() == name)
}

#[derive(Debug)]
enum CliError {
    /// Exit code 2.
    Usage(String),
    /// Exit code 1.
    Failed(String),
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Debug, Serialize)]
struct TypeResult {
    name: String,
    commits: u64,
    aborts: u64,
    latency: LatencySummary,
}

#[derive(Debug, Serialize)]
struct RunResult {
    throughput: f64,
    commits: u64,
    aborts: u64,
    dependency_aborts: u64,
    validation_aborts: u64,
    rollback_limit_aborts: u64,
    measured_seconds: f64,
    types: Vec<TypeResult>,
    timeline: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log: Option<String>,
}

#[derive(Debug, Serialize)]
struct BenchResult {
    format: u32,
    kind: &'static str,
    workload: String,
    schema: String,
    policy_hash: String,
    threads: u32,
    seconds: f64,
    rng_seed: u64,
    median_throughput: f64,
    runs: Vec<RunResult>,
}

fn load_policy(
    path: Option<&Path>,
    seed: &str,
    schema: &WorkloadSchema,
) -> Result<(CcPolicyTable, BackoffPolicyTable), CliError> {
    match path {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            parse_policy(&bytes, schema).map_err(|e| match e {
                PolicyError::SchemaMismatch { found, expected } => CliError::Usage(format!(
                    "policy schema `{found}` does not match workload schema `{expected}`"
                )),
                e => CliError::Usage(format!("{}: {e}", p.display())),
            })
        }
        None => {
            let kind = SeedKind::parse(seed).ok_or_else(|| CliError::Usage(format!("unknown seed policy `{seed}`")))?;
            Ok((seed_policy(schema, kind), seed_backoff(schema)))
        }
    }
}

fn duration(secs: f64, what: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(secs).map_err(|_| CliError::Usage(format!("{what} must be a non-negative number of seconds")))
}

fn log_path(base: &Path, run: u32, runs: u32) -> PathBuf {
    if runs == 1 {
        base.to_path_buf()
    } else {
        let mut s = base.as_os_str().to_owned();
        s.push(format!(".{run}"));
        PathBuf::from(s)
    }
}

fn create_parent(path: &Path) -> io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir),
        _ => Ok(()),
    }
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.threads == 0 {
        return Err(CliError::Usage("--threads must be ≥ 1".into()));
    }
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be ≥ 1".into()));
    }
    let measure = duration(a.seconds, "--seconds")?;
    if measure.is_zero() {
        return Err(CliError::Usage("--seconds must be > 0".into()));
    }
    let warmup = duration(a.warmup, "--warmup")?;
    let workload = a.workload.build(a.threads).map_err(CliError::Usage)?;
    let schema = workload.schema();
    let (cc, backoff) = load_policy(a.policy.as_deref(), &a.seed_policy, &schema)?;
    let config = BenchConfig {
        threads: a.threads,
        warmup,
        measure,
        seed: a.rng_seed,
        keep_log: a.log.is_some(),
        swaps: Vec::new(),
    };
    let mut runs = Vec::new();
    for i in 0..a.runs {
        let engine = bench::build_engine(workload.as_ref(), cc.clone(), backoff.clone(), ExecConfig::realtime(), false)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let cfg = BenchConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        let report = bench::run(&engine, workload.as_ref(), &cfg);
        let log = match &a.log {
            Some(base) => {
                let path = log_path(base, i, a.runs);
                create_parent(&path)?;
                CommitLog::new(report.log.clone()).write_to(&mut io::BufWriter::new(fs::File::create(&path)?))?;
                Some(path.display().to_string())
            }
            None => None,
        };
        let s = &report.stats;
        runs.push(RunResult {
            throughput: report.throughput(),
            commits: s.total_commits(),
            aborts: s.total_aborts(),
            dependency_aborts: s.dependency_aborts,
            validation_aborts: s.validation_aborts,
            rollback_limit_aborts: s.rollback_limit_aborts,
            measured_seconds: report.measured_secs,
            types: schema
                .txn_types()
                .iter()
                .enumerate()
                .map(|(t, spec)| TypeResult {
                    name: spec.name.clone(),
                    commits: s.commits[t],
                    aborts: s.aborts[t],
                    latency: report.latency[t],
                })
                .collect(),
            timeline: report.timeline.clone(),
            log,
        });
    }
    let throughputs: Vec<f64> = runs.iter().map(|r| r.throughput).collect();
    let result = BenchResult {
        format: RESULT_FORMAT,
        kind: "bench-result",
        workload: a.workload.workload.clone(),
        schema: schema.name().to_string(),
        policy_hash: policy_hash(&schema, &cc, &backoff),
        threads: a.threads,
        seconds: a.seconds,
        rng_seed: a.rng_seed,
        median_throughput: bench::median(&throughputs),
        runs,
    };
    let doc = serde_json::to_string_pretty(&result).expect("result serializes");
    match &a.out {
        Some(path) => {
            create_parent(path)?;
            fs::write(path, format!("{doc}\n"))?;
            writeln!(out, "median throughput {:.1} tx/s over {} run(s); result in {}", result.median_throughput, a.runs, path.display())?;
        }
        None => writeln!(out, "{doc}")?,
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let workload = a.workload.build(a.threads).map_err(CliError::Usage)?;
    let schema = workload.schema();
    let config = EaConfig {
        population: a.population,
        children: a.children,
        iterations: a.iterations,
        p0: a.p0,
        lambda0: a.lambda0,
        seed: a.rng_seed,
        reevaluate: a.reevaluate,
        ..EaConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut evaluator: Box<dyn Evaluator + '_> = match a.sim_ticks {
        Some(ticks) => Box::new(SimEvaluator::new(workload.clone(), a.threads, ticks, a.rng_seed)),
        None => Box::new(
            ThroughputEvaluator::new(
                workload.as_ref(),
                a.threads,
                duration(a.warmup, "--warmup")?,
                duration(a.seconds, "--seconds")?,
                a.rng_seed,
            )
            .map_err(|e| CliError::Usage(e.to_string()))?,
        ),
    };
    fs::create_dir_all(&a.out_dir)?;
    let outcome = trainer::train(&config, &schema, evaluator.as_mut(), |row| {
        eprintln!("iter {:>4}  best {:>12.1}  mean {:>12.1}  p {:.4}  λ {}", row.iteration, row.best_fitness, row.mean_fitness, row.p, row.lambda);
    })
    .map_err(|e| CliError::Failed(e.to_string()))?;
    let policy_path = a.out_dir.join("best_policy.json");
    fs::write(&policy_path, serialize_policy(&schema, &outcome.best.cc, &outcome.best.backoff))?;
    trainer::write_history_csv(&a.out_dir.join("history.csv"), &outcome.history)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    writeln!(
        out,
        "best fitness {:.1} (policy {}) written to {}",
        outcome.best.fitness.unwrap_or(0.0),
        outcome.best.hash(&schema),
        policy_path.display()
    )?;
    Ok(())
}

/// 0 = serializable, 1 = cycle, 2 = unreadable or malformed log.
fn cmd_check(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) => {
            writeln!(out, "MALFORMED: cannot open {}: {e}", path.display())?;
            return Ok(2);
        }
    };
    let log = match CommitLog::read_from(io::BufReader::new(file)) {
        Ok(l) => l,
        Err(e) => {
            writeln!(out, "MALFORMED: {e}")?;
            return Ok(2);
        }
    };
    match oracle::check_serializable(&log.records) {
        Ok(oracle::Verdict::Serializable(_)) => {
            writeln!(out, "OK ({} transactions)", log.len())?;
            Ok(0)
        }
        Ok(oracle::Verdict::Cycle(cycle)) => {
            let mut path: Vec<String> = cycle.iter().map(u64::to_string).collect();
            path.push(cycle[0].to_string());
            writeln!(out, "CYCLE: {}", path.join(" -> "))?;
            Ok(1)
        }
        Err(e) => {
            writeln!(out, "MALFORMED: {e}")?;
            Ok(2)
        }
    }
}

/// One line per state, then one per backoff entry.
pub fn render_policy(schema: &WorkloadSchema, cc: &CcPolicyTable, backoff: &BackoffPolicyTable) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let names: Vec<&str> = schema.txn_types().iter().map(|t| t.name.as_str()).collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0);
    for (&(t, a), row) in &cc.rows {
        let waits: Vec<String> = row.wait_targets.iter().map(|w| w.to_string()).collect();
        let read = match row.read_version {
            crate::policy::ReadVersion::CleanRead => "CLEAN",
            crate::policy::ReadVersion::DirtyRead => "DIRTY",
        };
        let write = match row.write_visibility {
            crate::policy::WriteVisibility::Private => "PRIVATE",
            crate::policy::WriteVisibility::Public => "PUBLIC",
        };
        let _ = writeln!(
            s,
            "{:<width$} {:>3}  wait=[{}]  {} {} ev={}",
            names[t],
            a,
            waits.join(" "),
            read,
            write,
            row.early_validate as u8
        );
    }
    for (&(t, b, o), alpha) in &backoff.entries {
        let _ = writeln!(s, "backoff {:<width$} aborts={:<2} {:?} α={}", names[t], b, o, alpha);
    }
    s
}

fn cmd_show(a: ShowArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (schema, cc, backoff) = match (&a.policy, &a.seed_policy) {
        (Some(path), _) => {
            let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let name = peek_schema_name(&bytes)
                .ok_or_else(|| CliError::Usage(format!("{}: not a policy document", path.display())))?;
            let schema = schema_by_name(&name).ok_or_else(|| CliError::Usage(format!("unknown schema `{name}`")))?;
            let (cc, backoff) = parse_policy(&bytes, &schema).map_err(|e| CliError::Usage(e.to_string()))?;
            (schema, cc, backoff)
        }
        (None, Some(seed)) => {
            let wl = a.workload.as_deref().unwrap_or("tpcc");
            let schema = match wl {
                "tpcc" | "tpcc-lite" => TpccLite::schema_spec(),
                "micro" | "microbench" => Microbench::schema_for(MicroConfig::default().types),
                other => return Err(CliError::Usage(format!("unknown workload `{other}`"))),
            };
            let (cc, backoff) = load_policy(None, seed, &schema)?;
            (schema, cc, backoff)
        }
        (None, None) => return Err(CliError::Usage("give a policy file or --seed-policy".into())),
    };
    if a.json {
        out.write_all(&serialize_policy(&schema, &cc, &backoff))?;
    } else {
        write!(out, "{}", render_policy(&schema, &cc, &backoff))?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Bench(a) => cmd_bench(a, out).map(|_| 0),
        Command::Train(a) => cmd_train(a, out).map(|_| 0),
        Command::Check { log } => cmd_check(&log, out),
        Command::Show(a) => cmd_show(a, out).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(CliError::Failed(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}
