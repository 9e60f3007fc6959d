use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsp_bench::report::{emit_report, ConfigEcho, Format, Report};
use tsp_bench::{run_benchmark, BenchError, RunConfig};
use tsp_core::runtime::Strategy;
use tsp_core::scheduler::{DecisionThresholds, SchedulingDecision};
use tsp_workloads::io::write_events;
use tsp_workloads::{parse_script, WorkloadKind};

#[derive(Parser)]
#[command(name = "bench", about = "Transactional stream processing benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a workload on the engine and report metrics.
    Run(RunArgs),
    /// Write a generated event stream to a file.
    Gen {
        #[command(flatten)]
        w: WorkloadArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct WorkloadArgs {
    /// sl, gs, gs-window, gs-nondet, tp or dynamic:<script>
    #[arg(long)]
    workload: String,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    abort: Option<f64>,
    #[arg(long)]
    len: Option<usize>,
    /// Cost of each value function in microseconds.
    #[arg(long)]
    cost: Option<u64>,
    #[arg(long)]
    multi: Option<usize>,
    /// Events per batch.
    #[arg(long)]
    interval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total events (default: one batch, or the script length).
    #[arg(long)]
    events: Option<usize>,
    /// Total batches; overrides --events.
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    keys: Option<u64>,
    #[arg(long)]
    transfer_ratio: Option<f64>,
    #[arg(long)]
    nondet_ratio: Option<f64>,
    /// Window range in timestamps (gs-window).
    #[arg(long)]
    window: Option<u64>,
    /// Events between window readers (gs-window).
    #[arg(long)]
    trigger: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    w: WorkloadArgs,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// auto, {S|NS}/{F|C}/{E|L}, nested or nested:<file>
    #[arg(long, default_value = "auto")]
    strategy: String,
    /// Force speculative scheduling on or off.
    #[arg(long)]
    speculation: Option<bool>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Arrival displacement bound inside each batch.
    #[arg(long, default_value_t = 0)]
    shuffle: usize,
    #[arg(long)]
    verify: bool,
    /// Report path; `.json` writes JSON, anything else CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

fn config(w: &WorkloadArgs) -> Result<RunConfig, BenchError> {
    let mut cfg = match w.workload.strip_prefix("dynamic:") {
        Some(path) => RunConfig::dynamic(parse_script(&read(Path::new(path))?)?),
        None => RunConfig::new(w.workload.parse::<WorkloadKind>()?),
    };
    let k = &mut cfg.knobs;
    let dynamic = w.workload.starts_with("dynamic:");
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = w.$flag { k.$field = v; })* };
    }
    set!(theta => theta, abort => abort_ratio, len => txn_len, cost => udf_cost_us, multi => multi_access,
         interval => interval, seed => seed, keys => key_space, transfer_ratio => transfer_ratio,
         nondet_ratio => nondet_ratio, window => window_size, trigger => trigger_period);
    if !dynamic {
        k.events = w.events.unwrap_or(k.interval);
        if let Some(b) = w.batches {
            k.events = b * k.interval;
        }
    }
    Ok(cfg)
}

fn strategy(s: &str) -> Result<Strategy, BenchError> {
    let bad = |e: String| BenchError::Config(e);
    if s == "auto" {
        return Ok(Strategy::Auto);
    }
    if s == "nested" {
        return Ok(Strategy::Nested(BTreeMap::new()));
    }
    if let Some(path) = s.strip_prefix("nested:") {
        let mut map = BTreeMap::new();
        for (i, raw) in read(Path::new(path))?.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (g, d) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("{path}:{}: expected group = strategy", i + 1)))?;
            let g: u32 = g.trim().parse().map_err(|e| bad(format!("{path}:{}: {e}", i + 1)))?;
            let d: SchedulingDecision = d.trim().parse().map_err(|e| bad(format!("{path}:{}: {e}", i + 1)))?;
            map.insert(g, d);
        }
        return Ok(Strategy::Nested(map));
    }
    s.parse::<SchedulingDecision>()
        .map(Strategy::Forced)
        .map_err(|e| bad(e.to_string()))
}

fn run(a: RunArgs) -> Result<bool, BenchError> {
    let mut cfg = config(&a.w)?;
    cfg.threads = a.threads;
    cfg.strategy = strategy(&a.strategy)?;
    cfg.speculation = a.speculation;
    cfg.shuffle = a.shuffle;
    cfg.verify = a.verify;
    if let Some(p) = &a.thresholds {
        cfg.thresholds = DecisionThresholds::parse(&read(p)?).map_err(|e| BenchError::Config(e.to_string()))?;
    }
    cfg.validate()?;
    let out = run_benchmark(&cfg)?;
    let m = &out.metrics;
    // A closed pipe on stdout is not an error worth a panic.
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "{} events in {:.3}s: {:.0} events/s, p50 {:.2}ms p95 {:.2}ms p99 {:.2}ms, {} aborted",
        m.events, m.wall_s, m.throughput, m.p50_ms, m.p95_ms, m.p99_ms, m.aborted_txns
    );
    for line in &m.decision_trace {
        let _ = writeln!(stdout, "{line}");
    }
    let passed = out.verify.as_ref().map_or(true, |r| r.passed());
    if let Some(r) = &out.verify {
        let _ = writeln!(stdout, "{r}");
    }
    if let Some(path) = &a.out {
        let report = Report {
            config: ConfigEcho::from(&cfg),
            metrics: out.metrics.clone(),
            verified: out.verify.as_ref().map(|r| r.passed()),
        };
        emit_report(&report, Format::from_path(path), path)?;
    }
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Gen { w, out } => config(&w).and_then(|cfg| {
            cfg.validate()?;
            let events = cfg.events()?;
            let header = [format!("workload={}", w.workload), cfg.knobs.describe()];
            let f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            write_events(f, &header, &events)?;
            Ok(true)
        }),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (BenchError::Config(_) | BenchError::Workload(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
