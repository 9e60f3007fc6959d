use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tsp_core::executor::{audit_transitions, Breakdown, Fault};
use tsp_core::runtime::{with_punctuations, Engine, EngineConfig, RuntimeError, Strategy};
use tsp_core::scheduler::DecisionThresholds;
use tsp_core::state::VersionedStateTable;
use tsp_workloads::{gen, gen_dynamic, initial_state, shuffle_within_batches, DynamicScript, Event, Knobs, Outcome, WorkloadError, WorkloadKind, WorkloadOp};

use crate::oracle::serial_oracle;
use crate::verify::{verify, EngineResult, VerifyReport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub enum WorkloadSpec {
    Static(WorkloadKind),
    Dynamic(DynamicScript),
}

impl WorkloadSpec {
    pub fn kind(&self) -> WorkloadKind {
        match self {
            WorkloadSpec::Static(k) => *k,
            WorkloadSpec::Dynamic(s) => s.kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    /// Base knobs; a dynamic script overrides the ramped ones per event.
    pub knobs: Knobs,
    pub threads: usize,
    pub strategy: Strategy,
    pub speculation: Option<bool>,
    pub thresholds: DecisionThresholds,
    pub verify: bool,
    /// Arrival displacement bound inside each batch; 0 keeps timestamp order.
    pub shuffle: usize,
    pub fault: Option<Fault>,
    pub log_transitions: bool,
    pub abort_estimate: Option<f64>,
    pub stall_timeout: Duration,
}

impl RunConfig {
    pub fn new(kind: WorkloadKind) -> Self {
        Self {
            workload: WorkloadSpec::Static(kind),
            knobs: Knobs::defaults(kind),
            threads: 1,
            strategy: Strategy::Auto,
            speculation: None,
            thresholds: DecisionThresholds::default(),
            verify: false,
            shuffle: 0,
            fault: None,
            log_transitions: false,
            abort_estimate: None,
            stall_timeout: Duration::from_secs(60),
        }
    }

    pub fn dynamic(script: DynamicScript) -> Self {
        let mut c = Self::new(script.kind);
        c.knobs = script.base.clone();
        c.workload = WorkloadSpec::Dynamic(script);
        c
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.threads == 0 {
            return Err(BenchError::Config("threads must be at least 1".into()));
        }
        self.knobs.validate(self.workload.kind())?;
        Ok(())
    }

    pub fn events(&self) -> Result<Vec<Event>, BenchError> {
        let events = match &self.workload {
            WorkloadSpec::Static(kind) => gen(*kind, &self.knobs)?,
            WorkloadSpec::Dynamic(s) => gen_dynamic(s.kind, &self.knobs, &s.phases)?,
        };
        if self.shuffle == 0 {
            return Ok(events);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.knobs.seed ^ 0x5eed);
        Ok(shuffle_within_batches(events, self.knobs.interval, self.shuffle, &mut rng))
    }

    pub fn strategy_label(&self) -> String {
        match &self.strategy {
            Strategy::Auto => "auto".into(),
            Strategy::Forced(d) => d.short(),
            Strategy::Nested(m) => {
                let parts: Vec<String> = m.iter().map(|(g, d)| format!("{g}={}", d.short())).collect();
                format!("nested:{}", parts.join(";"))
            }
        }
    }
}

/// Seconds per breakdown category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BreakdownSecs {
    pub useful: f64,
    pub sync: f64,
    pub lock: f64,
    pub construct: f64,
    pub explore: f64,
    pub abort: f64,
}

impl BreakdownSecs {
    pub fn total(&self) -> f64 {
        self.useful + self.sync + self.lock + self.construct + self.explore + self.abort
    }
}

impl From<&Breakdown> for BreakdownSecs {
    fn from(b: &Breakdown) -> Self {
        Self {
            useful: b.useful.as_secs_f64(),
            sync: b.sync.as_secs_f64(),
            lock: b.lock.as_secs_f64(),
            construct: b.construct.as_secs_f64(),
            explore: b.explore.as_secs_f64(),
            abort: b.abort.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch: usize,
    pub events: usize,
    pub wall_s: f64,
    pub throughput: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub breakdown: BreakdownSecs,
    pub decision: String,
    pub aborted: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub events: usize,
    pub wall_s: f64,
    /// Events per second over the whole run.
    pub throughput: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub breakdown: BreakdownSecs,
    /// Peak resident set in KiB, where the OS reports it.
    pub memory_hwm_kb: Option<u64>,
    pub decision_trace: Vec<String>,
    pub batches: Vec<BatchMetrics>,
    pub aborted_txns: usize,
}

/// Nearest-rank percentile in milliseconds.
pub fn percentile_ms(sorted: &[Duration], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1].as_secs_f64() * 1e3
}

fn memory_hwm_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub verify: Option<VerifyReport>,
    pub engine: EngineResult<Outcome>,
    /// Illegal transitions found in the log (needs `log_transitions`).
    pub fsm_violations: Vec<String>,
    /// Whether every batch ended with all vertices in EXE or ABT.
    pub all_settled: bool,
}

pub fn run_benchmark(cfg: &RunConfig) -> Result<RunOutcome, BenchError> {
    cfg.validate()?;
    let events = cfg.events()?;
    run_events(cfg, &events)
}

/// Runs a prepared stream; `cfg` supplies everything but the events.
pub fn run_events(cfg: &RunConfig, events: &[Event]) -> Result<RunOutcome, BenchError> {
    if cfg.threads == 0 {
        return Err(BenchError::Config("threads must be at least 1".into()));
    }
    let kind = cfg.workload.kind();
    let init = initial_state(kind, &cfg.knobs);
    let (op, reg) = WorkloadOp::new(kind, cfg.knobs.key_space, cfg.knobs.udf_cost_us)?;
    let table = VersionedStateTable::from_values(init.clone()).map_err(RuntimeError::from)?;
    let engine = Engine::new(
        &table,
        &reg,
        EngineConfig {
            threads: cfg.threads,
            strategy: cfg.strategy.clone(),
            thresholds: cfg.thresholds.clone(),
            speculation: cfg.speculation,
            abort_estimate: cfg.abort_estimate,
            log_transitions: cfg.log_transitions,
            fault: cfg.fault,
            stall_timeout: cfg.stall_timeout,
        },
    )?;
    let mut arrival: Vec<Event> = events.to_vec();
    arrival.sort_by_key(|e| e.arrival_index);
    let items = with_punctuations(arrival, cfg.knobs.interval);
    let start = Instant::now();
    let res = engine.run(&op, items)?;
    let wall = start.elapsed();

    let mut all_lat: Vec<Duration> = Vec::with_capacity(events.len());
    let mut batches = Vec::with_capacity(res.batches.len());
    let mut total = Breakdown::default();
    let mut trace = Vec::new();
    let mut fsm_violations = Vec::new();
    let mut all_settled = true;
    let mut aborted_txns = 0;
    for b in &res.batches {
        let mut lat = b.latencies.clone();
        lat.sort();
        all_lat.extend_from_slice(&lat);
        let wall_s = b.wall.as_secs_f64();
        batches.push(BatchMetrics {
            batch: b.index,
            events: b.events,
            wall_s,
            throughput: if wall_s > 0.0 { b.events as f64 / wall_s } else { 0.0 },
            p50_ms: percentile_ms(&lat, 0.50),
            p95_ms: percentile_ms(&lat, 0.95),
            p99_ms: percentile_ms(&lat, 0.99),
            breakdown: (&b.breakdown).into(),
            decision: b.decision_label(),
            aborted: b.aborted,
            rounds: b.rounds,
        });
        total += b.breakdown.clone();
        trace.extend(b.trace.iter().cloned());
        if let Err(e) = audit_transitions(&b.transitions) {
            fsm_violations.push(format!("batch {}: {e}", b.index));
        }
        all_settled &= b.all_settled;
        aborted_txns += b.aborted;
    }
    all_lat.sort();
    let metrics = Metrics {
        events: events.len(),
        wall_s: wall.as_secs_f64(),
        throughput: if wall.as_secs_f64() > 0.0 { events.len() as f64 / wall.as_secs_f64() } else { 0.0 },
        p50_ms: percentile_ms(&all_lat, 0.50),
        p95_ms: percentile_ms(&all_lat, 0.95),
        p99_ms: percentile_ms(&all_lat, 0.99),
        breakdown: (&total).into(),
        memory_hwm_kb: memory_hwm_kb(),
        decision_trace: trace,
        batches,
        aborted_txns,
    };
    let engine_result = EngineResult {
        state: table.latest_values(),
        committed: res.committed,
        outputs: res.outputs.into_iter().collect::<BTreeMap<_, _>>(),
    };
    let verify_report = if cfg.verify {
        // Same functions without the artificial cost.
        let (oop, oreg) = WorkloadOp::new(kind, cfg.knobs.key_space, 0)?;
        let want = serial_oracle(&oop, &oreg, &init, events, cfg.knobs.interval)?;
        Some(verify(&engine_result, &want))
    } else {
        None
    };
    Ok(RunOutcome {
        metrics,
        verify: verify_report,
        engine: engine_result,
        fsm_violations,
        all_settled,
    })
}
