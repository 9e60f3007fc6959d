//! Punctuation-driven batch loop around a single transactional operator.
//!
//! Events are pre-processed and turned into state transactions as they
//! arrive; nothing touches the state table until a punctuation closes the
//! batch. The batch graph is then refined, a scheduling decision is taken,
//! the graph is executed and every cached event is post-processed.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::{debug, warn};
use thiserror::Error;

use crate::error::{CoreError, StateError};
use crate::executor::{
    execute_groups, has_cross_group_edges, BatchOutcome, Breakdown, ExecConfig, ExecError, Fault, GroupPlan,
    TransitionRecord,
};
use crate::planner::{PlanError, TpgBuilder};
use crate::scheduler::{
    decide, decide_nested, measure_scoped, trace_line, DecisionThresholds, SchedulingDecision, TpgProperties,
};
use crate::state::VersionedStateTable;
use crate::types::{
    FunctionKind, FunctionRef, GroupId, Key, KeySpec, OpId, OpKind, Operation, StateTransaction, Timestamp, Value,
    WindowKeys,
};
use crate::udf::UdfRegistry;

/// Marker attached to the output of an event whose transaction aborted.
pub const FAILED_STATE_ACCESS: &str = "failed state access";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<P> {
    pub event_id: u64,
    /// Assigned at generation; arrival order may differ.
    pub ts: Timestamp,
    pub arrival_index: usize,
    pub group: GroupId,
    pub payload: P,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamItem<P> {
    Event(Event<P>),
    Punctuation,
    End,
}

/// Inserts a punctuation after every `interval` events and after the last.
pub fn with_punctuations<P>(events: impl IntoIterator<Item = Event<P>>, interval: usize) -> Vec<StreamItem<P>> {
    let mut out = Vec::new();
    let mut n = 0;
    for e in events {
        out.push(StreamItem::Event(e));
        n += 1;
        if n % interval.max(1) == 0 {
            out.push(StreamItem::Punctuation);
        }
    }
    if n % interval.max(1) != 0 {
        out.push(StreamItem::Punctuation);
    }
    out.push(StreamItem::End);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlotterStatus {
    Pending,
    Committed,
    Failed,
    /// Filtered out by pre-processing; issues no transaction.
    NoOp,
}

/// Parameters extracted from an event and, after execution, the results of
/// its state accesses (one slot per request, in request order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventBlotter {
    pub event_id: u64,
    pub kind: u8,
    pub keys: Vec<Key>,
    pub params: Vec<Value>,
    pub results: Vec<Option<Value>>,
    pub status: BlotterStatus,
}

impl EventBlotter {
    pub fn new(event_id: u64, kind: u8, keys: Vec<Key>, params: Vec<Value>) -> Self {
        Self {
            event_id,
            kind,
            keys,
            params,
            results: Vec::new(),
            status: BlotterStatus::Pending,
        }
    }

    pub fn noop(event_id: u64) -> Self {
        Self {
            status: BlotterStatus::NoOp,
            ..Self::new(event_id, 0, Vec::new(), Vec::new())
        }
    }

    /// Marks the access committed or failed once its batch has run.
    pub fn settle(&mut self, committed: bool) {
        debug_assert_eq!(self.status, BlotterStatus::Pending);
        self.status = if committed {
            BlotterStatus::Committed
        } else {
            BlotterStatus::Failed
        };
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("event {0} issued no state access")]
    NoAccess(u64),
    #[error("window size must be positive")]
    EmptyWindow,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Collects the requests issued while processing one event.
pub struct TxnBuilder<'r> {
    reg: &'r UdfRegistry,
    ts: Timestamp,
    event_id: u64,
    group: GroupId,
    ops: Vec<Operation>,
}

impl<'r> TxnBuilder<'r> {
    pub fn new(reg: &'r UdfRegistry, ts: Timestamp, event_id: u64, group: GroupId) -> Self {
        Self {
            reg,
            ts,
            event_id,
            group,
            ops: Vec::new(),
        }
    }

    pub fn ts(&self) -> Timestamp {
        self.ts
    }

    fn check(&self, f: FunctionRef, kind: FunctionKind) -> Result<(), RuntimeError> {
        let known = self.reg.resolve(f.id)?;
        if known.kind != kind {
            return Err(CoreError::WrongFunctionKind {
                id: f.id,
                expected: kind,
                actual: known.kind,
            }
            .into());
        }
        Ok(())
    }

    fn push(
        &mut self,
        kind: OpKind,
        keys: KeySpec,
        value_fn: Option<FunctionRef>,
        cond_fn: Option<FunctionRef>,
        params: &[Value],
    ) -> usize {
        let stmt = self.ops.len();
        self.ops.push(Operation {
            id: OpId::new(self.ts.0, stmt as u32),
            kind,
            keys,
            value_fn,
            cond_fn,
            params: params.to_vec(),
            is_virtual: false,
            owner: None,
        });
        stmt
    }

    fn check_cond(&self, cond: Option<FunctionRef>) -> Result<(), RuntimeError> {
        match cond {
            Some(c) => self.check(c, FunctionKind::Condition),
            None => Ok(()),
        }
    }

    /// Reads `key`; with `value_fn` the result is the function of that read.
    pub fn request_read(&mut self, key: Key, value_fn: Option<FunctionRef>, params: &[Value]) -> Result<usize, RuntimeError> {
        if let Some(f) = value_fn {
            self.check(f, FunctionKind::Value)?;
        }
        Ok(self.push(OpKind::Read, KeySpec::Deterministic(key), value_fn, None, params))
    }

    /// Writes `f(target, reads..)` to `target` if `cond` holds over the same
    /// values.
    pub fn request_write(
        &mut self,
        target: Key,
        reads: &[Key],
        f: FunctionRef,
        cond: Option<FunctionRef>,
        params: &[Value],
    ) -> Result<usize, RuntimeError> {
        self.check(f, FunctionKind::Value)?;
        self.check_cond(cond)?;
        let keys = if reads.is_empty() {
            KeySpec::Deterministic(target)
        } else {
            KeySpec::MultiKey {
                target,
                reads: reads.to_vec(),
            }
        };
        Ok(self.push(OpKind::Write, keys, Some(f), cond, params))
    }

    /// Aggregates the versions of `keys` committed in the `range` timestamps
    /// before this event.
    pub fn request_window_read(
        &mut self,
        keys: WindowKeys,
        range: u64,
        agg: FunctionRef,
        params: &[Value],
    ) -> Result<usize, RuntimeError> {
        self.window(OpKind::Read, None, keys, range, agg, params)
    }

    pub fn request_window_write(
        &mut self,
        target: Key,
        keys: WindowKeys,
        range: u64,
        agg: FunctionRef,
        params: &[Value],
    ) -> Result<usize, RuntimeError> {
        self.window(OpKind::Write, Some(target), keys, range, agg, params)
    }

    fn window(
        &mut self,
        kind: OpKind,
        target: Option<Key>,
        keys: WindowKeys,
        range: u64,
        agg: FunctionRef,
        params: &[Value],
    ) -> Result<usize, RuntimeError> {
        if range == 0 {
            return Err(RuntimeError::EmptyWindow);
        }
        self.check(agg, FunctionKind::WindowAggregate)?;
        if let WindowKeys::Selector { selector, .. } = &keys {
            self.check(*selector, FunctionKind::KeySelector)?;
        }
        let spec = KeySpec::WindowRange {
            target,
            keys,
            range,
            trigger: self.ts,
        };
        Ok(self.push(kind, spec, Some(agg), None, params))
    }

    /// Reads the keys chosen by `selector`.
    pub fn request_nondet_read(
        &mut self,
        selector: FunctionRef,
        candidates: Option<Vec<Key>>,
        value_fn: Option<FunctionRef>,
        params: &[Value],
    ) -> Result<usize, RuntimeError> {
        self.check(selector, FunctionKind::KeySelector)?;
        if let Some(f) = value_fn {
            self.check(f, FunctionKind::Value)?;
        }
        let spec = KeySpec::NonDeterministic { selector, candidates };
        Ok(self.push(OpKind::Read, spec, value_fn, None, params))
    }

    /// Writes `f` of the selected keys into the first selected key.
    pub fn request_nondet_write(
        &mut self,
        selector: FunctionRef,
        candidates: Option<Vec<Key>>,
        f: FunctionRef,
        cond: Option<FunctionRef>,
        params: &[Value],
    ) -> Result<usize, RuntimeError> {
        self.check(selector, FunctionKind::KeySelector)?;
        self.check(f, FunctionKind::Value)?;
        self.check_cond(cond)?;
        let spec = KeySpec::NonDeterministic { selector, candidates };
        Ok(self.push(OpKind::Write, spec, Some(f), cond, params))
    }

    pub fn finish(self) -> StateTransaction {
        StateTransaction {
            ts: self.ts,
            event_id: self.event_id,
            group: self.group,
            ops: self.ops,
        }
    }
}

/// User logic of the transactional operator.
pub trait Operator: Sync {
    type Payload;
    type Output;

    /// Extracts parameters; filtered events return [`EventBlotter::noop`].
    fn pre_process(&self, e: &Event<Self::Payload>) -> EventBlotter;

    /// Issues the event's state accesses. They are recorded, not executed.
    fn state_access(&self, eb: &EventBlotter, txn: &mut TxnBuilder) -> Result<(), RuntimeError>;

    /// Called once per event after its batch executed. `None` emits nothing.
    fn post_process(&self, e: &Event<Self::Payload>, eb: &EventBlotter) -> Option<Self::Output>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Decide per batch from measured properties.
    Auto,
    Forced(SchedulingDecision),
    /// One decision per group; groups missing from a given map are decided
    /// from their properties.
    Nested(BTreeMap<GroupId, SchedulingDecision>),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub threads: usize,
    pub strategy: Strategy,
    pub thresholds: DecisionThresholds,
    pub speculation: Option<bool>,
    /// Abort ratio assumed by the decision model; `None` tracks the observed
    /// ratio of previous batches.
    pub abort_estimate: Option<f64>,
    pub log_transitions: bool,
    pub fault: Option<Fault>,
    pub stall_timeout: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            strategy: Strategy::Auto,
            thresholds: DecisionThresholds::default(),
            speculation: None,
            abort_estimate: None,
            log_transitions: false,
            fault: None,
            stall_timeout: ExecConfig::default().stall_timeout,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub index: usize,
    pub events: usize,
    pub wall: Duration,
    /// Ingress to post-processing, per event.
    pub latencies: Vec<Duration>,
    pub breakdown: Breakdown,
    /// One entry per group (or a single `None` entry).
    pub decisions: Vec<(Option<GroupId>, SchedulingDecision, TpgProperties)>,
    pub trace: Vec<String>,
    pub edge_counts: (usize, usize, usize),
    pub aborted: usize,
    pub rounds: usize,
    pub transitions: Vec<TransitionRecord>,
    pub all_settled: bool,
}

impl BatchReport {
    pub fn decision_label(&self) -> String {
        self.decisions
            .iter()
            .map(|(g, d, _)| match g {
                Some(g) => format!("{g}:{}", d.short()),
                None => d.short(),
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

pub struct RunResult<O> {
    /// In post-processing order: batch by batch, arrival order within.
    pub outputs: Vec<(u64, O)>,
    /// Committed flag per event id.
    pub committed: BTreeMap<u64, bool>,
    pub batches: Vec<BatchReport>,
}

struct Cached<P> {
    event: Event<P>,
    blotter: EventBlotter,
    arrived: Instant,
}

pub struct Engine<'a> {
    pub table: &'a VersionedStateTable,
    pub registry: &'a UdfRegistry,
    pub config: EngineConfig,
}

impl<'a> Engine<'a> {
    pub fn new(table: &'a VersionedStateTable, registry: &'a UdfRegistry, config: EngineConfig) -> Result<Self, RuntimeError> {
        if config.threads == 0 {
            return Err(RuntimeError::Config("threads must be at least 1".into()));
        }
        Ok(Self {
            table,
            registry,
            config,
        })
    }

    pub fn run<Op: Operator>(
        &self,
        op: &Op,
        input: impl IntoIterator<Item = StreamItem<Op::Payload>>,
    ) -> Result<RunResult<Op::Output>, RuntimeError> {
        let mut out = RunResult {
            outputs: Vec::new(),
            committed: BTreeMap::new(),
            batches: Vec::new(),
        };
        let mut cache: Vec<Cached<Op::Payload>> = Vec::new();
        let mut builder = TpgBuilder::new(self.table.key_count());
        let mut construct = Duration::ZERO;
        let mut observed_abort = AbortTracker::default();
        let mut ended = false;
        for item in input {
            if ended {
                warn!("input after end of stream ignored");
                continue;
            }
            match item {
                StreamItem::Event(e) => {
                    let arrived = Instant::now();
                    let blotter = op.pre_process(&e);
                    if blotter.status != BlotterStatus::NoOp {
                        let mut tb = TxnBuilder::new(self.registry, e.ts, e.event_id, e.group);
                        op.state_access(&blotter, &mut tb)?;
                        let txn = tb.finish();
                        if txn.ops.is_empty() {
                            return Err(RuntimeError::NoAccess(e.event_id));
                        }
                        builder.phase1_insert(txn)?;
                    }
                    construct += arrived.elapsed();
                    cache.push(Cached {
                        event: e,
                        blotter,
                        arrived,
                    });
                }
                StreamItem::Punctuation | StreamItem::End => {
                    ended = matches!(item, StreamItem::End);
                    if cache.is_empty() {
                        continue;
                    }
                    let b = std::mem::replace(&mut builder, TpgBuilder::new(self.table.key_count()));
                    let report = self.run_batch(
                        op,
                        b,
                        std::mem::take(&mut cache),
                        std::mem::take(&mut construct),
                        &mut observed_abort,
                        &mut out,
                    )?;
                    out.batches.push(report);
                }
            }
        }
        if !cache.is_empty() {
            let report = self.run_batch(op, builder, cache, construct, &mut observed_abort, &mut out)?;
            out.batches.push(report);
        }
        Ok(out)
    }

    fn run_batch<Op: Operator>(
        &self,
        op: &Op,
        builder: TpgBuilder,
        mut cache: Vec<Cached<Op::Payload>>,
        ingest: Duration,
        observed_abort: &mut AbortTracker,
        out: &mut RunResult<Op::Output>,
    ) -> Result<BatchReport, RuntimeError> {
        let index = out.batches.len();
        let start = Instant::now();
        let tpg = builder.phase2_refine();
        let construct = ingest + start.elapsed();

        let abort = |g: Option<GroupId>| self.config.abort_estimate.unwrap_or_else(|| observed_abort.get(g));
        let th = &self.config.thresholds;
        let mut groups: Vec<GroupId> = tpg.txns.iter().map(|t| t.group).collect();
        groups.sort_unstable();
        groups.dedup();
        let mut decisions = Vec::new();
        match &self.config.strategy {
            Strategy::Auto => {
                let p = measure_scoped(&tpg, self.registry, abort(None), None);
                decisions.push((None, decide(&p, th), p));
            }
            Strategy::Forced(d) => {
                let p = measure_scoped(&tpg, self.registry, abort(None), None);
                decisions.push((None, *d, p));
            }
            Strategy::Nested(given) => {
                let props: BTreeMap<GroupId, TpgProperties> = groups
                    .iter()
                    .map(|&g| (g, measure_scoped(&tpg, self.registry, abort(Some(g)), Some(g))))
                    .collect();
                let decided = decide_nested(&props, th);
                if groups.len() > 1 && has_cross_group_edges(&tpg) {
                    // Groups share state; run them together under one decision.
                    let p = measure_scoped(&tpg, self.registry, abort(None), None);
                    debug!("batch {index}: groups share dependencies, nested plan collapsed");
                    decisions.push((None, decide(&p, th), p));
                } else {
                    for g in groups.iter().copied() {
                        let d = given.get(&g).copied().unwrap_or(decided[&g]);
                        decisions.push((Some(g), d, props[&g].clone()));
                    }
                }
            }
        }
        let trace: Vec<String> = decisions
            .iter()
            .map(|(g, d, p)| trace_line(index, *g, d, p))
            .collect();
        for line in &trace {
            debug!("{line}");
        }

        let plans: Vec<GroupPlan> = if decisions.len() == 1 {
            vec![GroupPlan {
                group: None,
                decision: decisions[0].1,
                threads: self.config.threads,
            }]
        } else {
            split_threads(self.config.threads, &decisions, &tpg)
        };
        let cfg = ExecConfig {
            threads: self.config.threads,
            speculation: self.config.speculation,
            log_transitions: self.config.log_transitions,
            fault: self.config.fault,
            stall_timeout: self.config.stall_timeout,
        };
        let outcome = execute_groups(&tpg, self.table, self.registry, &cfg, &plans)?;
        self.table.gc_batch()?;

        let mut breakdown = outcome.breakdown;
        breakdown.construct += construct;
        let aborted = outcome.aborted_txns;
        attach_results(&tpg, &outcome, &mut cache);
        let mut per_group: BTreeMap<GroupId, (usize, usize)> = BTreeMap::new();
        for c in &cache {
            if c.blotter.status != BlotterStatus::NoOp {
                let e = per_group.entry(c.event.group).or_default();
                e.0 += usize::from(c.blotter.status != BlotterStatus::Committed);
                e.1 += 1;
            }
        }
        let (failed, total) = per_group.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if total > 0 {
            observed_abort.observe(None, failed as f64 / total as f64);
        }
        for (g, (failed, total)) in per_group {
            observed_abort.observe(Some(g), failed as f64 / total as f64);
        }

        let mut latencies = Vec::with_capacity(cache.len());
        let events = cache.len();
        for c in &cache {
            if c.blotter.status != BlotterStatus::NoOp {
                out.committed.insert(c.event.event_id, c.blotter.status == BlotterStatus::Committed);
            }
            if let Some(o) = op.post_process(&c.event, &c.blotter) {
                out.outputs.push((c.event.event_id, o));
            }
            latencies.push(c.arrived.elapsed());
        }
        Ok(BatchReport {
            index,
            events,
            wall: start.elapsed() + ingest,
            latencies,
            breakdown,
            decisions,
            trace,
            edge_counts: tpg.edge_counts(),
            aborted,
            rounds: outcome.rounds,
            all_settled: outcome.all_settled(),
            transitions: outcome.transitions,
        })
    }
}

/// Smoothed fraction of aborted transactions, overall and per group. The
/// first observation seeds the average.
#[derive(Debug, Default)]
struct AbortTracker {
    seen: BTreeMap<Option<GroupId>, f64>,
}

impl AbortTracker {
    fn get(&self, g: Option<GroupId>) -> f64 {
        self.seen.get(&g).or_else(|| self.seen.get(&None)).copied().unwrap_or(0.0)
    }

    fn observe(&mut self, g: Option<GroupId>, ratio: f64) {
        self.seen
            .entry(g)
            .and_modify(|a| *a = 0.5 * *a + 0.5 * ratio)
            .or_insert(ratio);
    }
}

/// Threads per group, proportional to vertex count, at least one each.
fn split_threads(
    threads: usize,
    decisions: &[(Option<GroupId>, SchedulingDecision, TpgProperties)],
    tpg: &crate::planner::Tpg,
) -> Vec<GroupPlan> {
    let sizes: Vec<usize> = decisions
        .iter()
        .map(|(g, _, _)| tpg.vertices.iter().filter(|v| Some(v.group) == *g).count())
        .collect();
    let total: usize = sizes.iter().sum::<usize>().max(1);
    let mut left = threads.saturating_sub(decisions.len());
    decisions
        .iter()
        .zip(&sizes)
        .map(|((g, d, _), &n)| {
            let extra = (threads.saturating_sub(decisions.len()) * n / total).min(left);
            left -= extra;
            GroupPlan {
                group: *g,
                decision: *d,
                threads: 1 + extra,
            }
        })
        .collect()
}

fn attach_results<P>(tpg: &crate::planner::Tpg, outcome: &BatchOutcome, cache: &mut [Cached<P>]) {
    let mut by_event: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, t) in tpg.txns.iter().enumerate() {
        by_event.insert(t.event_id, i);
    }
    for c in cache.iter_mut() {
        if c.blotter.status == BlotterStatus::NoOp {
            continue;
        }
        let t = by_event[&c.event.event_id];
        let committed = outcome.committed[t];
        c.blotter.results = tpg.txns[t]
            .vertices()
            .map(|v| {
                if committed {
                    outcome.records[v].as_ref().and_then(|r| r.output)
                } else {
                    None
                }
            })
            .collect();
        c.blotter.settle(committed);
    }
}
