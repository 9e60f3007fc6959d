//! Execution of a refined graph on worker threads.
//!
//! Every vertex carries a four-state machine (BLK, RDY, EXE, ABT) and a
//! count of unresolved TD/PD parents. A parent is resolved once it is EXE,
//! or once it is ABT and all of its own parents are resolved. Threads claim
//! scheduling units and run their members in order; a member runs when its
//! counter reaches zero or, with speculation on, as soon as every parent is
//! resolved even if the counter has not caught up yet.
//!
//! A failed condition does not abort anything on the spot. The operation is
//! left EXE with a `failed` mark, which children treat as "wrote nothing",
//! and its transaction is aborted later under an exclusive gate once every
//! transaction it (transitively) read from has settled. Aborting truncates
//! the siblings' versions and rolls back every executed accessor that
//! followed them on the same key, recursively. Counters and FSM states are
//! then recomputed from the resolved flags and exploration resumes.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::AddAssign;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU32, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use crossbeam::deque::{Injector, Steal, Stealer, Worker};
use crossbeam::queue::SegQueue;
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::error::{CoreError, StateError};
use crate::planner::{Tpg, Vid};
use crate::scheduler::{assign, form_units_scoped, AbortMode, Exploration, SchedulingDecision, UnitPlan, Variant};
use crate::state::{take_lock_wait, VersionedStateTable};
use crate::types::{GroupId, Key, KeySpec, OpId, OpKind, Timestamp, Value, WindowKeys};
use crate::udf::UdfRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FsmState {
    Blk = 0,
    Rdy = 1,
    Exe = 2,
    Abt = 3,
}

impl FsmState {
    fn from_u8(x: u8) -> Self {
        match x {
            0 => FsmState::Blk,
            1 => FsmState::Rdy,
            2 => FsmState::Exe,
            _ => FsmState::Abt,
        }
    }
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FsmState::Blk => "BLK",
            FsmState::Rdy => "RDY",
            FsmState::Exe => "EXE",
            FsmState::Abt => "ABT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
}

impl Transition {
    /// Whether `from -> to` is the transition this label names.
    pub fn permits(self, from: FsmState, to: FsmState) -> bool {
        use FsmState::*;
        match self {
            Transition::T1 => from == Blk && to == Rdy,
            Transition::T2 => from == Rdy && to == Exe,
            Transition::T3 => from == Blk && to == Exe,
            Transition::T4 => from != Abt && to == Abt,
            Transition::T5 => matches!((from, to), (Exe, Rdy) | (Blk, Rdy)),
            Transition::T6 => matches!((from, to), (Exe, Blk) | (Rdy, Blk)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionRecord {
    pub vid: Vid,
    pub op: OpId,
    pub from: FsmState,
    pub to: FsmState,
    pub reason: Transition,
}

impl fmt::Display for TransitionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}→{} {:?}", self.op, self.from, self.to, self.reason)
    }
}

/// Outcome of one execution of a vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecRecord {
    pub op_id: OpId,
    /// Keys actually accessed; for non-deterministic operations these come
    /// from the selector.
    pub resolved_keys: Vec<Key>,
    pub written_versions: Vec<(Key, Timestamp)>,
    pub reads: Vec<Value>,
    pub output: Option<Value>,
    pub failed: bool,
    /// Key the operation writes, also recorded when the condition failed.
    pub target: Option<Key>,
}

/// Deliberate bugs used to check that verification notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    SkipLdClosure,
    SkipTruncation,
    SkipRollbackCascade,
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub threads: usize,
    /// `None` enables speculation for NS and structured DFS only.
    pub speculation: Option<bool>,
    pub log_transitions: bool,
    pub fault: Option<Fault>,
    /// Abort with a diagnostic when no vertex resolves for this long.
    pub stall_timeout: Duration,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            speculation: None,
            log_transitions: false,
            fault: None,
            stall_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Udf(#[from] CoreError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("abort handling did not converge after {0} rounds")]
    Livelock(usize),
    #[error("no progress: {0}")]
    Stalled(String),
    #[error("thread count must be at least 1")]
    NoThreads,
}

/// Time spent per category, summed over worker threads.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Breakdown {
    pub useful: Duration,
    pub sync: Duration,
    pub lock: Duration,
    pub construct: Duration,
    pub explore: Duration,
    pub abort: Duration,
}

impl AddAssign for Breakdown {
    fn add_assign(&mut self, o: Self) {
        self.useful += o.useful;
        self.sync += o.sync;
        self.lock += o.lock;
        self.construct += o.construct;
        self.explore += o.explore;
        self.abort += o.abort;
    }
}

impl Breakdown {
    pub fn total(&self) -> Duration {
        self.useful + self.sync + self.lock + self.construct + self.explore + self.abort
    }
}

/// Versions removed because their writer's transaction aborted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub vid: Vid,
    pub key: Key,
    pub resolved_keys: Vec<Key>,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Per transaction, in `tpg.txns` order.
    pub committed: Vec<bool>,
    pub records: Vec<Option<ExecRecord>>,
    pub final_states: Vec<FsmState>,
    pub executions: Vec<u32>,
    pub transitions: Vec<TransitionRecord>,
    pub truncations: Vec<Truncation>,
    pub breakdown: Breakdown,
    pub rounds: usize,
    pub aborted_txns: usize,
}

impl BatchOutcome {
    pub fn all_settled(&self) -> bool {
        self.final_states.iter().all(|s| matches!(s, FsmState::Exe | FsmState::Abt))
    }
}

/// Vertex subset run under one decision.
#[derive(Debug, Clone, Copy)]
pub struct GroupPlan {
    pub group: Option<GroupId>,
    pub decision: SchedulingDecision,
    pub threads: usize,
}

/// True if some TD/PD edge links two different groups.
pub fn has_cross_group_edges(tpg: &Tpg) -> bool {
    tpg.vertices
        .iter()
        .any(|v| v.children().any(|c| tpg.vertices[c].group != v.group))
}

pub fn execute(
    tpg: &Tpg,
    table: &VersionedStateTable,
    reg: &UdfRegistry,
    cfg: &ExecConfig,
    decision: SchedulingDecision,
) -> Result<BatchOutcome, ExecError> {
    execute_groups(
        tpg,
        table,
        reg,
        cfg,
        &[GroupPlan {
            group: None,
            decision,
            threads: cfg.threads,
        }],
    )
}

/// Runs each plan concurrently over its group's vertices. Groups must not
/// share TD/PD edges.
pub fn execute_groups(
    tpg: &Tpg,
    table: &VersionedStateTable,
    reg: &UdfRegistry,
    cfg: &ExecConfig,
    plans: &[GroupPlan],
) -> Result<BatchOutcome, ExecError> {
    if plans.iter().any(|p| p.threads == 0) {
        return Err(ExecError::NoThreads);
    }
    let batch = Batch::new(tpg, table, reg, cfg);
    table.begin_batch();
    let runs: Vec<Run> = plans.iter().map(|p| Run::new(&batch, *p)).collect();
    let results: Vec<Result<(), ExecError>> = if runs.len() == 1 {
        vec![runs[0].drive()]
    } else {
        std::thread::scope(|s| {
            let hs: Vec<_> = runs.iter().map(|r| s.spawn(move || r.drive())).collect();
            hs.into_iter().map(|h| h.join().expect("group run panicked")).collect()
        })
    };
    table.end_batch();
    for r in results {
        r?;
    }
    let mut breakdown = Breakdown::default();
    let mut rounds = 0;
    for r in &runs {
        breakdown += *r.stats.lock();
        rounds = rounds.max(r.rounds.load(Ordering::Relaxed));
    }
    Ok(batch.finish(breakdown, rounds))
}

struct VState {
    fsm: AtomicU8,
    counter: AtomicI64,
    resolved: AtomicBool,
    failed: AtomicBool,
    execs: AtomicU32,
    record: Mutex<Option<ExecRecord>>,
}

struct Batch<'a> {
    tpg: &'a Tpg,
    table: &'a VersionedStateTable,
    reg: &'a UdfRegistry,
    vs: Vec<VState>,
    txn_aborted: Vec<AtomicBool>,
    txn_stable: Vec<AtomicBool>,
    /// Transactions touched by aborts or rollbacks since the last reset of
    /// their stability flags.
    dirty_txns: Mutex<Vec<usize>>,
    fault: Option<Fault>,
    /// Timestamp just before the batch's first transaction.
    base: u64,
    speculation: Option<bool>,
    stall_timeout: Duration,
    log: Option<Mutex<Vec<TransitionRecord>>>,
    truncations: Mutex<Vec<Truncation>>,
}

impl<'a> Batch<'a> {
    fn new(tpg: &'a Tpg, table: &'a VersionedStateTable, reg: &'a UdfRegistry, cfg: &ExecConfig) -> Self {
        Batch {
            tpg,
            table,
            reg,
            vs: (0..tpg.len())
                .map(|_| VState {
                    fsm: AtomicU8::new(FsmState::Blk as u8),
                    counter: AtomicI64::new(0),
                    resolved: AtomicBool::new(false),
                    failed: AtomicBool::new(false),
                    execs: AtomicU32::new(0),
                    record: Mutex::new(None),
                })
                .collect(),
            txn_aborted: (0..tpg.txns.len()).map(|_| AtomicBool::new(false)).collect(),
            txn_stable: (0..tpg.txns.len()).map(|_| AtomicBool::new(false)).collect(),
            dirty_txns: Mutex::new(Vec::new()),
            fault: cfg.fault,
            base: tpg.txns.first().map_or(0, |t| t.ts.0 - 1),
            speculation: cfg.speculation,
            stall_timeout: cfg.stall_timeout,
            log: cfg.log_transitions.then(|| Mutex::new(Vec::new())),
            truncations: Mutex::new(Vec::new()),
        }
    }

    fn fsm(&self, v: Vid) -> FsmState {
        FsmState::from_u8(self.vs[v].fsm.load(Ordering::Acquire))
    }

    fn cas(&self, v: Vid, from: FsmState, to: FsmState, reason: Transition) -> bool {
        let ok = self.vs[v]
            .fsm
            .compare_exchange(from as u8, to as u8, Ordering::AcqRel, Ordering::Acquire)
            .is_ok();
        if ok {
            self.log(v, from, to, reason);
        }
        ok
    }

    /// Unconditional store; only used while the gate is held exclusively.
    fn set(&self, v: Vid, to: FsmState, reason: Transition) {
        let from = self.fsm(v);
        if from != to {
            self.vs[v].fsm.store(to as u8, Ordering::Release);
            self.log(v, from, to, reason);
        }
    }

    fn log(&self, v: Vid, from: FsmState, to: FsmState, reason: Transition) {
        if let Some(log) = &self.log {
            log.lock().push(TransitionRecord {
                vid: v,
                op: self.tpg.vertices[v].op.id,
                from,
                to,
                reason,
            });
        }
    }

    fn parents_resolved(&self, v: Vid) -> bool {
        self.tpg.vertices[v]
            .parents()
            .all(|p| self.vs[p].resolved.load(Ordering::Acquire))
    }

    fn finish(self, breakdown: Breakdown, rounds: usize) -> BatchOutcome {
        let aborted: Vec<bool> = self.txn_aborted.iter().map(|a| a.load(Ordering::Relaxed)).collect();
        let final_states = (0..self.vs.len()).map(|v| self.fsm(v)).collect();
        BatchOutcome {
            committed: aborted.iter().map(|a| !a).collect(),
            aborted_txns: aborted.iter().filter(|&&a| a).count(),
            final_states,
            executions: self.vs.iter().map(|s| s.execs.load(Ordering::Relaxed)).collect(),
            records: self.vs.into_iter().map(|s| s.record.into_inner()).collect(),
            transitions: self.log.map(|l| l.into_inner()).unwrap_or_default(),
            truncations: self.truncations.into_inner(),
            breakdown,
            rounds,
        }
    }

    /// Selected keys, or `None` when the selector picked something outside
    /// the table or the declared candidates.
    fn select(&self, f: crate::types::FunctionRef, params: &[Value], candidates: &Option<Vec<Key>>) -> Result<Option<Vec<Key>>, ExecError> {
        let ks = self.reg.eval_selector(f, params, self.tpg.key_space)?;
        let mut seen = HashSet::new();
        for k in &ks {
            if k.0 >= self.tpg.key_space || !seen.insert(*k) {
                return Ok(None);
            }
            if let Some(c) = candidates {
                if !c.contains(k) {
                    return Ok(None);
                }
            }
        }
        Ok(if ks.is_empty() { None } else { Some(ks) })
    }

    fn execute_op(&self, v: Vid) -> Result<ExecRecord, ExecError> {
        let vx = &self.tpg.vertices[v];
        let op = &vx.op;
        let ts = op.ts();
        let mut rec = ExecRecord {
            op_id: op.id,
            resolved_keys: Vec::new(),
            written_versions: Vec::new(),
            reads: Vec::new(),
            output: None,
            failed: false,
            target: None,
        };
        let mut window_value = None;
        match &op.keys {
            KeySpec::Deterministic(k) => rec.resolved_keys.push(*k),
            KeySpec::MultiKey { target, reads } => {
                rec.resolved_keys.push(*target);
                rec.resolved_keys.extend(reads);
            }
            KeySpec::NonDeterministic { selector, candidates } => {
                let Some(keys) = self.select(*selector, &op.params, candidates)? else {
                    rec.failed = true;
                    return Ok(rec);
                };
                if op.kind == OpKind::Write {
                    let clash = self.tpg.txns[vx.txn]
                        .vertices()
                        .filter(|&s| s != v)
                        .any(|s| self.tpg.vertices[s].op.static_write_key() == Some(keys[0]));
                    if clash {
                        rec.failed = true;
                        return Ok(rec);
                    }
                }
                rec.resolved_keys = keys;
            }
            KeySpec::WindowRange {
                target,
                keys,
                range,
                trigger,
            } => {
                let wkeys = match keys {
                    WindowKeys::Explicit(ks) => ks.clone(),
                    WindowKeys::Selector { selector, candidates } => {
                        match self.select(*selector, &op.params, candidates)? {
                            Some(ks) if target.map_or(true, |t| !ks.contains(&t)) => ks,
                            _ => {
                                rec.failed = true;
                                rec.target = *target;
                                return Ok(rec);
                            }
                        }
                    }
                };
                // Batch time starts at `base`; a range reaching back that far
                // covers the snapshot.
                let range = if trigger.0.saturating_sub(*range) <= self.base { trigger.0 } else { *range };
                let chains = self.table.window_read(&wkeys, *trigger, range)?;
                let values: Vec<Value> = chains.iter().flatten().map(|ver| ver.value).collect();
                let f = op.value_fn.expect("validated window aggregate");
                window_value = Some(self.reg.eval_window(f, &values, &op.params)?);
                rec.resolved_keys.extend(target.iter().copied());
                rec.resolved_keys.extend(wkeys);
            }
        }
        if op.kind == OpKind::Write {
            rec.target = rec.resolved_keys.first().copied();
        }

        match window_value {
            Some(w) => rec.reads.push(w),
            None => {
                for k in &rec.resolved_keys {
                    rec.reads.push(self.table.read_version(*k, ts)?);
                }
            }
        }
        if let Some(c) = op.cond_fn {
            if !self.reg.eval_condition(c, &rec.reads, &op.params)? {
                rec.failed = true;
                return Ok(rec);
            }
        }
        let value = match (window_value, op.value_fn) {
            (Some(w), _) => w,
            (None, Some(f)) => self.reg.eval_value(f, &rec.reads, &op.params)?,
            (None, None) => rec.reads[0],
        };
        rec.output = Some(value);
        if op.kind == OpKind::Write {
            let k = rec.target.expect("writes have a target");
            self.table.write_version(k, ts, value, op.id)?;
            rec.written_versions.push((k, ts));
        }
        Ok(rec)
    }
}

const IDLE: u8 = 0;
const RUNNING: u8 = 1;
const DONE: u8 = 2;

struct UState {
    state: AtomicU8,
    counter: AtomicI64,
    cursor: AtomicUsize,
}

struct Run<'b, 'a> {
    b: &'b Batch<'a>,
    plan: UnitPlan,
    decision: SchedulingDecision,
    threads: usize,
    speculate: bool,
    scope: Vec<Vid>,
    scope_txns: Vec<usize>,
    lists: Vec<Vec<usize>>,
    owner: Vec<usize>,
    units: Vec<UState>,
    gate: RwLock<()>,
    pending: Mutex<Vec<Vid>>,
    pending_len: AtomicUsize,
    /// Vertices reset by aborts since the last recompute, with their
    /// resolved flag from before.
    touched: Mutex<Vec<(Vid, bool)>>,
    remaining: AtomicUsize,
    epoch: AtomicU64,
    progress: AtomicU64,
    holders: Vec<SegQueue<Vid>>,
    injector: Injector<usize>,
    error: Mutex<Option<ExecError>>,
    stop: AtomicBool,
    rounds: AtomicUsize,
    stats: Mutex<Breakdown>,
}

struct Ctx {
    t: usize,
    bd: Breakdown,
    deque: Option<Worker<usize>>,
    last_check: u64,
}

impl Ctx {
    fn new(t: usize) -> Self {
        Ctx {
            t,
            bd: Breakdown::default(),
            deque: None,
            last_check: u64::MAX,
        }
    }
}

enum Step {
    Advanced,
    Blocked,
}

impl<'b, 'a> Run<'b, 'a> {
    fn new(b: &'b Batch<'a>, p: GroupPlan) -> Self {
        let tpg = b.tpg;
        let plan = form_units_scoped(tpg, p.decision.granularity, p.group);
        let lists = assign(&plan, p.decision.explore, p.threads).expect("threads checked");
        let mut owner = vec![0; plan.units.len()];
        for (t, l) in lists.iter().enumerate() {
            for &u in l {
                owner[u] = t;
            }
        }
        let scope: Vec<Vid> = (0..tpg.len()).filter(|&v| plan.unit_of[v] != usize::MAX).collect();
        let mut scope_txns: Vec<usize> = scope.iter().map(|&v| tpg.vertices[v].txn).collect();
        scope_txns.dedup();
        let speculate = b.speculation.unwrap_or(!matches!(
            p.decision.explore,
            Exploration::Structured(Variant::Bfs)
        ));
        let units = (0..plan.units.len())
            .map(|_| UState {
                state: AtomicU8::new(IDLE),
                counter: AtomicI64::new(0),
                cursor: AtomicUsize::new(0),
            })
            .collect();
        Run {
            b,
            decision: p.decision,
            threads: p.threads,
            speculate,
            scope,
            scope_txns,
            lists,
            owner,
            units,
            plan,
            gate: RwLock::new(()),
            pending: Mutex::new(Vec::new()),
            pending_len: AtomicUsize::new(0),
            touched: Mutex::new(Vec::new()),
            remaining: AtomicUsize::new(0),
            epoch: AtomicU64::new(0),
            progress: AtomicU64::new(0),
            holders: (0..p.threads).map(|_| SegQueue::new()).collect(),
            injector: Injector::new(),
            error: Mutex::new(None),
            stop: AtomicBool::new(false),
            rounds: AtomicUsize::new(0),
            stats: Mutex::new(Breakdown::default()),
        }
    }

    fn is_ns(&self) -> bool {
        self.decision.explore == Exploration::NonStructured
    }

    fn fail_with(&self, e: ExecError) {
        let mut slot = self.error.lock();
        if slot.is_none() {
            *slot = Some(e);
        }
        self.stop.store(true, Ordering::Release);
    }

    fn take_error(&self) -> Result<(), ExecError> {
        match self.error.lock().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn drive(&self) -> Result<(), ExecError> {
        self.recompute();
        if let Exploration::Structured(Variant::Bfs) = self.decision.explore {
            self.run_bfs();
            return self.take_error();
        }
        loop {
            if self.remaining.load(Ordering::Acquire) > 0 {
                self.run_parallel();
                self.take_error()?;
            }
            if self.pending_len.load(Ordering::Acquire) == 0 {
                return Ok(());
            }
            let t0 = Instant::now();
            self.round_end()?;
            self.stats.lock().abort += t0.elapsed();
        }
    }

    fn round_end(&self) -> Result<(), ExecError> {
        let rounds = self.rounds.fetch_add(1, Ordering::Relaxed) + 1;
        if rounds > self.scope_txns.len() + 1 {
            return Err(ExecError::Livelock(rounds));
        }
        let _w = self.gate.write();
        self.sweep()
    }

    /// Serial repair from the earliest pending failure. Vertex ids are
    /// topological and every vertex is resolved at a round end, so each
    /// failure reached here has final inputs; it aborts on the spot and the
    /// rolled-back vertices after it run again in order. Must hold the gate
    /// exclusively.
    fn sweep(&self) -> Result<(), ExecError> {
        let b = self.b;
        let first = {
            let mut p = self.pending.lock();
            let first = p.iter().copied().min();
            p.clear();
            self.pending_len.store(0, Ordering::Release);
            first
        };
        let Some(first) = first else {
            return Ok(());
        };
        let start = self.scope.partition_point(|&v| v < first);
        for &v in &self.scope[start..] {
            let vs = &b.vs[v];
            if !vs.resolved.load(Ordering::Acquire) {
                match b.fsm(v) {
                    FsmState::Abt => {}
                    st => {
                        match st {
                            FsmState::Exe => b.set(v, FsmState::Rdy, Transition::T5),
                            FsmState::Blk => b.set(v, FsmState::Rdy, Transition::T1),
                            _ => {}
                        }
                        b.set(v, FsmState::Exe, Transition::T2);
                        let rec = b.execute_op(v)?;
                        vs.execs.fetch_add(1, Ordering::Relaxed);
                        vs.failed.store(rec.failed, Ordering::Release);
                        *vs.record.lock() = Some(rec);
                    }
                }
                vs.resolved.store(true, Ordering::Release);
            }
            if b.fsm(v) == FsmState::Exe && vs.failed.load(Ordering::Acquire) {
                self.abort_txn(v)?;
                // Members up to here have final parents; later ones settle
                // when the sweep reaches them.
                for o in b.tpg.txns[b.tpg.vertices[v].txn].vertices().filter(|&o| o <= v) {
                    b.vs[o].resolved.store(true, Ordering::Release);
                }
                self.clear_dirty();
            }
        }
        self.recompute();
        Ok(())
    }

    fn run_parallel(&self) {
        let stealers: Vec<Stealer<usize>>;
        let mut workers: Vec<Option<Worker<usize>>> = Vec::new();
        if self.is_ns() {
            let ws: Vec<Worker<usize>> = (0..self.threads).map(|_| Worker::new_lifo()).collect();
            stealers = ws.iter().map(|w| w.stealer()).collect();
            for (u, st) in self.units.iter().enumerate() {
                if st.state.load(Ordering::Relaxed) == IDLE && st.counter.load(Ordering::Relaxed) <= 0 {
                    ws[self.owner[u]].push(u);
                }
            }
            workers.extend(ws.into_iter().map(Some));
        } else {
            stealers = Vec::new();
            workers.extend((0..self.threads).map(|_| None));
        }
        let stealers = &stealers;
        std::thread::scope(|s| {
            for (t, w) in workers.into_iter().enumerate() {
                s.spawn(move || {
                    let mut ctx = Ctx::new(t);
                    ctx.deque = w;
                    let start = Instant::now();
                    if self.is_ns() {
                        self.worker_ns(&mut ctx, stealers);
                    } else {
                        self.worker_dfs(&mut ctx);
                    }
                    self.close_thread(&mut ctx, start.elapsed());
                });
            }
        });
    }

    fn close_thread(&self, ctx: &mut Ctx, wall: Duration) {
        ctx.bd.lock += take_lock_wait();
        let accounted = ctx.bd.useful + ctx.bd.sync + ctx.bd.lock + ctx.bd.abort;
        ctx.bd.explore += wall.saturating_sub(accounted);
        *self.stats.lock() += ctx.bd;
    }

    fn backoff(&self, ctx: &mut Ctx, spins: &mut u32) {
        let t0 = Instant::now();
        if *spins < 16 {
            std::hint::spin_loop();
        } else if *spins < 64 {
            std::thread::yield_now();
        } else {
            std::thread::sleep(Duration::from_micros(50));
        }
        *spins += 1;
        ctx.bd.sync += t0.elapsed();
    }

    fn check_stall(&self, since: &mut (u64, Instant)) {
        let p = self.progress.load(Ordering::Relaxed) ^ (self.epoch.load(Ordering::Relaxed) << 40);
        if p != since.0 {
            *since = (p, Instant::now());
        } else if since.1.elapsed() > self.b.stall_timeout {
            self.fail_with(ExecError::Stalled(self.dump()));
        }
    }

    fn dump(&self) -> String {
        let mut out = format!(
            "remaining={} pending={}",
            self.remaining.load(Ordering::Relaxed),
            self.pending_len.load(Ordering::Relaxed)
        );
        for &v in self.scope.iter().filter(|&&v| !self.b.vs[v].resolved.load(Ordering::Relaxed)).take(20) {
            let u = self.plan.unit_of[v];
            out.push_str(&format!(
                " | {} {} cnt={} unit={} ustate={} ucnt={} cursor={}",
                self.b.tpg.vertices[v].op.id,
                self.b.fsm(v),
                self.b.vs[v].counter.load(Ordering::Relaxed),
                u,
                self.units[u].state.load(Ordering::Relaxed),
                self.units[u].counter.load(Ordering::Relaxed),
                self.units[u].cursor.load(Ordering::Relaxed),
            ));
        }
        out
    }

    fn worker_dfs(&self, ctx: &mut Ctx) {
        let list = &self.lists[ctx.t];
        let mut i = 0;
        let mut ep = self.epoch.load(Ordering::Acquire);
        let mut spins = 0;
        let mut stall = (u64::MAX, Instant::now());
        while !self.stop.load(Ordering::Acquire) && self.remaining.load(Ordering::Acquire) > 0 {
            let e = self.epoch.load(Ordering::Acquire);
            if e != ep {
                ep = e;
                i = 0;
            }
            while i < list.len() && self.units[list[i]].state.load(Ordering::Acquire) == DONE {
                i += 1;
            }
            if i < list.len() && self.run_unit(ctx, list[i]) {
                spins = 0;
                continue;
            }
            self.maybe_coordinate(ctx);
            self.backoff(ctx, &mut spins);
            if ctx.t == 0 {
                self.check_stall(&mut stall);
            }
        }
    }

    fn worker_ns(&self, ctx: &mut Ctx, stealers: &[Stealer<usize>]) {
        let mut spins = 0;
        let mut stall = (u64::MAX, Instant::now());
        let mut scan_from = 0;
        while !self.stop.load(Ordering::Acquire) && self.remaining.load(Ordering::Acquire) > 0 {
            self.drain(ctx, ctx.t);
            if let Some(u) = self.find_task(ctx, stealers) {
                if self.run_unit(ctx, u) {
                    spins = 0;
                }
                continue;
            }
            for h in 0..self.threads {
                self.drain(ctx, h);
            }
            let mut ran = false;
            if self.speculate {
                let mine = &self.lists[ctx.t];
                for k in 0..mine.len() {
                    let u = mine[(scan_from + k) % mine.len()];
                    if self.units[u].state.load(Ordering::Acquire) == IDLE && self.run_unit(ctx, u) {
                        scan_from = (scan_from + k + 1) % mine.len();
                        ran = true;
                        break;
                    }
                }
            }
            if ran {
                spins = 0;
                continue;
            }
            self.maybe_coordinate(ctx);
            self.backoff(ctx, &mut spins);
            if ctx.t == 0 {
                self.check_stall(&mut stall);
            }
        }
    }

    fn find_task(&self, ctx: &mut Ctx, stealers: &[Stealer<usize>]) -> Option<usize> {
        let d = ctx.deque.as_ref().expect("ns worker has a deque");
        if let Some(u) = d.pop() {
            return Some(u);
        }
        loop {
            match self.injector.steal_batch_and_pop(d) {
                Steal::Success(u) => return Some(u),
                Steal::Retry => continue,
                Steal::Empty => break,
            }
        }
        let n = stealers.len();
        for k in 1..n {
            let s = &stealers[(ctx.t + k) % n];
            loop {
                match s.steal() {
                    Steal::Success(u) => return Some(u),
                    Steal::Retry => continue,
                    Steal::Empty => break,
                }
            }
        }
        None
    }

    /// Applies queued parent-resolved signals held for thread `h`.
    fn drain(&self, ctx: &mut Ctx, h: usize) {
        if self.holders[h].is_empty() {
            return;
        }
        let _g = self.gate.read();
        while let Some(c) = self.holders[h].pop() {
            self.decrement(ctx, c, true);
        }
    }

    fn run_bfs(&self) {
        let barrier = Barrier::new(self.threads);
        let current: Mutex<Arc<Vec<usize>>> = Mutex::new(Arc::new(Vec::new()));
        let next = AtomicUsize::new(0);
        let finished = AtomicBool::new(false);
        let strata = self.plan.strata();
        let rank_of = &self.plan.ranks;
        std::thread::scope(|s| {
            for t in 0..self.threads {
                let (barrier, current, next, finished, strata) = (&barrier, &current, &next, &finished, &strata);
                s.spawn(move || {
                    let mut ctx = Ctx::new(t);
                    let start = Instant::now();
                    // Leader state: rank to run next.
                    let mut rank = 0usize;
                    let mut last_progress = u64::MAX;
                    loop {
                        let t0 = Instant::now();
                        barrier.wait();
                        ctx.bd.sync += t0.elapsed();
                        if t == 0 {
                            let t1 = Instant::now();
                            let next_list = self.bfs_leader(&mut rank, strata, rank_of, &mut last_progress);
                            ctx.bd.abort += t1.elapsed();
                            match next_list {
                                Some(l) => *current.lock() = Arc::new(l),
                                None => finished.store(true, Ordering::Release),
                            }
                            next.store(0, Ordering::Release);
                        }
                        let t0 = Instant::now();
                        barrier.wait();
                        ctx.bd.sync += t0.elapsed();
                        if finished.load(Ordering::Acquire) {
                            break;
                        }
                        let list = current.lock().clone();
                        loop {
                            let i = next.fetch_add(1, Ordering::AcqRel);
                            if i >= list.len() || self.stop.load(Ordering::Acquire) {
                                break;
                            }
                            self.run_unit(&mut ctx, list[i]);
                        }
                    }
                    self.close_thread(&mut ctx, start.elapsed());
                });
            }
        });
    }

    /// Picks the next stratum to run, handling failures at the barrier.
    fn bfs_leader(
        &self,
        rank: &mut usize,
        strata: &[Vec<usize>],
        rank_of: &[usize],
        last_progress: &mut u64,
    ) -> Option<Vec<usize>> {
        if self.stop.load(Ordering::Acquire) {
            return None;
        }
        let not_done = |u: usize| self.units[u].state.load(Ordering::Acquire) != DONE;
        if self.decision.abort == AbortMode::Eager && self.pending_len.load(Ordering::Acquire) > 0 {
            let _w = self.gate.write();
            let e = self.epoch.load(Ordering::Relaxed);
            if let Err(err) = self.process_failures(None) {
                self.fail_with(err);
                return None;
            }
            if self.epoch.load(Ordering::Relaxed) != e {
                // Restart from the outermost stratum with affected units.
                *rank = (0..self.units.len())
                    .filter(|&u| not_done(u))
                    .map(|u| rank_of[u])
                    .min()
                    .unwrap_or(strata.len());
            }
        }
        loop {
            while *rank < strata.len() && !strata[*rank].iter().any(|&u| not_done(u)) {
                *rank += 1;
            }
            if *rank < strata.len() {
                let p = self.progress.load(Ordering::Relaxed) ^ (self.epoch.load(Ordering::Relaxed) << 40);
                if p == *last_progress {
                    self.fail_with(ExecError::Stalled(self.dump()));
                    return None;
                }
                *last_progress = p;
                let list: Vec<usize> = strata[*rank].iter().copied().filter(|&u| not_done(u)).collect();
                return Some(list);
            }
            if self.pending_len.load(Ordering::Acquire) == 0 {
                return None;
            }
            if let Err(err) = self.round_end() {
                self.fail_with(err);
                return None;
            }
            *rank = 0;
        }
    }

    /// Runs unit members from the cursor until one is not ready. Returns
    /// whether anything advanced.
    fn run_unit(&self, ctx: &mut Ctx, u: usize) -> bool {
        let us = &self.units[u];
        if us
            .state
            .compare_exchange(IDLE, RUNNING, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return false;
        }
        let epoch = self.epoch.load(Ordering::Acquire);
        let members = &self.plan.units[u].members;
        let mut progressed = false;
        while !self.stop.load(Ordering::Acquire) {
            let _g = self.gate.read();
            if self.epoch.load(Ordering::Acquire) != epoch {
                break;
            }
            let c = us.cursor.load(Ordering::Acquire);
            if c >= members.len() {
                break;
            }
            match self.step(ctx, members[c]) {
                Ok(Step::Advanced) => {
                    us.cursor.store(c + 1, Ordering::Release);
                    if !progressed {
                        self.progress.fetch_add(1, Ordering::Relaxed);
                    }
                    progressed = true;
                }
                Ok(Step::Blocked) => break,
                Err(e) => {
                    self.fail_with(e);
                    break;
                }
            }
        }
        let _g = self.gate.read();
        let done = us.cursor.load(Ordering::Acquire) >= members.len();
        us.state.store(if done { DONE } else { IDLE }, Ordering::SeqCst);
        if !done && self.is_ns() && us.counter.load(Ordering::SeqCst) <= 0 {
            if let Some(d) = &ctx.deque {
                d.push(u);
            }
        }
        progressed
    }

    fn step(&self, ctx: &mut Ctx, m: Vid) -> Result<Step, ExecError> {
        let b = self.b;
        let vs = &b.vs[m];
        if vs.resolved.load(Ordering::Acquire) {
            return Ok(Step::Advanced);
        }
        loop {
            match b.fsm(m) {
                FsmState::Abt => {
                    if b.parents_resolved(m) {
                        self.resolve(ctx, m);
                        return Ok(Step::Advanced);
                    }
                    return Ok(Step::Blocked);
                }
                // Mid-execution elsewhere.
                FsmState::Exe => return Ok(Step::Blocked),
                FsmState::Rdy => {
                    if b.cas(m, FsmState::Rdy, FsmState::Exe, Transition::T2) {
                        break;
                    }
                }
                FsmState::Blk => {
                    if vs.counter.load(Ordering::Acquire) <= 0 {
                        b.cas(m, FsmState::Blk, FsmState::Rdy, Transition::T1);
                        continue;
                    }
                    if self.speculate && b.parents_resolved(m) {
                        if b.cas(m, FsmState::Blk, FsmState::Exe, Transition::T3) {
                            break;
                        }
                        continue;
                    }
                    return Ok(Step::Blocked);
                }
            }
        }
        let lw = take_lock_wait();
        let t0 = Instant::now();
        let rec = b.execute_op(m);
        let spent = t0.elapsed();
        let lw = take_lock_wait() + lw;
        ctx.bd.lock += lw;
        ctx.bd.useful += spent.saturating_sub(lw);
        let rec = rec?;
        vs.execs.fetch_add(1, Ordering::Relaxed);
        if rec.failed {
            vs.failed.store(true, Ordering::Release);
            let mut p = self.pending.lock();
            p.push(m);
            self.pending_len.store(p.len(), Ordering::Release);
        }
        *vs.record.lock() = Some(rec);
        self.resolve(ctx, m);
        Ok(Step::Advanced)
    }

    /// Marks `v` resolved and propagates to its children.
    fn resolve(&self, ctx: &mut Ctx, v: Vid) {
        if self.mark_resolved(v) {
            self.propagate(ctx, v);
        }
    }

    /// Delivers resolution signals from `v`. ABT children whose last parent
    /// resolves become resolved in turn.
    fn propagate(&self, ctx: &mut Ctx, v: Vid) {
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            let ux = self.plan.unit_of[x];
            for c in self.b.tpg.vertices[x].children() {
                let uc = self.plan.unit_of[c];
                if uc == usize::MAX {
                    continue;
                }
                if uc == ux {
                    if self.decrement_local(ctx, c, false) {
                        stack.push(c);
                    }
                } else if self.is_ns() {
                    self.holders[self.owner[uc]].push(c);
                } else if self.decrement_local(ctx, c, true) {
                    stack.push(c);
                }
            }
        }
    }

    fn mark_resolved(&self, v: Vid) -> bool {
        let ok = self.b.vs[v]
            .resolved
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_ok();
        if ok {
            self.remaining.fetch_sub(1, Ordering::AcqRel);
            self.progress.fetch_add(1, Ordering::Relaxed);
        }
        ok
    }

    /// Signal arriving from a holder queue.
    fn decrement(&self, ctx: &mut Ctx, c: Vid, external: bool) {
        if self.decrement_local(ctx, c, external) {
            self.propagate(ctx, c);
        }
    }

    /// Decrements `c`'s counter (and its unit's, for cross-unit edges).
    /// Returns true if `c` is ABT and just became resolved.
    fn decrement_local(&self, ctx: &mut Ctx, c: Vid, external: bool) -> bool {
        let b = self.b;
        let prev = b.vs[c].counter.fetch_sub(1, Ordering::AcqRel);
        if external {
            let u = self.plan.unit_of[c];
            let pu = self.units[u].counter.fetch_sub(1, Ordering::SeqCst);
            if pu == 1 && self.is_ns() && self.units[u].state.load(Ordering::SeqCst) == IDLE {
                if let Some(d) = &ctx.deque {
                    d.push(u);
                }
            }
        }
        if prev == 1 {
            match b.fsm(c) {
                FsmState::Blk => {
                    b.cas(c, FsmState::Blk, FsmState::Rdy, Transition::T1);
                }
                FsmState::Abt => return self.mark_resolved(c),
                _ => {}
            }
        }
        false
    }

    fn coordinator_of(&self, v: Vid) -> usize {
        let head = self.b.tpg.txns[self.b.tpg.vertices[v].txn].first;
        match self.plan.unit_of[head] {
            usize::MAX => 0,
            u => self.owner[u],
        }
    }

    /// Eager handling outside barriers: the thread owning a failed
    /// transaction's head operation aborts it once it is safe to.
    fn maybe_coordinate(&self, ctx: &mut Ctx) {
        if self.decision.abort != AbortMode::Eager || self.pending_len.load(Ordering::Acquire) == 0 {
            return;
        }
        let progress = self.progress.load(Ordering::Relaxed) ^ (self.epoch.load(Ordering::Relaxed) << 40);
        if progress == ctx.last_check {
            return;
        }
        ctx.last_check = progress;
        let t0 = Instant::now();
        let candidate = {
            let _g = self.gate.read();
            let p = self.pending.lock().clone();
            p.into_iter()
                .any(|v| self.coordinator_of(v) == ctx.t && self.is_failed(v) && self.failure_valid(v))
        };
        if candidate {
            let _w = self.gate.write();
            if let Err(e) = self.process_failures(Some(ctx.t)) {
                self.fail_with(e);
            }
        }
        ctx.bd.abort += t0.elapsed();
    }

    fn is_failed(&self, v: Vid) -> bool {
        self.b.fsm(v) == FsmState::Exe && self.b.vs[v].failed.load(Ordering::Acquire)
    }

    /// A failure is final once every transaction its parents belong to has
    /// settled: all operations executed without failing or aborted, and the
    /// same holds for their ancestors.
    fn failure_valid(&self, v: Vid) -> bool {
        let tpg = self.b.tpg;
        let own = tpg.vertices[v].txn;
        tpg.vertices[v].parents().all(|p| {
            let t = tpg.vertices[p].txn;
            t == own || self.txn_stable(t)
        })
    }

    /// Whether `root` and all its ancestor transactions have settled.
    /// Settled transactions are cached until an abort touches them.
    fn txn_stable(&self, root: usize) -> bool {
        let b = self.b;
        if b.txn_stable[root].load(Ordering::Acquire) {
            return true;
        }
        let own_ok = |t: usize| {
            b.tpg.txns[t].vertices().all(|v| match b.fsm(v) {
                FsmState::Abt => true,
                FsmState::Exe => !b.vs[v].failed.load(Ordering::Acquire) && b.vs[v].resolved.load(Ordering::Acquire),
                _ => false,
            })
        };
        let parent_txns = |t: usize| {
            let mut ps: Vec<usize> = b.tpg.txns[t]
                .vertices()
                .flat_map(|v| b.tpg.vertices[v].parents())
                .map(|p| b.tpg.vertices[p].txn)
                .filter(|&pt| pt != t)
                .collect();
            ps.sort_unstable();
            ps.dedup();
            ps
        };
        if !own_ok(root) {
            return false;
        }
        // Post-order walk: a transaction is marked once all its parents are.
        let mut stack = vec![(root, parent_txns(root))];
        while let Some((t, ps)) = stack.last_mut() {
            match ps.pop() {
                Some(pt) => {
                    if b.txn_stable[pt].load(Ordering::Acquire) {
                        continue;
                    }
                    if !own_ok(pt) {
                        return false;
                    }
                    let pps = parent_txns(pt);
                    stack.push((pt, pps));
                }
                None => {
                    b.txn_stable[*t].store(true, Ordering::Release);
                    stack.pop();
                }
            }
        }
        true
    }

    fn clear_dirty(&self) {
        let b = self.b;
        for t in b.dirty_txns.lock().drain(..) {
            b.txn_stable[t].store(false, Ordering::Release);
        }
    }

    /// Aborts the transactions of valid failures in timestamp order. Must
    /// hold the gate exclusively. `coordinator` restricts to failures owned
    /// by that thread.
    fn process_failures(&self, coordinator: Option<usize>) -> Result<(), ExecError> {
        // Workers leave once nothing remains; reopening work behind them
        // would strand it, so those failures wait for the round end.
        if coordinator.is_some() && self.remaining.load(Ordering::Acquire) == 0 {
            return Ok(());
        }
        let mut pending = self.pending.lock();
        let mut cand = std::mem::take(&mut *pending);
        cand.sort_unstable();
        cand.dedup();
        let mut kept = Vec::new();
        let mut changed = false;
        for v in cand {
            if !self.is_failed(v) {
                continue;
            }
            if coordinator.is_some_and(|t| t != self.coordinator_of(v)) || !self.failure_valid(v) {
                kept.push(v);
                continue;
            }
            self.abort_txn(v)?;
            changed = true;
            self.clear_dirty();
        }
        *pending = kept;
        self.pending_len.store(pending.len(), Ordering::Release);
        drop(pending);
        if changed {
            self.recompute_touched();
        }
        Ok(())
    }

    fn abort_txn(&self, failing: Vid) -> Result<(), ExecError> {
        let b = self.b;
        let t = b.tpg.vertices[failing].txn;
        b.txn_aborted[t].store(true, Ordering::Release);
        b.dirty_txns.lock().push(t);
        let members: Vec<Vid> = if b.fault == Some(Fault::SkipLdClosure) {
            vec![failing]
        } else {
            b.tpg.txns[t].vertices().collect()
        };
        let mut work = Vec::new();
        for o in members {
            if b.fsm(o) == FsmState::Abt {
                continue;
            }
            let rec = b.vs[o].record.lock().take();
            if let Some(rec) = rec {
                for &(k, ts) in &rec.written_versions {
                    b.truncations.lock().push(Truncation {
                        vid: o,
                        key: k,
                        resolved_keys: rec.resolved_keys.clone(),
                    });
                    self.invalidate(k, ts, b.fault != Some(Fault::SkipTruncation), &mut work)?;
                }
            }
            b.vs[o].failed.store(false, Ordering::Release);
            let was = b.vs[o].resolved.swap(false, Ordering::AcqRel);
            self.touched.lock().push((o, was));
            b.set(o, FsmState::Abt, Transition::T4);
        }
        while let Some(x) = work.pop() {
            self.rollback(x, &mut work)?;
        }
        Ok(())
    }

    /// Removes versions of `k` from `ts` on and queues every executed
    /// accessor that came later for rollback.
    fn invalidate(&self, k: Key, ts: Timestamp, truncate: bool, work: &mut Vec<Vid>) -> Result<(), ExecError> {
        let b = self.b;
        if truncate {
            b.table.truncate_after(k, ts)?;
        }
        if b.fault == Some(Fault::SkipRollbackCascade) {
            return Ok(());
        }
        let list = &b.tpg.lists[k.index()];
        let start = list.entries.partition_point(|e| e.id.ts <= ts);
        for &o in &list.owners[start..] {
            // Non-deterministic accessors that did not touch `k` still go:
            // later entries of the list are ordered behind them.
            if b.vs[o].record.lock().is_some() {
                work.push(o);
            }
        }
        Ok(())
    }

    fn rollback(&self, v: Vid, work: &mut Vec<Vid>) -> Result<(), ExecError> {
        let b = self.b;
        let Some(rec) = b.vs[v].record.lock().take() else {
            return Ok(());
        };
        b.dirty_txns.lock().push(b.tpg.vertices[v].txn);
        b.vs[v].failed.store(false, Ordering::Release);
        let was = b.vs[v].resolved.swap(false, Ordering::AcqRel);
        self.touched.lock().push((v, was));
        if b.tpg.vertices[v].op.kind == OpKind::Write {
            if let Some(k) = rec.target {
                self.invalidate(k, rec.op_id.ts, true, work)?;
            }
        }
        Ok(())
    }

    /// Rebuilds counters, FSM states and unit progress from the resolved
    /// flags. Requires exclusive access.
    fn recompute(&self) {
        self.touched.lock().clear();
        let mut remaining = 0;
        for &v in &self.scope {
            if !self.refresh_vertex(v) {
                remaining += 1;
            }
        }
        self.remaining.store(remaining, Ordering::Release);
        for u in 0..self.plan.units.len() {
            self.refresh_unit(u);
        }
        self.finish_recompute();
    }

    /// Same as [`Self::recompute`], limited to the vertices reset since the
    /// last call and whatever their resolved flags reach.
    fn recompute_touched(&self) {
        let b = self.b;
        let touched = std::mem::take(&mut *self.touched.lock());
        // Flag each vertex had before this pass, and the flag its children last saw.
        let mut before: HashMap<Vid, bool> = HashMap::new();
        let mut seen: HashMap<Vid, bool> = HashMap::new();
        let mut work = BTreeSet::new();
        for (v, was) in touched {
            before.entry(v).or_insert(was);
            seen.entry(v).or_insert(was);
            work.insert(v);
        }
        let mut units = BTreeSet::new();
        // Vertex ids are topological, so each vertex is settled once its
        // smaller-id parents are.
        while let Some(v) = work.pop_first() {
            if self.plan.unit_of[v] == usize::MAX {
                continue;
            }
            let prev = *seen.entry(v).or_insert_with(|| b.vs[v].resolved.load(Ordering::Relaxed));
            before.entry(v).or_insert(prev);
            let now = self.refresh_vertex(v);
            units.insert(self.plan.unit_of[v]);
            if now != prev {
                seen.insert(v, now);
                work.extend(b.tpg.vertices[v].children());
            }
        }
        let mut remaining = self.remaining.load(Ordering::Relaxed) as i64;
        for (v, was) in before {
            let now = b.vs[v].resolved.load(Ordering::Relaxed);
            remaining += i64::from(was) - i64::from(now);
        }
        self.remaining.store(remaining.max(0) as usize, Ordering::Release);
        for u in units {
            self.refresh_unit(u);
        }
        self.finish_recompute();
    }

    /// Recounts `v`'s unresolved parents and settles its state. Returns
    /// whether it is resolved.
    fn refresh_vertex(&self, v: Vid) -> bool {
        let b = self.b;
        let vs = &b.vs[v];
        let unresolved = b.tpg.vertices[v]
            .parents()
            .filter(|&p| !b.vs[p].resolved.load(Ordering::Relaxed))
            .count() as i64;
        vs.counter.store(unresolved, Ordering::Relaxed);
        let st = b.fsm(v);
        let resolved = match st {
            FsmState::Abt => unresolved == 0,
            _ if vs.record.lock().is_some() => true,
            _ => {
                let (to, reason) = match (st, unresolved == 0) {
                    (FsmState::Exe, true) => (FsmState::Rdy, Transition::T5),
                    (FsmState::Exe, false) => (FsmState::Blk, Transition::T6),
                    (_, true) => (FsmState::Rdy, Transition::T1),
                    (_, false) => (FsmState::Blk, Transition::T6),
                };
                b.set(v, to, reason);
                false
            }
        };
        vs.resolved.store(resolved, Ordering::Relaxed);
        resolved
    }

    fn refresh_unit(&self, u: usize) {
        let b = self.b;
        let unit = &self.plan.units[u];
        let us = &self.units[u];
        let mut ext = 0;
        for &m in &unit.members {
            for p in b.tpg.vertices[m].parents() {
                if self.plan.unit_of[p] != u && !b.vs[p].resolved.load(Ordering::Relaxed) {
                    ext += 1;
                }
            }
        }
        let ext_before = us.counter.swap(ext, Ordering::Relaxed);
        let cursor = unit
            .members
            .iter()
            .position(|&m| !b.vs[m].resolved.load(Ordering::Relaxed))
            .unwrap_or(unit.members.len());
        let cursor_before = us.cursor.swap(cursor, Ordering::Relaxed);
        let state_before = us.state.load(Ordering::Relaxed);
        if state_before != RUNNING {
            let st = if cursor == unit.members.len() { DONE } else { IDLE };
            us.state.store(st, Ordering::Relaxed);
            // Idle ready units that did not change are already queued.
            let changed = state_before == DONE || ext_before > 0 || cursor_before != cursor;
            if st == IDLE && ext == 0 && self.is_ns() && changed {
                self.injector.push(u);
            }
        }
    }

    fn finish_recompute(&self) {
        for h in &self.holders {
            while h.pop().is_some() {}
        }
        self.clear_dirty();
        self.epoch.fetch_add(1, Ordering::AcqRel);
    }
}

/// Single-threaded handle for driving individual transitions by hand.
pub struct Stepper<'a> {
    batch: Batch<'a>,
    decision: SchedulingDecision,
}

impl<'a> Stepper<'a> {
    pub fn new(tpg: &'a Tpg, table: &'a VersionedStateTable, reg: &'a UdfRegistry, speculation: bool) -> Self {
        let cfg = ExecConfig {
            threads: 1,
            speculation: Some(speculation),
            log_transitions: true,
            ..ExecConfig::default()
        };
        let decision = SchedulingDecision::new(
            Exploration::NonStructured,
            crate::scheduler::Granularity::Fine,
            AbortMode::Lazy,
        );
        let s = Stepper {
            batch: Batch::new(tpg, table, reg, &cfg),
            decision,
        };
        s.with_run(|r, _| r.recompute());
        s
    }

    fn with_run<R>(&self, f: impl FnOnce(&Run, &mut Ctx) -> R) -> R {
        let run = Run::new(
            &self.batch,
            GroupPlan {
                group: None,
                decision: self.decision,
                threads: 1,
            },
        );
        // Rebuild per-unit counters from the shared vertex state.
        for (u, unit) in run.plan.units.iter().enumerate() {
            let ext = unit
                .members
                .iter()
                .flat_map(|&m| self.batch.tpg.vertices[m].parents())
                .filter(|&p| !self.batch.vs[p].resolved.load(Ordering::Relaxed))
                .count();
            run.units[u].counter.store(ext as i64, Ordering::Relaxed);
        }
        let unresolved = run
            .scope
            .iter()
            .filter(|&&v| !self.batch.vs[v].resolved.load(Ordering::Relaxed))
            .count();
        run.remaining.store(unresolved, Ordering::Relaxed);
        let mut ctx = Ctx::new(0);
        let out = f(&run, &mut ctx);
        // Signals that would have gone through holders are applied inline.
        while let Some(c) = run.holders[0].pop() {
            run.decrement(&mut ctx, c, true);
        }
        out
    }

    pub fn state(&self, v: Vid) -> FsmState {
        self.batch.fsm(v)
    }

    pub fn executions(&self, v: Vid) -> u32 {
        self.batch.vs[v].execs.load(Ordering::Relaxed)
    }

    pub fn record(&self, v: Vid) -> Option<ExecRecord> {
        self.batch.vs[v].record.lock().clone()
    }

    pub fn transitions(&self) -> Vec<TransitionRecord> {
        self.batch.log.as_ref().map(|l| l.lock().clone()).unwrap_or_default()
    }

    /// T1: becomes RDY when no TD/PD parent is unresolved.
    pub fn try_ready(&self, v: Vid) -> bool {
        let b = &self.batch;
        match b.fsm(v) {
            FsmState::Rdy => true,
            FsmState::Blk if b.vs[v].counter.load(Ordering::Relaxed) <= 0 => {
                b.cas(v, FsmState::Blk, FsmState::Rdy, Transition::T1)
            }
            _ => false,
        }
    }

    /// T2 on a RDY vertex. Returns the record, or `None` if not RDY.
    pub fn execute(&self, v: Vid) -> Result<Option<ExecRecord>, ExecError> {
        if self.batch.fsm(v) != FsmState::Rdy {
            return Ok(None);
        }
        self.with_run(|r, ctx| r.step(ctx, v))?;
        Ok(self.record(v))
    }

    /// T3 on a BLK vertex whose parents are all resolved.
    pub fn speculate(&self, v: Vid) -> Result<Option<ExecRecord>, ExecError> {
        let b = &self.batch;
        if b.fsm(v) != FsmState::Blk || !b.parents_resolved(v) {
            return Ok(None);
        }
        self.with_run(|r, ctx| r.step(ctx, v))?;
        Ok(self.record(v))
    }

    /// T4 for `v`'s transaction, with truncation and the rollback cascade.
    pub fn fail(&self, v: Vid) -> Result<(), ExecError> {
        self.with_run(|r, _| {
            r.abort_txn(v)?;
            r.recompute();
            Ok(())
        })
    }

    /// T5/T6: rolls back an executed vertex and everything that read after it.
    pub fn rollback(&self, v: Vid) -> Result<FsmState, ExecError> {
        self.with_run(|r, _| {
            let mut work = vec![v];
            while let Some(x) = work.pop() {
                r.rollback(x, &mut work)?;
            }
            r.recompute();
            Ok::<(), ExecError>(())
        })?;
        Ok(self.batch.fsm(v))
    }
}

/// Checks every logged transition against the legal set.
pub fn audit_transitions(log: &[TransitionRecord]) -> Result<(), String> {
    for r in log {
        if !r.reason.permits(r.from, r.to) {
            return Err(format!("illegal transition {r}"));
        }
    }
    Ok(())
}
