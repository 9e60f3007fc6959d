//! Reference execution: one transaction at a time in timestamp order over a
//! single-version table.
//!
//! Window reads need the versions written inside their range, so the oracle
//! keeps a per-key history. Like the engine, history is collapsed to one
//! snapshot per key at every batch boundary, and window ranges that reach
//! back to the start of the batch cover that snapshot.

use std::collections::{BTreeMap, HashSet};

use tsp_core::runtime::{BlotterStatus, Event, Operator, RuntimeError, TxnBuilder};
use tsp_core::udf::UdfRegistry;
use tsp_core::{Key, KeySpec, OpKind, Operation, StateTransaction, Value, WindowKeys};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<O> {
    pub state: Vec<Value>,
    /// Event id to committed flag, for events that issued a transaction.
    pub committed: BTreeMap<u64, bool>,
    pub outputs: BTreeMap<u64, O>,
}

struct Serial<'r> {
    reg: &'r UdfRegistry,
    /// Versions per key, oldest first; `(0, v)` is the batch snapshot.
    history: Vec<Vec<(u64, Value)>>,
    /// Timestamp just before the batch's first transaction.
    base: Option<u64>,
}

impl Serial<'_> {
    fn latest(&self, k: Key) -> Value {
        self.history[k.index()].last().expect("never empty").1
    }

    fn key_ok(&self, k: Key) -> bool {
        (k.0 as usize) < self.history.len()
    }

    /// Selected keys, or `None` when the selection is unusable.
    fn select(&self, op: &Operation, selector: tsp_core::FunctionRef, candidates: &Option<Vec<Key>>) -> Result<Option<Vec<Key>>, RuntimeError> {
        let ks = self.reg.eval_selector(selector, &op.params, self.history.len() as u64)?;
        let mut seen = HashSet::new();
        let valid = !ks.is_empty()
            && ks.iter().all(|k| {
                self.key_ok(*k) && seen.insert(*k) && candidates.as_ref().map_or(true, |c| c.contains(k))
            });
        Ok(valid.then_some(ks))
    }

    /// Runs one transaction; returns per-op outputs, or `None` if it fails.
    fn run(&mut self, txn: &StateTransaction) -> Result<Option<Vec<Option<Value>>>, RuntimeError> {
        let ts = txn.ts.0;
        let base = *self.base.get_or_insert(ts - 1);
        let mut outputs = Vec::with_capacity(txn.ops.len());
        let mut writes: Vec<(Key, Value)> = Vec::new();
        for op in &txn.ops {
            let mut window = None;
            let keys: Vec<Key> = match &op.keys {
                KeySpec::Deterministic(k) => vec![*k],
                KeySpec::MultiKey { target, reads } => std::iter::once(*target).chain(reads.iter().copied()).collect(),
                KeySpec::NonDeterministic { selector, candidates } => {
                    let Some(ks) = self.select(op, *selector, candidates)? else {
                        return Ok(None);
                    };
                    // A selected target may not collide with another write of the transaction.
                    if op.kind == OpKind::Write
                        && txn
                            .ops
                            .iter()
                            .any(|o| o.id != op.id && o.static_write_key() == Some(ks[0]))
                    {
                        return Ok(None);
                    }
                    ks
                }
                KeySpec::WindowRange {
                    target,
                    keys,
                    range,
                    trigger,
                } => {
                    let wkeys = match keys {
                        WindowKeys::Explicit(ks) => ks.clone(),
                        WindowKeys::Selector { selector, candidates } => match self.select(op, *selector, candidates)? {
                            Some(ks) if target.map_or(true, |t| !ks.contains(&t)) => ks,
                            _ => return Ok(None),
                        },
                    };
                    let lo = match trigger.0.saturating_sub(*range) {
                        lo if lo <= base => 0,
                        lo => lo,
                    };
                    let values: Vec<Value> = wkeys
                        .iter()
                        .flat_map(|k| {
                            self.history[k.index()]
                                .iter()
                                .filter(|(t, _)| *t >= lo && *t < trigger.0)
                                .map(|(_, v)| *v)
                        })
                        .collect();
                    let f = op.value_fn.expect("window aggregate");
                    window = Some(self.reg.eval_window(f, &values, &op.params)?);
                    target.iter().copied().collect()
                }
            };
            let reads: Vec<Value> = match window {
                Some(w) => vec![w],
                None => keys.iter().map(|k| self.latest(*k)).collect(),
            };
            if let Some(c) = op.cond_fn {
                if !self.reg.eval_condition(c, &reads, &op.params)? {
                    return Ok(None);
                }
            }
            let value = match (window, op.value_fn) {
                (Some(w), _) => w,
                (None, Some(f)) => self.reg.eval_value(f, &reads, &op.params)?,
                (None, None) => reads[0],
            };
            outputs.push(Some(value));
            if op.kind == OpKind::Write {
                writes.push((keys[0], value));
            }
        }
        // Reads above saw the state before the transaction.
        for (k, v) in writes {
            self.history[k.index()].push((ts, v));
        }
        Ok(Some(outputs))
    }

    fn end_batch(&mut self) {
        for h in &mut self.history {
            let v = h.last().expect("never empty").1;
            h.clear();
            h.push((0, v));
        }
        self.base = None;
    }
}

/// Executes `events` serially. Events are grouped into batches of `interval`
/// by arrival position and run in timestamp order.
pub fn serial_oracle<Op: Operator>(
    op: &Op,
    reg: &UdfRegistry,
    initial: &[Value],
    events: &[Event<Op::Payload>],
    interval: usize,
) -> Result<OracleResult<Op::Output>, RuntimeError> {
    let mut order: Vec<&Event<Op::Payload>> = events.iter().collect();
    order.sort_by_key(|e| (e.arrival_index / interval.max(1), e.ts));
    let mut s = Serial {
        reg,
        history: initial.iter().map(|v| vec![(0, *v)]).collect(),
        base: None,
    };
    let mut out = OracleResult {
        state: Vec::new(),
        committed: BTreeMap::new(),
        outputs: BTreeMap::new(),
    };
    let mut batch = None;
    for e in order {
        let b = e.arrival_index / interval.max(1);
        if batch.is_some_and(|p| p != b) {
            s.end_batch();
        }
        batch = Some(b);
        let mut eb = op.pre_process(e);
        if eb.status != BlotterStatus::NoOp {
            let mut tb = TxnBuilder::new(reg, e.ts, e.event_id, e.group);
            op.state_access(&eb, &mut tb)?;
            let txn = tb.finish();
            if txn.ops.is_empty() {
                return Err(RuntimeError::NoAccess(e.event_id));
            }
            match s.run(&txn)? {
                Some(results) => {
                    eb.results = results;
                    eb.settle(true);
                }
                None => {
                    eb.results = vec![None; txn.ops.len()];
                    eb.settle(false);
                }
            }
            out.committed.insert(e.event_id, eb.status == BlotterStatus::Committed);
        }
        if let Some(o) = op.post_process(e, &eb) {
            out.outputs.insert(e.event_id, o);
        }
    }
    out.state = (0..s.history.len()).map(|k| s.latest(Key(k as u64))).collect();
    Ok(out)
}

/// Convenience for tests that hold transactions rather than events.
pub fn replay_transactions(reg: &UdfRegistry, initial: &[Value], txns: &[StateTransaction]) -> Result<(Vec<Value>, Vec<bool>), RuntimeError> {
    let mut s = Serial {
        reg,
        history: initial.iter().map(|v| vec![(0, *v)]).collect(),
        base: None,
    };
    let mut order: Vec<usize> = (0..txns.len()).collect();
    order.sort_by_key(|&i| txns[i].ts);
    let mut committed = vec![false; txns.len()];
    for i in order {
        committed[i] = s.run(&txns[i])?.is_some();
    }
    let state = (0..s.history.len()).map(|k| s.latest(Key(k as u64))).collect();
    Ok((state, committed))
}
