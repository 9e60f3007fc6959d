//! Domain types shared by every stage of the engine.
//!
//! An input event is turned into one [`StateTransaction`]: an ordered list of
//! [`Operation`]s that all carry the event's [`Timestamp`]. Operations are the
//! vertices of the task precedence graph built by the planner.

use std::cmp::Ordering;
use std::fmt;

use crate::error::CoreError;

/// State value. Benchmarks model balances and counters as 64-bit integers.
pub type Value = i64;

/// Identifier of one shared state. Benchmark keys are dense, `0..key_space`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Key(pub u64);

impl Key {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Logical time of the event that triggered a transaction.
///
/// `Timestamp(0)` is reserved for the pre-batch snapshot held by every
/// version chain; transactions always carry a timestamp above zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const SNAPSHOT: Timestamp = Timestamp(0);

    /// Lower bound of a window `[self - range, self)`, saturating at the snapshot.
    pub fn saturating_sub(self, range: u64) -> Timestamp {
        Timestamp(self.0.saturating_sub(range))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Operation identity: transaction timestamp plus statement position.
///
/// The derived ordering is lexicographic on `(ts, stmt)`, which is the total
/// order the planner uses for sorted lists and vertex numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpId {
    pub ts: Timestamp,
    pub stmt: u32,
}

impl OpId {
    pub fn new(ts: u64, stmt: u32) -> Self {
        OpId { ts: Timestamp(ts), stmt }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.ts.0, self.stmt)
    }
}

/// Total order over the operations of a batch.
pub fn op_order(a: &Operation, b: &Operation) -> Ordering {
    a.id.cmp(&b.id)
}

/// Transaction group used by nested scheduling. Plain workloads use group 0.
pub type GroupId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionKind {
    /// `f(reads, params) -> value`
    Value,
    /// `g(reads, params) -> bool`; `false` aborts the transaction.
    Condition,
    /// `w(window_values, params) -> value`
    WindowAggregate,
    /// `s(params, key_space) -> keys`
    KeySelector,
}

/// Handle to a function held by the [`crate::udf::UdfRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FunctionRef {
    pub id: u32,
    pub arity: u32,
    pub kind: FunctionKind,
}

/// Keys read by a window operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowKeys {
    Explicit(Vec<Key>),
    /// Keys chosen at execution time. `candidates` bounds the choice when the
    /// workload declares it; otherwise every key of the table is a candidate.
    Selector {
        selector: FunctionRef,
        candidates: Option<Vec<Key>>,
    },
}

/// Which states an operation touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeySpec {
    Deterministic(Key),
    /// Writes (or reads) `target`; its value function also reads `reads`.
    MultiKey { target: Key, reads: Vec<Key> },
    /// Keys chosen by a selector at execution time. For writes the first
    /// selected key is the target and the rest are read; for reads all
    /// selected keys are read.
    NonDeterministic {
        selector: FunctionRef,
        candidates: Option<Vec<Key>>,
    },
    /// Aggregates the versions of `keys` within `[trigger - range, trigger)`.
    /// Window writes store the aggregate into `target`.
    WindowRange {
        target: Option<Key>,
        keys: WindowKeys,
        range: u64,
        trigger: Timestamp,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Read,
    Write,
}

/// One atomic state access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation {
    pub id: OpId,
    pub kind: OpKind,
    pub keys: KeySpec,
    /// Value function for writes; window operations carry their aggregate here.
    pub value_fn: Option<FunctionRef>,
    pub cond_fn: Option<FunctionRef>,
    /// Event-specific constants handed to every function of the operation.
    pub params: Vec<Value>,
    pub is_virtual: bool,
    pub owner: Option<OpId>,
}

impl Operation {
    pub fn ts(&self) -> Timestamp {
        self.id.ts
    }

    /// Key the operation is placed under as a real (non-virtual) list entry.
    pub fn real_key(&self) -> Option<Key> {
        match &self.keys {
            KeySpec::Deterministic(k) => Some(*k),
            KeySpec::MultiKey { target, .. } => Some(*target),
            KeySpec::NonDeterministic { .. } => None,
            KeySpec::WindowRange { target, .. } => *target,
        }
    }

    /// Statically known key this operation writes, if any.
    pub fn static_write_key(&self) -> Option<Key> {
        match self.kind {
            OpKind::Write => self.real_key(),
            OpKind::Read => None,
        }
    }

    pub fn is_nondeterministic(&self) -> bool {
        matches!(self.keys, KeySpec::NonDeterministic { .. })
            || matches!(
                self.keys,
                KeySpec::WindowRange {
                    keys: WindowKeys::Selector { .. },
                    ..
                }
            )
    }

    pub fn is_window(&self) -> bool {
        matches!(self.keys, KeySpec::WindowRange { .. })
    }

    /// Structural checks that do not need the registry.
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.is_virtual != self.owner.is_some() {
            return Err(CoreError::InvalidOperation(
                self.id,
                "owner must be set exactly for virtual operations",
            ));
        }
        if self.is_virtual && self.kind != OpKind::Read {
            return Err(CoreError::InvalidOperation(self.id, "virtual operations are reads"));
        }
        if self.id.ts == Timestamp::SNAPSHOT {
            return Err(CoreError::InvalidOperation(self.id, "timestamp 0 is reserved"));
        }
        match &self.keys {
            KeySpec::MultiKey { target, reads } => {
                if reads.is_empty() {
                    return Err(CoreError::InvalidOperation(self.id, "empty read-key list"));
                }
                let mut seen = reads.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != reads.len() || reads.contains(target) {
                    return Err(CoreError::InvalidOperation(
                        self.id,
                        "read keys must be distinct and exclude the target",
                    ));
                }
            }
            KeySpec::WindowRange {
                target,
                keys,
                range,
                trigger,
            } => {
                if *range == 0 {
                    return Err(CoreError::InvalidOperation(self.id, "window range must be positive"));
                }
                if *trigger > self.id.ts {
                    return Err(CoreError::InvalidOperation(self.id, "window trigger after the operation"));
                }
                if self.kind == OpKind::Write && target.is_none() {
                    return Err(CoreError::InvalidOperation(self.id, "window write needs a target"));
                }
                if let (Some(t), WindowKeys::Explicit(ks)) = (target, keys) {
                    if ks.contains(t) {
                        return Err(CoreError::InvalidOperation(
                            self.id,
                            "window keys must exclude the target",
                        ));
                    }
                }
            }
            KeySpec::NonDeterministic { .. } | KeySpec::Deterministic(_) => {}
        }
        if self.kind == OpKind::Write && !self.is_window() && self.value_fn.is_none() {
            return Err(CoreError::InvalidOperation(self.id, "write without value function"));
        }
        if self.is_window() && self.value_fn.is_none() {
            return Err(CoreError::InvalidOperation(self.id, "window operation without aggregate"));
        }
        Ok(())
    }
}

/// All operations issued while processing one input event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateTransaction {
    pub ts: Timestamp,
    pub event_id: u64,
    pub group: GroupId,
    pub ops: Vec<Operation>,
}

impl StateTransaction {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.ops.is_empty() {
            return Err(CoreError::EmptyTransaction(self.ts));
        }
        let mut write_keys = Vec::new();
        let mut nondet_writes = 0;
        for (i, op) in self.ops.iter().enumerate() {
            if op.id.ts != self.ts || op.id.stmt as usize != i {
                return Err(CoreError::InvalidOperation(
                    op.id,
                    "statement ids must be contiguous and share the transaction timestamp",
                ));
            }
            if op.is_virtual {
                return Err(CoreError::InvalidOperation(op.id, "virtual operation inside a transaction"));
            }
            op.validate()?;
            if op.kind == OpKind::Write && matches!(op.keys, KeySpec::NonDeterministic { .. }) {
                nondet_writes += 1;
                if nondet_writes > 1 {
                    return Err(CoreError::InvalidOperation(
                        op.id,
                        "at most one non-deterministic write per transaction",
                    ));
                }
            }
            if let Some(k) = op.static_write_key() {
                if write_keys.contains(&k) {
                    return Err(CoreError::InvalidOperation(
                        op.id,
                        "a transaction writes each key at most once",
                    ));
                }
                write_keys.push(k);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(ts: u64, stmt: u32) -> Operation {
        Operation {
            id: OpId::new(ts, stmt),
            kind: OpKind::Read,
            keys: KeySpec::Deterministic(Key(0)),
            value_fn: None,
            cond_fn: None,
            params: vec![],
            is_virtual: false,
            owner: None,
        }
    }

    #[test]
    fn timestamp_dominates_statement() {
        assert_eq!(op_order(&op(1, 0), &op(2, 0)), Ordering::Less);
        assert_eq!(op_order(&op(1, 5), &op(2, 0)), Ordering::Less);
    }

    #[test]
    fn statement_breaks_ties() {
        assert_eq!(op_order(&op(2, 0), &op(2, 1)), Ordering::Less);
    }

    #[test]
    fn reflexive() {
        let a = op(3, 1);
        assert_eq!(op_order(&a, &a), Ordering::Equal);
    }

    #[test]
    fn op_order_is_strict_total_order_on_small_batches() {
        let ops: Vec<Operation> = (1..=10)
            .flat_map(|ts| (0..10).map(move |s| op(ts, s)))
            .collect();
        for a in &ops {
            for b in &ops {
                let ab = op_order(a, b);
                assert_eq!(ab, op_order(b, a).reverse());
                assert_eq!(ab == Ordering::Equal, a.id == b.id);
                for c in &ops {
                    if ab == Ordering::Less && op_order(b, c) == Ordering::Less {
                        assert_eq!(op_order(a, c), Ordering::Less);
                    }
                }
            }
        }
    }

    #[test]
    fn multikey_rejects_target_in_reads() {
        let mut o = op(1, 0);
        o.kind = OpKind::Write;
        o.value_fn = Some(FunctionRef {
            id: 0,
            arity: 2,
            kind: FunctionKind::Value,
        });
        o.keys = KeySpec::MultiKey {
            target: Key(1),
            reads: vec![Key(1)],
        };
        assert!(o.validate().is_err());
        o.keys = KeySpec::MultiKey {
            target: Key(1),
            reads: vec![Key(2), Key(2)],
        };
        assert!(o.validate().is_err());
        o.keys = KeySpec::MultiKey {
            target: Key(1),
            reads: vec![Key(2)],
        };
        assert!(o.validate().is_ok());
    }

    #[test]
    fn empty_transaction_rejected() {
        let t = StateTransaction {
            ts: Timestamp(1),
            event_id: 0,
            group: 0,
            ops: vec![],
        };
        assert!(matches!(t.validate(), Err(CoreError::EmptyTransaction(_))));
    }
}
