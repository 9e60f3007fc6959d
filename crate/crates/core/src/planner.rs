//! Task precedence graph construction.
//!
//! Construction runs in two phases separated by the batch punctuation:
//!
//! 1. [`TpgBuilder::phase1_insert`] decomposes each transaction, records its
//!    logical dependencies and places every operation into the sorted list of
//!    each key it touches. Multi-key, window and non-deterministic operations
//!    place *virtual* entries into the lists of the keys they read (or might
//!    touch). Transactions may arrive in any order and from several threads.
//! 2. [`TpgBuilder::phase2_refine`] walks every sorted list once. Each entry
//!    depends on the closest preceding entry that may write the key and has a
//!    strictly smaller timestamp: a temporal dependency when the entry is a
//!    real access, a parametric one when it is virtual. Only these adjacent
//!    edges are stored; order along the list implies the transitive ones.
//!
//! Readers never precede writers in the graph: a later write lands in a new
//! version and cannot change what an earlier reader observed.

use std::collections::HashSet;
use std::fmt::Write as _;

use parking_lot::Mutex;
use rayon::prelude::*;
use thiserror::Error;

use crate::error::CoreError;
use crate::types::{GroupId, Key, KeySpec, OpId, OpKind, Operation, StateTransaction, Timestamp, WindowKeys};

pub type Vid = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DepClass {
    /// Temporal: same state, later timestamp.
    TD,
    /// Parametric: the value function reads a state written earlier.
    PD,
    /// Logical: same transaction, all-or-nothing.
    LD,
}

impl DepClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DepClass::TD => "TD",
            DepClass::PD => "PD",
            DepClass::LD => "LD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "TD" => Some(DepClass::TD),
            "PD" => Some(DepClass::PD),
            "LD" => Some(DepClass::LD),
            _ => None,
        }
    }

    /// TD and PD edges gate execution, LD edges never do.
    pub fn gates_execution(self) -> bool {
        !matches!(self, DepClass::LD)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("transaction at ts {0} has no operations")]
    EmptyTransaction(Timestamp),
    #[error("timestamp {0} is used by two transactions in one batch")]
    DuplicateTimestamp(Timestamp),
    #[error("operation {0} touches key {1} outside the table")]
    KeyOutOfRange(OpId, Key),
    #[error(transparent)]
    Invalid(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ListEntry {
    pub id: OpId,
    pub is_virtual: bool,
    /// Real writes and virtual entries of non-deterministic writes.
    pub may_write: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SortedList {
    pub key: Key,
    pub entries: Vec<ListEntry>,
    /// Vertex of each entry's owner, filled by phase 2.
    pub owners: Vec<Vid>,
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub op: Operation,
    pub txn: usize,
    pub group: GroupId,
    pub out_edges: Vec<(Vid, DepClass)>,
    pub in_edges: Vec<(Vid, DepClass)>,
    /// Static count of TD and PD in-edges.
    pub unresolved_parents: u32,
    /// Keys of this operation's virtual entries.
    pub virtual_children: Vec<Key>,
}

impl Vertex {
    pub fn parents(&self) -> impl Iterator<Item = Vid> + '_ {
        self.in_edges.iter().filter(|(_, c)| c.gates_execution()).map(|&(v, _)| v)
    }

    pub fn children(&self) -> impl Iterator<Item = Vid> + '_ {
        self.out_edges.iter().filter(|(_, c)| c.gates_execution()).map(|&(v, _)| v)
    }

    /// Every key with an entry for this vertex: the real key first, then
    /// virtual keys.
    pub fn list_keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.op.real_key().into_iter().chain(self.virtual_children.iter().copied())
    }
}

#[derive(Debug, Clone)]
pub struct TxnInfo {
    pub ts: Timestamp,
    pub event_id: u64,
    pub group: GroupId,
    pub first: Vid,
    pub len: usize,
}

impl TxnInfo {
    pub fn vertices(&self) -> std::ops::Range<Vid> {
        self.first..self.first + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub rank: usize,
    pub members: Vec<Vid>,
}

/// Refined task precedence graph of one batch.
#[derive(Debug, Clone)]
pub struct Tpg {
    pub key_space: u64,
    /// Sorted by operation order, so vertex ids follow `(ts, stmt)`.
    pub vertices: Vec<Vertex>,
    pub lists: Vec<SortedList>,
    pub txns: Vec<TxnInfo>,
    pub virtual_ops: Vec<Operation>,
    pub strata: Option<Vec<Stratum>>,
}

struct PendingTxn {
    ts: Timestamp,
    event_id: u64,
    group: GroupId,
    ops: Vec<Operation>,
}

/// Graph under construction; accepts transactions until the punctuation.
pub struct TpgBuilder {
    key_space: u64,
    txns: Mutex<Vec<PendingTxn>>,
    seen_ts: Mutex<HashSet<Timestamp>>,
    lists: Vec<Mutex<Vec<ListEntry>>>,
    virtual_ops: Mutex<Vec<Operation>>,
}

/// Returns the transaction's operations. Virtual operations are created at
/// insert time, not here.
pub fn decompose(txn: &StateTransaction) -> Result<Vec<Operation>, PlanError> {
    if txn.ops.is_empty() {
        return Err(PlanError::EmptyTransaction(txn.ts));
    }
    Ok(txn.ops.clone())
}

/// Keys that receive a virtual entry for `op`.
fn virtual_keys(op: &Operation, key_space: u64) -> Vec<Key> {
    let all = || (0..key_space).map(Key).collect::<Vec<_>>();
    let mut keys = match &op.keys {
        KeySpec::Deterministic(_) => Vec::new(),
        KeySpec::MultiKey { reads, .. } => reads.clone(),
        KeySpec::NonDeterministic { candidates, .. } => candidates.clone().unwrap_or_else(all),
        KeySpec::WindowRange { keys, .. } => match keys {
            WindowKeys::Explicit(ks) => ks.clone(),
            WindowKeys::Selector { candidates, .. } => candidates.clone().unwrap_or_else(all),
        },
    };
    if let Some(real) = op.real_key() {
        keys.retain(|k| *k != real);
    }
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Builds the virtual operations of `op`: one per key it reads besides its
/// target, or one per candidate key when the accessed keys are chosen at
/// execution time.
pub fn insert_virtual_ops(op: &Operation, key_space: u64) -> Vec<Operation> {
    virtual_keys(op, key_space)
        .into_iter()
        .map(|k| Operation {
            id: op.id,
            kind: OpKind::Read,
            keys: KeySpec::Deterministic(k),
            value_fn: None,
            cond_fn: None,
            params: Vec::new(),
            is_virtual: true,
            owner: Some(op.id),
        })
        .collect()
}

fn insert_sorted(list: &mut Vec<ListEntry>, e: ListEntry) {
    let idx = list.partition_point(|x| (x.id, x.is_virtual) < (e.id, e.is_virtual));
    list.insert(idx, e);
}

impl TpgBuilder {
    pub fn new(key_space: u64) -> Self {
        Self {
            key_space,
            txns: Mutex::new(Vec::new()),
            seen_ts: Mutex::new(HashSet::new()),
            lists: (0..key_space).map(|_| Mutex::new(Vec::new())).collect(),
            virtual_ops: Mutex::new(Vec::new()),
        }
    }

    pub fn key_space(&self) -> u64 {
        self.key_space
    }

    pub fn len(&self) -> usize {
        self.txns.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_key(&self, id: OpId, k: Key) -> Result<(), PlanError> {
        if k.0 >= self.key_space {
            return Err(PlanError::KeyOutOfRange(id, k));
        }
        Ok(())
    }

    /// Phase 1: registers the transaction's operations and list entries.
    pub fn phase1_insert(&self, txn: StateTransaction) -> Result<(), PlanError> {
        let ops = decompose(&txn)?;
        txn.validate()?;
        for op in &ops {
            for k in op.real_key().into_iter().chain(match &op.keys {
                KeySpec::MultiKey { reads, .. } => reads.clone(),
                KeySpec::WindowRange {
                    keys: WindowKeys::Explicit(ks),
                    ..
                } => ks.clone(),
                KeySpec::NonDeterministic {
                    candidates: Some(c), ..
                }
                | KeySpec::WindowRange {
                    keys: WindowKeys::Selector {
                        candidates: Some(c), ..
                    },
                    ..
                } => c.clone(),
                _ => Vec::new(),
            }) {
                self.check_key(op.id, k)?;
            }
        }
        if !self.seen_ts.lock().insert(txn.ts) {
            return Err(PlanError::DuplicateTimestamp(txn.ts));
        }
        for op in &ops {
            if let Some(k) = op.real_key() {
                insert_sorted(
                    &mut self.lists[k.index()].lock(),
                    ListEntry {
                        id: op.id,
                        is_virtual: false,
                        may_write: op.kind == OpKind::Write,
                    },
                );
            }
            let nd_write = op.kind == OpKind::Write && matches!(op.keys, KeySpec::NonDeterministic { .. });
            let vops = insert_virtual_ops(op, self.key_space);
            for v in &vops {
                let KeySpec::Deterministic(k) = v.keys else { unreachable!() };
                insert_sorted(
                    &mut self.lists[k.index()].lock(),
                    ListEntry {
                        id: op.id,
                        is_virtual: true,
                        may_write: nd_write,
                    },
                );
            }
            if !vops.is_empty() {
                self.virtual_ops.lock().extend(vops);
            }
        }
        self.txns.lock().push(PendingTxn {
            ts: txn.ts,
            event_id: txn.event_id,
            group: txn.group,
            ops,
        });
        Ok(())
    }

    /// Phase 2: derives TD and PD edges from the sorted lists and freezes the graph.
    pub fn phase2_refine(self) -> Tpg {
        let key_space = self.key_space;
        let mut pending = self.txns.into_inner();
        pending.sort_by_key(|t| t.ts);

        let mut vertices = Vec::new();
        let mut txns = Vec::with_capacity(pending.len());
        for (ti, t) in pending.into_iter().enumerate() {
            let first = vertices.len();
            let len = t.ops.len();
            for op in t.ops {
                let virtual_children = virtual_keys(&op, key_space);
                vertices.push(Vertex {
                    op,
                    txn: ti,
                    group: t.group,
                    out_edges: Vec::new(),
                    in_edges: Vec::new(),
                    unresolved_parents: 0,
                    virtual_children,
                });
            }
            txns.push(TxnInfo {
                ts: t.ts,
                event_id: t.event_id,
                group: t.group,
                first,
                len,
            });
        }
        let vid_of = |id: OpId| -> Vid {
            vertices
                .binary_search_by(|v| v.op.id.cmp(&id))
                .expect("list entries refer to inserted operations")
        };

        let raw_lists: Vec<Vec<ListEntry>> = self.lists.into_iter().map(|m| m.into_inner()).collect();
        let per_list: Vec<(Vec<Vid>, Vec<(Vid, Vid, DepClass)>)> = raw_lists
            .par_iter()
            .map(|entries| {
                let owners: Vec<Vid> = entries.iter().map(|e| vid_of(e.id)).collect();
                let edges = adjacent_edges(entries)
                    .into_iter()
                    .map(|(a, b, c)| (owners[a], owners[b], c))
                    .collect();
                (owners, edges)
            })
            .collect();

        let mut edges: Vec<(Vid, Vid, DepClass)> = Vec::new();
        let mut lists = Vec::with_capacity(raw_lists.len());
        for (k, (entries, (owners, es))) in raw_lists.into_iter().zip(per_list).enumerate() {
            edges.extend(es);
            lists.push(SortedList {
                key: Key(k as u64),
                entries,
                owners,
            });
        }
        let edges = dedup_edges(edges);

        for t in &txns {
            for v in t.first..t.first + t.len - 1 {
                vertices[v].out_edges.push((v + 1, DepClass::LD));
                vertices[v + 1].in_edges.push((v, DepClass::LD));
            }
        }
        for (s, d, c) in edges {
            vertices[s].out_edges.push((d, c));
            vertices[d].in_edges.push((s, c));
            vertices[d].unresolved_parents += 1;
        }

        let mut virtual_ops = self.virtual_ops.into_inner();
        virtual_ops.sort_by_key(|o| (o.id, o.keys.clone().into_key()));

        Tpg {
            key_space,
            vertices,
            lists,
            txns,
            virtual_ops,
            strata: None,
        }
    }
}

trait IntoKey {
    fn into_key(self) -> Option<Key>;
}

impl IntoKey for KeySpec {
    fn into_key(self) -> Option<Key> {
        match self {
            KeySpec::Deterministic(k) => Some(k),
            _ => None,
        }
    }
}

/// Adjacent-pair rule over one sorted list, returned as entry indices. All
/// possible writers sharing the nearest earlier timestamp are predecessors,
/// since a transaction may hold a real and a non-deterministic writer of the
/// same key.
fn adjacent_edges(entries: &[ListEntry]) -> Vec<(usize, usize, DepClass)> {
    let mut out = Vec::new();
    let mut last_writers: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < entries.len() {
        let ts = entries[i].id.ts;
        let mut j = i;
        let mut group_writers = Vec::new();
        while j < entries.len() && entries[j].id.ts == ts {
            let class = if entries[j].is_virtual { DepClass::PD } else { DepClass::TD };
            out.extend(last_writers.iter().map(|&p| (p, j, class)));
            if entries[j].may_write {
                group_writers.push(j);
            }
            j += 1;
        }
        if !group_writers.is_empty() {
            last_writers = group_writers;
        }
        i = j;
    }
    out
}

/// Collapses parallel edges; a pair linked by both classes keeps TD.
pub fn dedup_edges(mut edges: Vec<(Vid, Vid, DepClass)>) -> Vec<(Vid, Vid, DepClass)> {
    edges.sort_unstable();
    edges.dedup_by(|b, a| a.0 == b.0 && a.1 == b.1);
    edges
}

impl Tpg {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vid(&self, id: OpId) -> Option<Vid> {
        self.vertices.binary_search_by(|v| v.op.id.cmp(&id)).ok()
    }

    /// All edges as `(src, dst, class)`, sorted.
    pub fn edges(&self) -> Vec<(Vid, Vid, DepClass)> {
        let mut out: Vec<_> = self
            .vertices
            .iter()
            .enumerate()
            .flat_map(|(s, v)| v.out_edges.iter().map(move |&(d, c)| (s, d, c)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn edge_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for v in &self.vertices {
            for (_, class) in &v.out_edges {
                match class {
                    DepClass::LD => c.0 += 1,
                    DepClass::TD => c.1 += 1,
                    DepClass::PD => c.2 += 1,
                }
            }
        }
        c
    }

    /// Checks that TD/PD edges strictly increase in timestamp, which makes
    /// vertex order a topological order.
    pub fn is_acyclic(&self) -> bool {
        self.vertices.iter().enumerate().all(|(s, v)| {
            v.out_edges
                .iter()
                .filter(|(_, c)| c.gates_execution())
                .all(|&(d, _)| d > s && self.vertices[d].op.ts() > v.op.ts())
        })
    }

    /// In-edges of `vid` derived directly from the sorted lists it appears in.
    fn in_edges_from_lists(&self, vid: Vid) -> Vec<(Vid, Vid, DepClass)> {
        let v = &self.vertices[vid];
        let mut out = Vec::new();
        for k in v.list_keys() {
            let list = &self.lists[k.index()];
            let pos = list.entries.partition_point(|e| e.id.ts < v.op.ts());
            if let Some(p) = (0..pos).rev().find(|&i| list.entries[i].may_write) {
                let is_virtual = v.op.real_key() != Some(k);
                let class = if is_virtual { DepClass::PD } else { DepClass::TD };
                out.push((list.owners[p], vid, class));
            }
        }
        dedup_edges(out)
    }

    /// Dependencies of a window operation: the latest preceding writer on its
    /// target list (TD) and on each windowed key's list (PD). Two successive
    /// entries of a list always have overlapping window ranges, so the
    /// adjacent writer is the only edge needed per key.
    pub fn track_window(&self, vid: Vid) -> Vec<(Vid, Vid, DepClass)> {
        debug_assert!(self.vertices[vid].op.is_window());
        self.in_edges_from_lists(vid)
    }

    /// Dependencies of a non-deterministic operation: a PD from the latest
    /// preceding writer in every candidate key's list.
    pub fn track_nondet(&self, vid: Vid) -> Vec<(Vid, Vid, DepClass)> {
        debug_assert!(self.vertices[vid].op.is_nondeterministic());
        self.in_edges_from_lists(vid)
    }

    /// Longest-path ranks over TD/PD edges.
    pub fn stratify(&mut self) -> &[Stratum] {
        let ranks = self.ranks();
        let depth = ranks.iter().copied().max().map_or(0, |m| m + 1);
        let mut strata: Vec<Stratum> = (0..depth)
            .map(|rank| Stratum {
                rank,
                members: Vec::new(),
            })
            .collect();
        for (v, &r) in ranks.iter().enumerate() {
            strata[r].members.push(v);
        }
        self.strata = Some(strata);
        self.strata.as_deref().unwrap()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0usize; self.vertices.len()];
        for v in 0..self.vertices.len() {
            for p in self.vertices[v].parents() {
                rank[v] = rank[v].max(rank[p] + 1);
            }
        }
        rank
    }

    /// Line-oriented dump: `VERTEX op_id ts stmt kind key` and `EDGE src dst class`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            let kind = match v.op.kind {
                OpKind::Read => "R",
                OpKind::Write => "W",
            };
            let key = v.op.real_key().map_or_else(|| "*".to_string(), |k| k.0.to_string());
            let _ = writeln!(out, "VERTEX {i} {} {} {kind} {key}", v.op.id.ts.0, v.op.id.stmt);
        }
        for (s, d, c) in self.edges() {
            let _ = writeln!(out, "EDGE {s} {d} {}", c.as_str());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedVertex {
    pub id: Vid,
    pub ts: u64,
    pub stmt: u32,
    pub write: bool,
    pub key: Option<u64>,
}

/// Parses the output of [`Tpg::export`].
pub fn parse_export(text: &str) -> Result<(Vec<ExportedVertex>, Vec<(Vid, Vid, DepClass)>), String> {
    let mut vs = Vec::new();
    let mut es = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || format!("line {}: malformed {line:?}", n + 1);
        match f.as_slice() {
            ["VERTEX", id, ts, stmt, kind, key] => vs.push(ExportedVertex {
                id: id.parse().map_err(|_| bad())?,
                ts: ts.parse().map_err(|_| bad())?,
                stmt: stmt.parse().map_err(|_| bad())?,
                write: *kind == "W",
                key: if *key == "*" { None } else { Some(key.parse().map_err(|_| bad())?) },
            }),
            ["EDGE", s, d, c] => es.push((
                s.parse().map_err(|_| bad())?,
                d.parse().map_err(|_| bad())?,
                DepClass::parse(c).ok_or_else(bad)?,
            )),
            [] => {}
            _ => return Err(bad()),
        }
    }
    Ok((vs, es))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::types::{FunctionKind, FunctionRef};

    pub const F: FunctionRef = FunctionRef {
        id: 0,
        arity: 1,
        kind: FunctionKind::Value,
    };

    pub fn write(ts: u64, stmt: u32, keys: KeySpec) -> Operation {
        Operation {
            id: OpId::new(ts, stmt),
            kind: OpKind::Write,
            keys,
            value_fn: Some(F),
            cond_fn: None,
            params: vec![],
            is_virtual: false,
            owner: None,
        }
    }

    pub fn txn(ts: u64, ops: Vec<Operation>) -> StateTransaction {
        StateTransaction {
            ts: Timestamp(ts),
            event_id: ts,
            group: 0,
            ops,
        }
    }

    /// Deposit on A, then two transfers A->B and B->A.
    pub fn ledger_batch() -> Vec<StateTransaction> {
        let a = Key(0);
        let b = Key(1);
        vec![
            txn(1, vec![write(1, 0, KeySpec::Deterministic(a))]),
            txn(
                2,
                vec![
                    write(2, 0, KeySpec::Deterministic(a)),
                    write(2, 1, KeySpec::MultiKey { target: b, reads: vec![a] }),
                ],
            ),
            txn(
                3,
                vec![
                    write(3, 0, KeySpec::Deterministic(b)),
                    write(3, 1, KeySpec::MultiKey { target: a, reads: vec![b] }),
                ],
            ),
        ]
    }

    pub fn build(key_space: u64, txns: Vec<StateTransaction>) -> Tpg {
        let b = TpgBuilder::new(key_space);
        for t in txns {
            b.phase1_insert(t).unwrap();
        }
        b.phase2_refine()
    }
}
