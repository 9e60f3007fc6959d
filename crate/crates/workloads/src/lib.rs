//! Benchmark workloads: Streaming Ledger, GrepSum (plain, windowed and
//! non-deterministic) and Toll Processing, plus multi-phase dynamic streams.

pub mod dynamic;
pub mod generate;
pub mod io;
pub mod operator;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use tsp_core::{Key, Value};

pub use dynamic::{gen_dynamic, parse_script, DynamicScript, PhaseSpec};
pub use generate::{gen, gen_gs, gen_sl, gen_tp, shuffle_arrival, shuffle_within_batches, zipf_key, GsVariant, KeySampler};
pub use operator::{Outcome, WorkloadOp};

pub type Event = tsp_core::runtime::Event<Payload>;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("knob {name} = {value} outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("key space of {have} keys cannot hold {need} distinct keys per event")]
    KeySpace { need: u64, have: u64 },
    #[error("unknown workload {0}")]
    UnknownWorkload(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] tsp_core::CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkloadKind {
    Sl,
    Gs,
    GsWindow,
    GsNondet,
    Tp,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 5] = [
        WorkloadKind::Sl,
        WorkloadKind::Gs,
        WorkloadKind::GsWindow,
        WorkloadKind::GsNondet,
        WorkloadKind::Tp,
    ];
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkloadKind::Sl => "sl",
            WorkloadKind::Gs => "gs",
            WorkloadKind::GsWindow => "gs-window",
            WorkloadKind::GsNondet => "gs-nondet",
            WorkloadKind::Tp => "tp",
        })
    }
}

impl FromStr for WorkloadKind {
    type Err = WorkloadError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "sl" => WorkloadKind::Sl,
            "gs" => WorkloadKind::Gs,
            "gs-window" => WorkloadKind::GsWindow,
            "gs-nondet" => WorkloadKind::GsNondet,
            "tp" => WorkloadKind::Tp,
            _ => return Err(WorkloadError::UnknownWorkload(s.to_string())),
        })
    }
}

/// Tunable workload characteristics.
///
/// For SL the transaction length and per-operation access count follow from
/// the event type (deposit 2 ops of 1 key, transfer 4 ops of up to 2 keys),
/// so `txn_len` and `multi_access` are ignored. For TP, `theta` and
/// `abort_ratio` describe the contended group; the other group is uniform
/// and never aborts.
#[derive(Debug, Clone, PartialEq)]
pub struct Knobs {
    pub theta: f64,
    pub abort_ratio: f64,
    pub txn_len: usize,
    pub udf_cost_us: u64,
    pub multi_access: usize,
    pub interval: usize,
    /// Accounts for SL, keys otherwise.
    pub key_space: u64,
    pub seed: u64,
    pub events: usize,
    /// SL: share of transfers among non-aborting events.
    pub transfer_ratio: f64,
    /// GS-nondet: share of events whose keys come from a selector.
    pub nondet_ratio: f64,
    /// GS-window: window range in timestamps, reader period in events and
    /// keys per reader.
    pub window_size: u64,
    pub trigger_period: usize,
    pub window_keys: usize,
}

impl Knobs {
    pub fn defaults(kind: WorkloadKind) -> Self {
        let base = Knobs {
            theta: 0.2,
            abort_ratio: 0.01,
            txn_len: 1,
            udf_cost_us: 10,
            multi_access: 2,
            interval: 10240,
            key_space: 10240,
            seed: 1,
            events: 10240,
            transfer_ratio: 0.5,
            nondet_ratio: 0.2,
            window_size: 1000,
            trigger_period: 100,
            window_keys: 100,
        };
        match kind {
            WorkloadKind::Sl => Knobs {
                txn_len: 4,
                ..base
            },
            WorkloadKind::Gs | WorkloadKind::GsNondet => base,
            WorkloadKind::GsWindow => Knobs {
                abort_ratio: 0.0,
                interval: 102_400,
                events: 102_400,
                ..base
            },
            WorkloadKind::Tp => Knobs {
                theta: 0.6,
                abort_ratio: 0.3,
                txn_len: 2,
                multi_access: 1,
                interval: 40960,
                events: 40960,
                ..base
            },
        }
    }

    pub fn validate(&self, kind: WorkloadKind) -> Result<(), WorkloadError> {
        range("theta", self.theta, 0.0, 1.0)?;
        range("abort_ratio", self.abort_ratio, 0.0, 0.9)?;
        range("txn_len", self.txn_len as f64, 1.0, 10.0)?;
        range("udf_cost_us", self.udf_cost_us as f64, 0.0, 100.0)?;
        range("multi_access", self.multi_access as f64, 1.0, 10.0)?;
        range("interval", self.interval as f64, 1.0, f64::MAX)?;
        range("transfer_ratio", self.transfer_ratio, 0.0, 1.0)?;
        range("nondet_ratio", self.nondet_ratio, 0.0, 1.0)?;
        range("window_size", self.window_size as f64, 1.0, f64::MAX)?;
        range("trigger_period", self.trigger_period as f64, 1.0, f64::MAX)?;
        let need = match kind {
            WorkloadKind::Sl => 2,
            WorkloadKind::Tp => 2 * self.txn_len as u64 * self.multi_access as u64,
            WorkloadKind::GsWindow => (self.txn_len * self.multi_access).max(self.window_keys) as u64,
            // Candidates exceed the accessed keys by two.
            WorkloadKind::GsNondet => (self.txn_len * self.multi_access + 2) as u64,
            WorkloadKind::Gs => (self.txn_len * self.multi_access) as u64,
        };
        if self.key_space < need {
            return Err(WorkloadError::KeySpace {
                need,
                have: self.key_space,
            });
        }
        Ok(())
    }

    /// Echo for file headers and reports.
    pub fn describe(&self) -> String {
        format!(
            "seed={} theta={} abort={} len={} cost={} multi={} interval={} keys={} events={} transfer_ratio={} nondet_ratio={} window={} trigger={} window_keys={}",
            self.seed,
            self.theta,
            self.abort_ratio,
            self.txn_len,
            self.udf_cost_us,
            self.multi_access,
            self.interval,
            self.key_space,
            self.events,
            self.transfer_ratio,
            self.nondet_ratio,
            self.window_size,
            self.trigger_period,
            self.window_keys
        )
    }
}

fn range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), WorkloadError> {
    if value.is_nan() || value < lo || value > hi {
        return Err(WorkloadError::OutOfRange { name, value, lo, hi });
    }
    Ok(())
}

/// Event payloads of all workloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Deposit { account: Key, amount: Value },
    Transfer { from: Key, to: Key, amount: Value },
    /// One write per inner list: the first key is the target, the rest are
    /// read. `abort` forces the condition to fail.
    Grep { ops: Vec<Vec<Key>>, abort: bool },
    /// Sums every version of `keys` in the `range` timestamps before the event.
    WindowSum { keys: Vec<Key>, range: u64 },
    /// Writes `width` keys chosen among `candidates` at execution time.
    NondetGrep {
        candidates: Vec<Key>,
        pick: Value,
        width: usize,
        abort: bool,
    },
}

/// Initial value of every SL account and asset.
pub const SL_INITIAL_BALANCE: Value = 1_000_000_000;

/// Amount of an injected failing transfer; no balance can cover it.
pub const SL_FAILING_AMOUNT: Value = 1 << 60;

/// GrepSum values stay below this modulus.
pub const GS_MODULUS: Value = 1 << 31;

/// Size of the state table and its initial contents.
pub fn initial_state(kind: WorkloadKind, knobs: &Knobs) -> Vec<Value> {
    match kind {
        WorkloadKind::Sl => vec![SL_INITIAL_BALANCE; 2 * knobs.key_space as usize],
        _ => (0..knobs.key_space as i64).map(|k| k % 1000).collect(),
    }
}
