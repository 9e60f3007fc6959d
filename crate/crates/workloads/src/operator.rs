use std::fmt;

use tsp_core::runtime::{BlotterStatus, EventBlotter, Operator, RuntimeError, TxnBuilder, FAILED_STATE_ACCESS};
use tsp_core::udf::{UdfBody, UdfRegistry};
use tsp_core::{FunctionRef, Key, Value, WindowKeys};

use crate::{Event, Payload, WorkloadError, WorkloadKind, GS_MODULUS};

/// Output of one post-processed event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// Result of each state access in request order.
    Committed(Vec<Option<Value>>),
    Failed,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Failed => f.write_str(FAILED_STATE_ACCESS),
            Outcome::Committed(vs) => {
                let parts: Vec<String> = vs
                    .iter()
                    .map(|v| v.map_or_else(|| "-".to_string(), |x| x.to_string()))
                    .collect();
                write!(f, "{}", parts.join(" "))
            }
        }
    }
}

const DEPOSIT: u8 = 0;
const TRANSFER: u8 = 1;
const GREP: u8 = 2;
const WINDOW: u8 = 3;
const NONDET: u8 = 4;

/// The transactional operator of every workload.
pub struct WorkloadOp {
    pub kind: WorkloadKind,
    /// SL only: assets of account `k` live at `accounts + k`.
    accounts: u64,
    add: FunctionRef,
    sub: FunctionRef,
    covers: FunctionRef,
    sum: FunctionRef,
    not_flagged: FunctionRef,
    window_sum: FunctionRef,
    select: FunctionRef,
}

impl WorkloadOp {
    /// Registers the workload's functions; value and window functions cost
    /// `udf_cost_us` per evaluation.
    pub fn new(kind: WorkloadKind, key_space: u64, udf_cost_us: u64) -> Result<(Self, UdfRegistry), WorkloadError> {
        let mut reg = UdfRegistry::new();
        let c = udf_cost_us;
        let add = reg.register("add", 1, c, UdfBody::value(|r, p| r[0] + p[0]))?;
        let sub = reg.register("sub", 1, c, UdfBody::value(|r, p| r[0] - p[0]))?;
        // Reads end with the sender's balance.
        let covers = reg.register("covers", 1, 0, UdfBody::condition(|r, p| r[r.len() - 1] >= p[0]))?;
        let sum = reg.register(
            "sum",
            2,
            c,
            UdfBody::value(|r, _| r.iter().fold(0, |a, x| (a + x).rem_euclid(GS_MODULUS))),
        )?;
        let not_flagged = reg.register("not_flagged", 0, 0, UdfBody::condition(|_, p| p[0] == 0))?;
        let window_sum = reg.register("window_sum", 1, c, UdfBody::window(|v, _| v.iter().sum()))?;
        // params: [flag, pick, width, candidates..]
        let select = reg.register(
            "select",
            0,
            0,
            UdfBody::selector(|p, _| {
                let width = p[2] as usize;
                let cands = &p[3..];
                (0..width)
                    .map(|i| Key(cands[(p[1] as usize + i) % cands.len()] as u64))
                    .collect()
            }),
        )?;
        let op = WorkloadOp {
            kind,
            accounts: key_space,
            add,
            sub,
            covers,
            sum,
            not_flagged,
            window_sum,
            select,
        };
        Ok((op, reg))
    }

    fn asset(&self, k: Key) -> Key {
        Key(self.accounts + k.0)
    }
}

impl Operator for WorkloadOp {
    type Payload = Payload;
    type Output = Outcome;

    fn pre_process(&self, e: &Event) -> EventBlotter {
        match &e.payload {
            Payload::Deposit { account, amount } => EventBlotter::new(e.event_id, DEPOSIT, vec![*account], vec![*amount]),
            Payload::Transfer { from, to, amount } => {
                EventBlotter::new(e.event_id, TRANSFER, vec![*from, *to], vec![*amount])
            }
            Payload::Grep { ops, abort } => {
                // Keys flattened; params hold the flag then the op widths.
                let mut params = vec![Value::from(*abort)];
                params.extend(ops.iter().map(|o| o.len() as Value));
                EventBlotter::new(e.event_id, GREP, ops.concat(), params)
            }
            Payload::WindowSum { keys, range } => EventBlotter::new(e.event_id, WINDOW, keys.clone(), vec![*range as Value]),
            Payload::NondetGrep {
                candidates,
                pick,
                width,
                abort,
            } => {
                let mut params = vec![Value::from(*abort), *pick, *width as Value];
                params.extend(candidates.iter().map(|k| k.0 as Value));
                EventBlotter::new(e.event_id, NONDET, candidates.clone(), params)
            }
        }
    }

    fn state_access(&self, eb: &EventBlotter, txn: &mut TxnBuilder) -> Result<(), RuntimeError> {
        let p = &eb.params;
        match eb.kind {
            DEPOSIT => {
                let a = eb.keys[0];
                txn.request_write(a, &[], self.add, None, p)?;
                txn.request_write(self.asset(a), &[], self.add, None, p)?;
            }
            TRANSFER => {
                let (from, to) = (eb.keys[0], eb.keys[1]);
                for (s, r) in [(from, to), (self.asset(from), self.asset(to))] {
                    txn.request_write(s, &[], self.sub, Some(self.covers), p)?;
                    txn.request_write(r, &[s], self.add, Some(self.covers), p)?;
                }
            }
            GREP => {
                // Only the last write checks the flag, so a flagged
                // transaction has partial work to undo.
                let mut at = 0;
                for (i, w) in p[1..].iter().enumerate() {
                    let ks = &eb.keys[at..at + *w as usize];
                    let flag = if i + 2 == p.len() { p[0] } else { 0 };
                    txn.request_write(ks[0], &ks[1..], self.sum, Some(self.not_flagged), &[flag])?;
                    at += *w as usize;
                }
            }
            WINDOW => {
                txn.request_window_read(WindowKeys::Explicit(eb.keys.clone()), p[0] as u64, self.window_sum, &[])?;
            }
            NONDET => {
                txn.request_nondet_write(
                    self.select,
                    Some(eb.keys.clone()),
                    self.sum,
                    Some(self.not_flagged),
                    p,
                )?;
            }
            _ => unreachable!("blotter kinds come from pre_process"),
        }
        Ok(())
    }

    fn post_process(&self, _e: &Event, eb: &EventBlotter) -> Option<Outcome> {
        match eb.status {
            BlotterStatus::Committed => Some(Outcome::Committed(eb.results.clone())),
            BlotterStatus::Failed => Some(Outcome::Failed),
            BlotterStatus::NoOp | BlotterStatus::Pending => None,
        }
    }
}
