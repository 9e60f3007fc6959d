use std::collections::BTreeMap;
use std::fmt::{self, Debug};

use tsp_core::Value;

use crate::oracle::OracleResult;

/// Divergences listed in a report; the total is always counted.
pub const MAX_LISTED: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub divergences: Vec<String>,
    pub total: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.total == 0
    }

    fn push(&mut self, msg: String) {
        self.total += 1;
        if self.divergences.len() < MAX_LISTED {
            self.divergences.push(msg);
        }
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "verify: pass");
        }
        writeln!(f, "verify: {} divergences", self.total)?;
        for d in &self.divergences {
            writeln!(f, "  {d}")?;
        }
        Ok(())
    }
}

/// What the engine produced for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineResult<O> {
    pub state: Vec<Value>,
    pub committed: BTreeMap<u64, bool>,
    pub outputs: BTreeMap<u64, O>,
}

fn diff_maps<V: PartialEq + Debug>(what: &str, got: &BTreeMap<u64, V>, want: &BTreeMap<u64, V>, r: &mut VerifyReport) {
    let mut ids: Vec<&u64> = got.keys().chain(want.keys()).collect();
    ids.sort();
    ids.dedup();
    for id in ids {
        match (got.get(id), want.get(id)) {
            (Some(g), Some(w)) if g == w => {}
            (g, w) => r.push(format!("{what} of event {id}: engine {g:?}, oracle {w:?}")),
        }
    }
}

/// Compares final state, committed set and outputs (which carry the failure
/// markers).
pub fn verify<O: PartialEq + Debug>(engine: &EngineResult<O>, oracle: &OracleResult<O>) -> VerifyReport {
    let mut r = VerifyReport::default();
    if engine.state.len() != oracle.state.len() {
        r.push(format!("state size: engine {}, oracle {}", engine.state.len(), oracle.state.len()));
    }
    for (k, (g, w)) in engine.state.iter().zip(&oracle.state).enumerate() {
        if g != w {
            r.push(format!("key {k}: engine {g}, oracle {w}"));
        }
    }
    diff_maps("commit", &engine.committed, &oracle.committed, &mut r);
    diff_maps("output", &engine.outputs, &oracle.outputs, &mut r);
    r
}
