//! Multi-phase streams whose knobs ramp linearly within each phase.
//!
//! Scripts are `key = value` lines. Lines before the first `phase` set the
//! workload and base knobs; `phase = <events>` opens a phase, and the lines
//! after it set knobs for that phase, either constant (`theta = 0.4`) or
//! ramped (`theta = 0.0 -> 0.8`). Knobs a phase leaves alone keep the value
//! the previous phase ended with.

use crate::generate::Generator;
use crate::{Event, Knobs, WorkloadError, WorkloadKind};

/// Knobs that may change from event to event.
const RAMPABLE: [&str; 4] = ["theta", "abort", "transfer_ratio", "nondet_ratio"];

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub length: usize,
    /// Knob name, start value, end value.
    pub trend: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicScript {
    pub kind: WorkloadKind,
    pub base: Knobs,
    pub phases: Vec<PhaseSpec>,
}

fn knob_mut<'k>(k: &'k mut Knobs, name: &str) -> Option<&'k mut f64> {
    match name {
        "theta" => Some(&mut k.theta),
        "abort" => Some(&mut k.abort_ratio),
        "transfer_ratio" => Some(&mut k.transfer_ratio),
        "nondet_ratio" => Some(&mut k.nondet_ratio),
        _ => None,
    }
}

/// Sets an integer or float knob from text.
pub fn set_knob(k: &mut Knobs, name: &str, value: &str) -> Result<(), String> {
    let int = || value.parse::<u64>().map_err(|e| format!("{name}: {e}"));
    if let Some(slot) = knob_mut(k, name) {
        *slot = value.parse().map_err(|e| format!("{name}: {e}"))?;
        return Ok(());
    }
    match name {
        "len" => k.txn_len = int()? as usize,
        "cost" => k.udf_cost_us = int()?,
        "multi" => k.multi_access = int()? as usize,
        "interval" => k.interval = int()? as usize,
        "keys" => k.key_space = int()?,
        "seed" => k.seed = int()?,
        "events" => k.events = int()? as usize,
        "window" => k.window_size = int()?,
        "trigger" => k.trigger_period = int()? as usize,
        "window_keys" => k.window_keys = int()? as usize,
        _ => return Err(format!("unknown knob {name}")),
    }
    Ok(())
}

pub fn parse_script(text: &str) -> Result<DynamicScript, WorkloadError> {
    let mut kind = None;
    let mut base_lines = Vec::new();
    let mut phases: Vec<PhaseSpec> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| WorkloadError::Parse { line: i + 1, msg };
        let (key, value) = line
            .split_once('=')
            .map(|(a, b)| (a.trim(), b.trim()))
            .ok_or_else(|| err("expected key = value".into()))?;
        match key {
            "workload" => kind = Some(value.parse::<WorkloadKind>()?),
            "phase" => phases.push(PhaseSpec {
                length: value.parse().map_err(|e| err(format!("phase length: {e}")))?,
                trend: Vec::new(),
            }),
            _ if phases.is_empty() => base_lines.push((i + 1, key.to_string(), value.to_string())),
            _ => {
                if !RAMPABLE.contains(&key) {
                    return Err(err(format!("{key} cannot change within a run")));
                }
                let (a, b) = match value.split_once("->") {
                    Some((a, b)) => (a.trim(), b.trim()),
                    None => (value, value),
                };
                let parse = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
                let (a, b) = (parse(a)?, parse(b)?);
                phases.last_mut().expect("phase opened").trend.push((key.to_string(), a, b));
            }
        }
    }
    let kind = kind.ok_or(WorkloadError::Parse {
        line: 0,
        msg: "missing workload".into(),
    })?;
    let mut base = Knobs::defaults(kind);
    for (line, k, v) in base_lines {
        set_knob(&mut base, &k, &v).map_err(|msg| WorkloadError::Parse { line, msg })?;
    }
    base.events = phases.iter().map(|p| p.length).sum();
    Ok(DynamicScript { kind, base, phases })
}

/// Concatenates the phases, interpolating ramped knobs per event.
pub fn gen_dynamic(kind: WorkloadKind, base: &Knobs, phases: &[PhaseSpec]) -> Result<Vec<Event>, WorkloadError> {
    if phases.is_empty() {
        return Err(WorkloadError::Parse {
            line: 0,
            msg: "no phases".into(),
        });
    }
    base.validate(kind)?;
    let mut g = Generator::new(kind, base.seed);
    let mut current = base.clone();
    let mut out = Vec::with_capacity(phases.iter().map(|p| p.length).sum());
    for p in phases {
        let (mut start, mut end) = (current.clone(), current.clone());
        for (name, a, b) in &p.trend {
            let unknown = || WorkloadError::Parse {
                line: 0,
                msg: format!("unknown knob {name}"),
            };
            *knob_mut(&mut start, name).ok_or_else(unknown)? = *a;
            *knob_mut(&mut end, name).ok_or_else(unknown)? = *b;
        }
        start.validate(kind)?;
        end.validate(kind)?;
        let mut k = start.clone();
        for i in 0..p.length {
            let f = if p.length > 1 { i as f64 / (p.length - 1) as f64 } else { 1.0 };
            for (name, a, b) in &p.trend {
                *knob_mut(&mut k, name).expect("checked above") = a + (b - a) * f;
            }
            out.push(g.next_event(&k));
        }
        current = end;
    }
    Ok(out)
}
