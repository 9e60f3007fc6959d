//! Strategy selection and scheduling units.
//!
//! The decision model maps measured graph properties to one point of the
//! exploration x granularity x abort-handling space. Units are what worker
//! threads claim: one vertex each under fine granularity, one per-key chain
//! under coarse granularity, with chains that depend on each other in a
//! cycle merged into one unit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::planner::{Tpg, Vid};
use crate::types::GroupId;
use crate::udf::UdfRegistry;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedError {
    #[error("thread count must be at least 1")]
    NoThreads,
    #[error("bad strategy {0:?}")]
    BadStrategy(String),
    #[error("thresholds line {line}: {msg}")]
    BadThresholds { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Bfs,
    Dfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exploration {
    Structured(Variant),
    NonStructured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortMode {
    Eager,
    Lazy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchedulingDecision {
    pub explore: Exploration,
    pub granularity: Granularity,
    pub abort: AbortMode,
}

impl SchedulingDecision {
    pub const fn new(explore: Exploration, granularity: Granularity, abort: AbortMode) -> Self {
        Self {
            explore,
            granularity,
            abort,
        }
    }

    /// All eight combinations, structured exploration with `variant`.
    pub fn all(variant: Variant) -> Vec<SchedulingDecision> {
        let mut out = Vec::with_capacity(8);
        for e in [Exploration::Structured(variant), Exploration::NonStructured] {
            for g in [Granularity::Fine, Granularity::Coarse] {
                for a in [AbortMode::Eager, AbortMode::Lazy] {
                    out.push(SchedulingDecision::new(e, g, a));
                }
            }
        }
        out
    }
}

impl fmt::Display for Exploration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exploration::Structured(Variant::Bfs) => write!(f, "S/BFS"),
            Exploration::Structured(Variant::Dfs) => write!(f, "S/DFS"),
            Exploration::NonStructured => write!(f, "NS"),
        }
    }
}

impl fmt::Display for SchedulingDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = match self.granularity {
            Granularity::Fine => "F",
            Granularity::Coarse => "C",
        };
        let a = match self.abort {
            AbortMode::Eager => "E",
            AbortMode::Lazy => "L",
        };
        write!(f, "explore={} gran={g} abort={a}", self.explore)
    }
}

impl SchedulingDecision {
    /// Compact form used in CSV reports: `S-DFS/C/E`.
    pub fn short(&self) -> String {
        let e = match self.explore {
            Exploration::Structured(Variant::Bfs) => "S-BFS",
            Exploration::Structured(Variant::Dfs) => "S-DFS",
            Exploration::NonStructured => "NS",
        };
        let g = if self.granularity == Granularity::Fine { "F" } else { "C" };
        let a = if self.abort == AbortMode::Eager { "E" } else { "L" };
        format!("{e}/{g}/{a}")
    }
}

impl FromStr for SchedulingDecision {
    type Err = SchedError;

    /// Parses `{S|S-BFS|S-DFS|NS}/{F|C}/{E|L}`. Plain `S` means DFS.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SchedError::BadStrategy(s.to_string());
        let parts: Vec<&str> = s.split('/').map(str::trim).collect();
        let [e, g, a] = parts.as_slice() else {
            return Err(bad());
        };
        let explore = match e.to_ascii_uppercase().as_str() {
            "S" | "S-DFS" | "SDFS" => Exploration::Structured(Variant::Dfs),
            "S-BFS" | "SBFS" => Exploration::Structured(Variant::Bfs),
            "NS" => Exploration::NonStructured,
            _ => return Err(bad()),
        };
        let granularity = match g.to_ascii_uppercase().as_str() {
            "F" => Granularity::Fine,
            "C" => Granularity::Coarse,
            _ => return Err(bad()),
        };
        let abort = match a.to_ascii_uppercase().as_str() {
            "E" => AbortMode::Eager,
            "L" => AbortMode::Lazy,
            _ => return Err(bad()),
        };
        Ok(SchedulingDecision::new(explore, granularity, abort))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpgProperties {
    /// Mean evaluation cost of the functions attached to vertices, in µs.
    pub avg_complexity: f64,
    pub degree_skew: f64,
    pub abort_ratio: f64,
    pub n_ld: usize,
    pub n_td: usize,
    pub n_pd: usize,
    pub has_cycles_coarse: bool,
}

impl TpgProperties {
    pub fn n_deps(&self) -> usize {
        self.n_ld + self.n_td + self.n_pd
    }
}

impl fmt::Display for TpgProperties {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(cost={:.1} skew={:.2} abort={:.2} ld={} td={} pd={} cyclic={})",
            self.avg_complexity,
            self.degree_skew,
            self.abort_ratio,
            self.n_ld,
            self.n_td,
            self.n_pd,
            self.has_cycles_coarse
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionThresholds {
    pub dep_count_high: f64,
    pub skew_low: f64,
    pub pd_low: f64,
    pub complexity_low: f64,
    pub abort_high: f64,
    /// Structured exploration flavour; the model itself only picks S or NS.
    pub variant: Variant,
}

impl Default for DecisionThresholds {
    fn default() -> Self {
        Self::parse(DEFAULT_THRESHOLDS).expect("shipped thresholds parse")
    }
}

/// Shipped defaults. Kept in sync with `config/thresholds.conf`.
pub const DEFAULT_THRESHOLDS: &str = include_str!("../../../config/thresholds.conf");

impl DecisionThresholds {
    /// Reads `key = value` lines; `#` starts a comment. Missing keys keep the
    /// built-in fallback values.
    pub fn parse(text: &str) -> Result<Self, SchedError> {
        let mut th = DecisionThresholds {
            dep_count_high: 4096.0,
            skew_low: 8.0,
            pd_low: 1024.0,
            complexity_low: 50.0,
            abort_high: 0.3,
            variant: Variant::Dfs,
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| SchedError::BadThresholds {
                line: n + 1,
                msg: msg.to_string(),
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "variant" {
                th.variant = match v.to_ascii_lowercase().as_str() {
                    "bfs" => Variant::Bfs,
                    "dfs" => Variant::Dfs,
                    _ => return Err(err("variant must be bfs or dfs")),
                };
                continue;
            }
            let x: f64 = v.parse().map_err(|_| err("not a number"))?;
            if !x.is_finite() || x < 0.0 {
                return Err(err("thresholds must be finite and non-negative"));
            }
            match k {
                "dep_count_high" => th.dep_count_high = x,
                "skew_low" => th.skew_low = x,
                "pd_low" => th.pd_low = x,
                "complexity_low" => th.complexity_low = x,
                "abort_high" => th.abort_high = x,
                _ => return Err(err("unknown key")),
            }
        }
        Ok(th)
    }

    pub fn to_text(&self) -> String {
        format!(
            "dep_count_high = {}\nskew_low = {}\npd_low = {}\ncomplexity_low = {}\nabort_high = {}\nvariant = {}\n",
            self.dep_count_high,
            self.skew_low,
            self.pd_low,
            self.complexity_low,
            self.abort_high,
            match self.variant {
                Variant::Bfs => "bfs",
                Variant::Dfs => "dfs",
            }
        )
    }
}

/// Properties of the whole graph.
pub fn measure_properties(tpg: &Tpg, registry: &UdfRegistry, abort_estimate: f64) -> TpgProperties {
    measure_scoped(tpg, registry, abort_estimate, None)
}

/// Properties of the vertices of one group (all vertices for `None`).
pub fn measure_scoped(tpg: &Tpg, registry: &UdfRegistry, abort_estimate: f64, group: Option<GroupId>) -> TpgProperties {
    let in_scope = |v: Vid| group.map_or(true, |g| tpg.vertices[v].group == g);
    let mut n = 0usize;
    let mut cost = 0.0;
    let (mut n_ld, mut n_td, mut n_pd) = (0, 0, 0);
    for (v, vx) in tpg.vertices.iter().enumerate() {
        if !in_scope(v) {
            continue;
        }
        n += 1;
        cost += vx.op.value_fn.map_or(0.0, |f| registry.cost_us(f));
        for &(d, c) in &vx.out_edges {
            if !in_scope(d) {
                continue;
            }
            match c {
                crate::planner::DepClass::LD => n_ld += 1,
                crate::planner::DepClass::TD => n_td += 1,
                crate::planner::DepClass::PD => n_pd += 1,
            }
        }
    }

    // Degree before transitive reduction: every other access on a shared key.
    let list_len: Vec<usize> = tpg
        .lists
        .iter()
        .map(|l| l.owners.iter().filter(|&&o| in_scope(o)).count())
        .collect();
    let mut max_deg = 0usize;
    let mut sum_deg = 0usize;
    for (v, vx) in tpg.vertices.iter().enumerate() {
        if !in_scope(v) {
            continue;
        }
        let d: usize = vx.list_keys().map(|k| list_len[k.index()].saturating_sub(1)).sum();
        max_deg = max_deg.max(d);
        sum_deg += d;
    }
    let degree_skew = if sum_deg == 0 {
        1.0
    } else {
        max_deg as f64 / (sum_deg as f64 / n as f64)
    };

    let plan = form_units_scoped(tpg, Granularity::Coarse, group);
    TpgProperties {
        avg_complexity: if n == 0 { 0.0 } else { cost / n as f64 },
        degree_skew,
        abort_ratio: abort_estimate.clamp(0.0, 1.0),
        n_ld,
        n_td,
        n_pd,
        has_cycles_coarse: plan.merged_cycles > 0,
    }
}

pub fn decide(p: &TpgProperties, th: &DecisionThresholds) -> SchedulingDecision {
    let explore = if p.n_deps() as f64 >= th.dep_count_high && p.degree_skew <= th.skew_low {
        Exploration::Structured(th.variant)
    } else {
        Exploration::NonStructured
    };
    let granularity = if !p.has_cycles_coarse && p.n_td as f64 >= th.dep_count_high && p.n_pd as f64 <= th.pd_low {
        Granularity::Coarse
    } else {
        Granularity::Fine
    };
    let abort = if p.avg_complexity <= th.complexity_low && p.abort_ratio >= th.abort_high {
        AbortMode::Lazy
    } else {
        AbortMode::Eager
    };
    SchedulingDecision::new(explore, granularity, abort)
}

pub fn decide_nested(
    groups: &BTreeMap<GroupId, TpgProperties>,
    th: &DecisionThresholds,
) -> BTreeMap<GroupId, SchedulingDecision> {
    groups.iter().map(|(&g, p)| (g, decide(p, th))).collect()
}

/// `batch=N group=G explore=.. gran=.. abort=.. props=(..)`
pub fn trace_line(batch: usize, group: Option<GroupId>, d: &SchedulingDecision, p: &TpgProperties) -> String {
    let g = group.map_or_else(|| "*".to_string(), |g| g.to_string());
    format!("batch={batch} group={g} {d} props={p}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulingUnit {
    pub id: usize,
    /// Vertex ids in execution order.
    pub members: Vec<Vid>,
}

#[derive(Debug, Clone)]
pub struct UnitPlan {
    pub units: Vec<SchedulingUnit>,
    /// Unit of each vertex; `usize::MAX` for vertices outside the scope.
    pub unit_of: Vec<usize>,
    /// Deduplicated unit-level edges, acyclic.
    pub edges: Vec<(usize, usize)>,
    /// Longest-path rank of each unit.
    pub ranks: Vec<usize>,
    /// Number of merged components with more than one unit.
    pub merged_cycles: usize,
}

impl UnitPlan {
    pub fn depth(&self) -> usize {
        self.ranks.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Unit ids grouped by rank.
    pub fn strata(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.depth()];
        for (u, &r) in self.ranks.iter().enumerate() {
            out[r].push(u);
        }
        out
    }
}

pub fn form_units(tpg: &Tpg, granularity: Granularity) -> UnitPlan {
    form_units_scoped(tpg, granularity, None)
}

pub fn form_units_scoped(tpg: &Tpg, granularity: Granularity, group: Option<GroupId>) -> UnitPlan {
    let in_scope = |v: Vid| group.map_or(true, |g| tpg.vertices[v].group == g);
    let mut raw: Vec<Vec<Vid>> = Vec::new();
    match granularity {
        Granularity::Fine => {
            raw.extend((0..tpg.len()).filter(|&v| in_scope(v)).map(|v| vec![v]));
        }
        Granularity::Coarse => {
            for list in &tpg.lists {
                let chain: Vec<Vid> = list
                    .entries
                    .iter()
                    .zip(&list.owners)
                    .filter(|(e, &o)| !e.is_virtual && in_scope(o))
                    .map(|(_, &o)| o)
                    .collect();
                if !chain.is_empty() {
                    raw.push(chain);
                }
            }
            // Operations without a real entry run on their own.
            for (v, vx) in tpg.vertices.iter().enumerate() {
                if in_scope(v) && vx.op.real_key().is_none() {
                    raw.push(vec![v]);
                }
            }
        }
    }

    let mut unit_of = vec![usize::MAX; tpg.len()];
    for (u, members) in raw.iter().enumerate() {
        for &v in members {
            unit_of[v] = u;
        }
    }
    let edges = unit_edges(tpg, &raw, &unit_of);
    let (units, merged_cycles) = detect_cycles(raw, &edges);

    let mut unit_of = vec![usize::MAX; tpg.len()];
    for u in &units {
        for &v in &u.members {
            unit_of[v] = u.id;
        }
    }
    let members: Vec<Vec<Vid>> = units.iter().map(|u| u.members.clone()).collect();
    let edges = unit_edges(tpg, &members, &unit_of);
    let ranks = unit_ranks(units.len(), &edges);
    UnitPlan {
        units,
        unit_of,
        edges,
        ranks,
        merged_cycles,
    }
}

fn unit_edges(tpg: &Tpg, units: &[Vec<Vid>], unit_of: &[usize]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (u, members) in units.iter().enumerate() {
        for &v in members {
            for c in tpg.vertices[v].children() {
                let cu = unit_of[c];
                if cu != u && cu != usize::MAX {
                    edges.push((u, cu));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Longest path over an acyclic unit graph, Kahn order.
fn unit_ranks(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        out[a].push(b);
    }
    let mut rank = vec![0usize; n];
    let mut stack: Vec<usize> = (0..n).filter(|&u| indeg[u] == 0).collect();
    let mut seen = 0;
    while let Some(u) = stack.pop() {
        seen += 1;
        for &w in &out[u] {
            rank[w] = rank[w].max(rank[u] + 1);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                stack.push(w);
            }
        }
    }
    assert_eq!(seen, n, "unit graph has a cycle after merging");
    rank
}

/// Merges strongly connected groups of units. Members of a merged unit are
/// ordered by vertex id, which is timestamp order. Returns the new units and
/// the number of merges performed.
pub fn detect_cycles(units: Vec<Vec<Vid>>, edges: &[(usize, usize)]) -> (Vec<SchedulingUnit>, usize) {
    let comp = tarjan(units.len(), edges);
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut merged: Vec<Vec<Vid>> = vec![Vec::new(); n_comp];
    let mut sizes = vec![0usize; n_comp];
    for (u, members) in units.into_iter().enumerate() {
        merged[comp[u]].extend(members);
        sizes[comp[u]] += 1;
    }
    let n_merged = sizes.iter().filter(|&&s| s > 1).count();
    // Keep a stable, deterministic unit numbering: by first member.
    for m in &mut merged {
        m.sort_unstable();
    }
    merged.sort_by_key(|m| m.first().copied());
    let units = merged
        .into_iter()
        .enumerate()
        .map(|(id, members)| SchedulingUnit { id, members })
        .collect();
    (units, n_merged)
}

/// Iterative Tarjan; returns the component index of each node.
fn tarjan(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSET; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        call.push((root, 0));
        while let Some(&(v, i)) = call.last() {
            if i == 0 && index[v] == UNSET {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if i < adj[v].len() {
                let w = adj[v][i];
                call.last_mut().unwrap().1 += 1;
                if index[w] == UNSET {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}

/// Per-thread unit lists. Structured DFS balances vertex counts within each
/// stratum, largest unit first; other modes deal units round-robin.
pub fn assign(plan: &UnitPlan, explore: Exploration, n_threads: usize) -> Result<Vec<Vec<usize>>, SchedError> {
    if n_threads == 0 {
        return Err(SchedError::NoThreads);
    }
    let mut lists = vec![Vec::new(); n_threads];
    match explore {
        Exploration::Structured(Variant::Dfs) => {
            let mut load = vec![0usize; n_threads];
            for mut stratum in plan.strata() {
                stratum.sort_by_key(|&u| (std::cmp::Reverse(plan.units[u].members.len()), u));
                for u in stratum {
                    let t = (0..n_threads).min_by_key(|&t| (load[t], t)).unwrap();
                    load[t] += plan.units[u].members.len();
                    lists[t].push(u);
                }
            }
        }
        _ => {
            for u in 0..plan.units.len() {
                lists[u % n_threads].push(u);
            }
        }
    }
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::fixtures::*;

    #[test]
    fn strategy_strings_round_trip() {
        for d in SchedulingDecision::all(Variant::Bfs)
            .into_iter()
            .chain(SchedulingDecision::all(Variant::Dfs))
        {
            assert_eq!(d.short().parse::<SchedulingDecision>().unwrap(), d);
        }
        assert!("X/F/E".parse::<SchedulingDecision>().is_err());
        assert_eq!(
            "S/C/E".parse::<SchedulingDecision>().unwrap().explore,
            Exploration::Structured(Variant::Dfs)
        );
    }

    #[test]
    fn thresholds_parse_and_reject() {
        let th = DecisionThresholds::parse("dep_count_high=10\n# c\nvariant = bfs\n").unwrap();
        assert_eq!(th.dep_count_high, 10.0);
        assert_eq!(th.variant, Variant::Bfs);
        assert!(DecisionThresholds::parse("nope=1").is_err());
        assert!(DecisionThresholds::parse("skew_low=abc").is_err());
        let d = DecisionThresholds::default();
        assert_eq!(DecisionThresholds::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn ledger_coarse_units_merge() {
        let tpg = build(2, ledger_batch());
        let plan = form_units(&tpg, Granularity::Coarse);
        assert_eq!(plan.units.len(), 1);
        assert_eq!(plan.units[0].members, vec![0, 1, 2, 3, 4]);
        assert_eq!(plan.merged_cycles, 1);
    }

    #[test]
    fn fine_units_are_singletons() {
        let tpg = build(2, ledger_batch());
        let plan = form_units(&tpg, Granularity::Fine);
        assert_eq!(plan.units.len(), 5);
        assert!(plan.units.iter().all(|u| u.members.len() == 1));
        assert_eq!(plan.depth(), 3);
    }

    #[test]
    fn disjoint_keys_give_independent_units() {
        let batch = vec![
            txn(1, vec![write(1, 0, crate::types::KeySpec::Deterministic(crate::types::Key(0)))]),
            txn(2, vec![write(2, 0, crate::types::KeySpec::Deterministic(crate::types::Key(1)))]),
        ];
        let tpg = build(2, batch);
        let plan = form_units(&tpg, Granularity::Coarse);
        assert_eq!(plan.units.len(), 2);
        assert!(plan.edges.is_empty());
    }

    #[test]
    fn three_cycle_merges() {
        let units = vec![vec![0], vec![1], vec![2], vec![3]];
        let (merged, n) = detect_cycles(units, &[(0, 1), (1, 2), (2, 0), (2, 3)]);
        assert_eq!(n, 1);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn acyclic_units_unchanged() {
        let units = vec![vec![0, 1], vec![2]];
        let (merged, n) = detect_cycles(units.clone(), &[(0, 1)]);
        assert_eq!(n, 0);
        assert_eq!(merged.iter().map(|u| u.members.clone()).collect::<Vec<_>>(), units);
    }

    #[test]
    fn ledger_properties() {
        let tpg = build(2, ledger_batch());
        let p = measure_properties(&tpg, &UdfRegistry::new(), 0.0);
        assert_eq!((p.n_ld, p.n_td, p.n_pd), (2, 3, 2));
        assert!(p.has_cycles_coarse);
    }

    #[test]
    fn edgeless_properties() {
        let batch = (1..=3)
            .map(|t| txn(t, vec![write(t, 0, crate::types::KeySpec::Deterministic(crate::types::Key(t - 1)))]))
            .collect();
        let tpg = build(3, batch);
        let p = measure_properties(&tpg, &UdfRegistry::new(), 0.0);
        assert_eq!(p.n_deps(), 0);
        assert_eq!(p.degree_skew, 1.0);
        assert!(!p.has_cycles_coarse);
    }

    #[test]
    fn assign_splits() {
        let plan = UnitPlan {
            units: (0..8).map(|id| SchedulingUnit { id, members: vec![id] }).collect(),
            unit_of: (0..8).collect(),
            edges: vec![],
            ranks: vec![0; 8],
            merged_cycles: 0,
        };
        let lists = assign(&plan, Exploration::Structured(Variant::Dfs), 4).unwrap();
        assert!(lists.iter().all(|l| l.len() == 2));
        let lists = assign(&plan, Exploration::NonStructured, 3).unwrap();
        assert_eq!(lists.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 2]);
        assert_eq!(assign(&plan, Exploration::NonStructured, 0), Err(SchedError::NoThreads));
    }

    #[test]
    fn five_singletons_two_threads() {
        let plan = UnitPlan {
            units: (0..5).map(|id| SchedulingUnit { id, members: vec![id] }).collect(),
            unit_of: (0..5).collect(),
            edges: vec![],
            ranks: vec![0; 5],
            merged_cycles: 0,
        };
        let lists = assign(&plan, Exploration::Structured(Variant::Dfs), 2).unwrap();
        let mut sizes: Vec<usize> = lists.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
    }
}
