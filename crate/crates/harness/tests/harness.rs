use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use tsp_bench::report::{read_json_report, write_csv, ConfigEcho, CSV_HEADER};
use tsp_bench::*;
use tsp_core::runtime::{Strategy, Event};
use tsp_core::scheduler::SchedulingDecision;
use tsp_core::{Key, Timestamp};
use tsp_workloads::{gen, initial_state, Knobs, Outcome, Payload, WorkloadKind, WorkloadOp};

fn small(kind: WorkloadKind) -> RunConfig {
    let mut c = RunConfig::new(kind);
    c.knobs.key_space = 64;
    c.knobs.interval = 256;
    c.knobs.events = 768;
    c.knobs.udf_cost_us = 0;
    c.knobs.window_size = 100;
    c.knobs.trigger_period = 20;
    c.knobs.window_keys = 8;
    c.threads = 2;
    c
}

fn oracle_for(cfg: &RunConfig, events: &[tsp_workloads::Event]) -> OracleResult<Outcome> {
    let kind = cfg.workload.kind();
    let (op, reg) = WorkloadOp::new(kind, cfg.knobs.key_space, 0).unwrap();
    serial_oracle(&op, &reg, &initial_state(kind, &cfg.knobs), events, cfg.knobs.interval).unwrap()
}

#[test]
fn oracle_on_empty_stream_keeps_initial_state() {
    let cfg = small(WorkloadKind::Gs);
    let out = oracle_for(&cfg, &[]);
    assert_eq!(out.state, initial_state(WorkloadKind::Gs, &cfg.knobs));
    assert!(out.committed.is_empty() && out.outputs.is_empty());
}

#[test]
fn oracle_with_every_event_aborting_changes_nothing() {
    let cfg = small(WorkloadKind::Gs);
    let mut events = cfg.events().unwrap();
    for e in &mut events {
        if let Payload::Grep { abort, .. } = &mut e.payload {
            *abort = true;
        }
    }
    let out = oracle_for(&cfg, &events);
    assert_eq!(out.state, initial_state(WorkloadKind::Gs, &cfg.knobs));
    assert_eq!(out.committed.len(), events.len());
    assert!(out.committed.values().all(|c| !c));
    assert!(out.outputs.values().all(|o| *o == Outcome::Failed));
}

#[test]
fn oracle_ledger_by_hand() {
    let ev = |i: u64, payload| Event {
        event_id: i,
        ts: Timestamp(i + 1),
        arrival_index: i as usize,
        group: 0,
        payload,
    };
    let events = vec![
        ev(0, Payload::Deposit { account: Key(1), amount: 7 }),
        ev(1, Payload::Transfer { from: Key(1), to: Key(0), amount: 10 }),
        ev(2, Payload::Transfer { from: Key(1), to: Key(0), amount: 8 }),
    ];
    let (op, reg) = WorkloadOp::new(WorkloadKind::Sl, 2, 0).unwrap();
    let out = serial_oracle(&op, &reg, &[0, 5, 0, 5], &events, 10).unwrap();
    // Account 1 holds 12 after the deposit: the 10 transfer commits, the 8 does not.
    assert_eq!(out.state, vec![10, 2, 10, 2]);
    assert_eq!(out.committed.values().copied().collect::<Vec<_>>(), vec![true, true, false]);
}

#[test]
fn oracle_is_deterministic() {
    let cfg = small(WorkloadKind::GsNondet);
    let events = cfg.events().unwrap();
    assert_eq!(oracle_for(&cfg, &events), oracle_for(&cfg, &events));
}

#[test]
fn oracle_sorts_by_timestamp_inside_a_batch() {
    let cfg = small(WorkloadKind::Sl);
    let events = cfg.events().unwrap();
    let mut reversed = events.clone();
    for chunk in reversed.chunks_mut(cfg.knobs.interval) {
        let n = chunk.len();
        let base = chunk[0].arrival_index;
        for e in chunk.iter_mut() {
            e.arrival_index = base + (n - 1 - (e.arrival_index - base));
        }
    }
    assert_eq!(oracle_for(&cfg, &events), oracle_for(&cfg, &reversed));
}

fn engine_of(o: &OracleResult<Outcome>) -> EngineResult<Outcome> {
    EngineResult {
        state: o.state.clone(),
        committed: o.committed.clone(),
        outputs: o.outputs.clone(),
    }
}

#[test]
fn verify_passes_on_identical_results_and_lists_mutations() {
    let cfg = small(WorkloadKind::Sl);
    let want = oracle_for(&cfg, &cfg.events().unwrap());
    assert!(verify(&engine_of(&want), &want).passed());

    let mut got = engine_of(&want);
    got.state[3] += 1;
    let r = verify(&got, &want);
    assert_eq!(r.total, 1);
    assert!(r.divergences[0].contains("key 3"));

    let mut got = engine_of(&want);
    let id = *got.committed.keys().next().unwrap();
    got.committed.insert(id, !got.committed[&id]);
    got.outputs.remove(&id);
    assert_eq!(verify(&got, &want).total, 2);
    assert!(!verify(&got, &want).to_string().contains("pass"));
}

#[test]
fn verify_caps_listed_divergences() {
    let cfg = small(WorkloadKind::Gs);
    let want = oracle_for(&cfg, &cfg.events().unwrap());
    let mut got = engine_of(&want);
    for v in &mut got.state {
        *v += 1;
    }
    let r = verify(&got, &want);
    assert_eq!(r.total, got.state.len());
    assert_eq!(r.divergences.len(), tsp_bench::verify::MAX_LISTED);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn verify_is_symmetric(flips in proptest::collection::vec((0usize..64, -3i64..3), 0..6)) {
        let cfg = small(WorkloadKind::Gs);
        let want = oracle_for(&cfg, &[]);
        let mut got = engine_of(&want);
        for (k, d) in flips {
            got.state[k] += d;
        }
        let other = OracleResult { state: got.state.clone(), committed: BTreeMap::new(), outputs: BTreeMap::new() };
        let a = verify(&got, &want);
        let b = verify(&engine_of(&want), &other);
        prop_assert_eq!(a.total, b.total);
        prop_assert_eq!(a.passed(), got.state == want.state);
    }
}

#[test]
fn every_workload_matches_the_oracle_on_a_small_run() {
    for kind in WorkloadKind::ALL {
        let mut cfg = small(kind);
        cfg.verify = true;
        cfg.log_transitions = true;
        let out = run_benchmark(&cfg).unwrap();
        let r = out.verify.unwrap();
        assert!(r.passed(), "{kind}: {r}");
        assert!(out.fsm_violations.is_empty(), "{:?}", out.fsm_violations);
        assert!(out.all_settled);
        assert_eq!(out.metrics.batches.len(), 3);
    }
}

#[test]
fn percentiles_use_nearest_rank() {
    use std::time::Duration;
    let d: Vec<Duration> = (1..=10).map(Duration::from_millis).collect();
    assert_eq!(tsp_bench::bench::percentile_ms(&d, 0.5), 5.0);
    assert_eq!(tsp_bench::bench::percentile_ms(&d, 0.95), 10.0);
    assert_eq!(tsp_bench::bench::percentile_ms(&d, 0.0), 1.0);
    assert_eq!(tsp_bench::bench::percentile_ms(&[], 0.5), 0.0);
}

#[test]
fn csv_has_one_row_per_batch_and_decisions_match_the_trace() {
    let mut cfg = small(WorkloadKind::Gs);
    cfg.strategy = Strategy::Forced("NS/F/L".parse::<SchedulingDecision>().unwrap());
    let out = run_benchmark(&cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &out.metrics).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), out.metrics.batches.len());
    for (row, line) in rows.iter().zip(&out.metrics.decision_trace) {
        assert!(line.contains("explore=NS gran=F abort=L"), "{line}");
        assert_eq!(&row[12], "NS/F/L");
    }
}

#[test]
fn json_report_round_trips() {
    let cfg = small(WorkloadKind::Tp);
    let out = run_benchmark(&cfg).unwrap();
    let report = Report {
        config: ConfigEcho::from(&cfg),
        metrics: out.metrics,
        verified: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    assert_eq!(Format::from_path(&path), Format::Json);
    assert_eq!(Format::from_path(Path::new("r.csv")), Format::Csv);
    emit_report(&report, Format::Json, &path).unwrap();
    assert_eq!(read_json_report(&path).unwrap(), report);
}

#[test]
fn shipped_script_morphs_each_dimension_in_its_phase() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/dynamic_sl.conf")).unwrap();
    let script = tsp_workloads::parse_script(&text).unwrap();
    let per_phase = script.phases[0].length / script.base.interval;
    let out = run_benchmark(&RunConfig::dynamic(script)).unwrap();
    let labels: Vec<String> = out.metrics.batches.iter().map(|b| b.decision.clone()).collect();
    let phase = |i: usize| &labels[i * per_phase..(i + 1) * per_phase];
    let has = |ls: &[String], pat: &str| ls.iter().any(|l| l.contains(pat));
    assert!(phase(0).iter().all(|l| l.starts_with("S-") && l.ends_with("/C/E")), "{labels:?}");
    assert!(has(phase(1), "NS/"), "{labels:?}");
    assert!(has(phase(2), "/F/") && !has(phase(1), "/F/"), "{labels:?}");
    assert!(has(phase(3), "/L") && !has(phase(2), "/L"), "{labels:?}");
}

#[test]
fn toll_groups_get_their_own_strategies() {
    let mut cfg = RunConfig::new(WorkloadKind::Tp);
    cfg.knobs.events = 3 * cfg.knobs.interval;
    cfg.knobs.udf_cost_us = 0;
    cfg.strategy = Strategy::Nested(BTreeMap::new());
    let out = run_benchmark(&cfg).unwrap();
    let last: Vec<&String> = out.metrics.decision_trace.iter().filter(|l| l.starts_with("batch=2 ")).collect();
    assert_eq!(last.len(), 2, "{last:?}");
    assert!(last[0].contains("group=1 explore=NS gran=C abort=L"), "{}", last[0]);
    assert!(last[1].contains("group=2 explore=S/DFS gran=C abort=E"), "{}", last[1]);
}

#[test]
fn generated_streams_are_reproducible() {
    let k = Knobs {
        events: 500,
        ..Knobs::defaults(WorkloadKind::Sl)
    };
    assert_eq!(gen(WorkloadKind::Sl, &k).unwrap(), gen(WorkloadKind::Sl, &k).unwrap());
}

fn bench(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bench")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let ok = bench(&["run", "--workload", "gs", "--events", "300", "--interval", "100", "--keys", "50", "--cost", "0", "--verify"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("verify: pass"));

    for bad in [
        vec!["run", "--workload", "nope"],
        vec!["run", "--workload", "gs", "--theta", "7"],
        vec!["run", "--workload", "gs", "--threads", "0"],
        vec!["run", "--workload", "gs", "--strategy", "X/Y/Z"],
        vec!["run", "--workload", "dynamic:/does/not/exist"],
        vec!["run"],
    ] {
        assert_eq!(bench(&bad).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn cli_writes_reports_and_streams() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("r.csv");
    let json_path = dir.path().join("r.json");
    let ev_path = dir.path().join("e.csv");
    let common = ["--workload", "sl", "--batches", "2", "--interval", "200", "--keys", "40", "--cost", "0"];
    for out in [&csv_path, &json_path] {
        let mut args = vec!["run", "--threads", "2"];
        args.extend(common);
        args.extend(["--out", out.to_str().unwrap()]);
        assert_eq!(bench(&args).status.code(), Some(0));
    }
    let rows = std::fs::read_to_string(&csv_path).unwrap().lines().count();
    assert_eq!(rows, 3);
    assert_eq!(read_json_report(&json_path).unwrap().metrics.batches.len(), 2);

    let mut args = vec!["gen", "--out", ev_path.to_str().unwrap()];
    args.extend(common);
    assert_eq!(bench(&args).status.code(), Some(0));
    let (_, events) = tsp_workloads::io::read_events(std::fs::File::open(&ev_path).unwrap()).unwrap();
    assert_eq!(events.len(), 400);
}
