use tsp_core::runtime::{with_punctuations, Engine, EngineConfig};
use tsp_core::state::VersionedStateTable;
use tsp_core::{Key, Timestamp, Value};
use tsp_workloads::*;

fn ev(i: u64, payload: Payload) -> Event {
    Event {
        event_id: i,
        ts: Timestamp(i + 1),
        arrival_index: i as usize,
        group: 0,
        payload,
    }
}

fn run(kind: WorkloadKind, key_space: u64, init: Vec<Value>, events: Vec<Event>, interval: usize) -> (Vec<Value>, Vec<(u64, Outcome)>, Vec<(usize, usize, usize)>) {
    let (op, reg) = WorkloadOp::new(kind, key_space, 0).unwrap();
    let table = VersionedStateTable::from_values(init).unwrap();
    let engine = Engine::new(&table, &reg, EngineConfig::default()).unwrap();
    let res = engine.run(&op, with_punctuations(events, interval)).unwrap();
    let edges = res.batches.iter().map(|b| b.edge_counts).collect();
    (table.latest_values(), res.outputs, edges)
}

#[test]
fn transfer_moves_both_account_and_asset() {
    let events = vec![
        ev(0, Payload::Transfer { from: Key(0), to: Key(1), amount: 50 }),
        ev(1, Payload::Transfer { from: Key(0), to: Key(1), amount: 60 }),
        ev(2, Payload::Deposit { account: Key(1), amount: 5 }),
        ev(3, Payload::Transfer { from: Key(1), to: Key(0), amount: 155 }),
    ];
    let (state, out, _) = run(WorkloadKind::Sl, 2, vec![100; 4], events, 10);
    // Accounts 0..2 then assets 2..4.
    assert_eq!(state, vec![205, 0, 205, 0]);
    assert_eq!(out[0], (0, Outcome::Committed(vec![Some(50), Some(150), Some(50), Some(150)])));
    assert_eq!(out[1], (1, Outcome::Failed));
    assert_eq!(out[2], (2, Outcome::Committed(vec![Some(155), Some(155)])));
    assert_eq!(out[3].1, Outcome::Committed(vec![Some(0), Some(205), Some(0), Some(205)]));
    assert_eq!(out[1].1.to_string(), tsp_core::runtime::FAILED_STATE_ACCESS);
}

#[test]
fn deposit_only_stream_has_no_parametric_edges() {
    let k = Knobs {
        transfer_ratio: 0.0,
        abort_ratio: 0.0,
        theta: 0.9,
        key_space: 50,
        events: 600,
        ..Knobs::defaults(WorkloadKind::Sl)
    };
    let events = gen_sl(&k).unwrap();
    let (_, out, edges) = run(WorkloadKind::Sl, 50, initial_state(WorkloadKind::Sl, &k), events, 200);
    assert_eq!(edges.len(), 3);
    for (ld, td, pd) in edges {
        assert_eq!(pd, 0);
        assert!(ld > 0 && td > 0);
    }
    assert!(out.iter().all(|(_, o)| matches!(o, Outcome::Committed(_))));
}

#[test]
fn grep_sums_modulo_and_honours_abort_flag() {
    let init = vec![GS_MODULUS - 1, 5, 7, 9];
    let events = vec![
        ev(0, Payload::Grep { ops: vec![vec![Key(0), Key(1)], vec![Key(2), Key(3)]], abort: false }),
        ev(1, Payload::Grep { ops: vec![vec![Key(1), Key(2)]], abort: true }),
        ev(2, Payload::Grep { ops: vec![vec![Key(3), Key(0)]], abort: false }),
    ];
    let (state, out, _) = run(WorkloadKind::Gs, 4, init, events, 10);
    assert_eq!(state, vec![4, 5, 16, 13]);
    assert_eq!(out[1].1, Outcome::Failed);
    assert_eq!(out[2].1, Outcome::Committed(vec![Some(13)]));
}

#[test]
fn window_sum_covers_versions_in_range() {
    let g = |i, k: u64, r: u64| ev(i, Payload::Grep { ops: vec![vec![Key(k), Key(r)]], abort: false });
    let events = vec![
        g(0, 0, 1), // ts 1: k0 = 1 + 2 = 3
        g(1, 0, 1), // ts 2: k0 = 5
        g(2, 1, 0), // ts 3: k1 = 7
        ev(3, Payload::WindowSum { keys: vec![Key(0), Key(1)], range: 2 }),
    ];
    let (_, out, _) = run(WorkloadKind::GsWindow, 2, vec![1, 2], events, 10);
    // Window [2, 4): k0 version at ts 2 and k1 version at ts 3.
    assert_eq!(out[3].1, Outcome::Committed(vec![Some(12)]));
}

#[test]
fn nondet_write_targets_first_selected_key() {
    let events = vec![ev(
        0,
        Payload::NondetGrep {
            candidates: vec![Key(4), Key(1), Key(6), Key(3)],
            pick: 3,
            width: 2,
            abort: false,
        },
    )];
    let init: Vec<Value> = (0..8).map(|k| k * 10).collect();
    let (state, out, _) = run(WorkloadKind::GsNondet, 8, init.clone(), events, 10);
    let changed: Vec<usize> = (0..8).filter(|&k| state[k] != init[k]).collect();
    // pick 3 of 4 candidates: positions 3 and 0, so key 3 becomes 30 + 40.
    assert_eq!(changed, vec![3]);
    assert_eq!(state[3], 70);
    assert!(matches!(out[0].1, Outcome::Committed(_)));
}
