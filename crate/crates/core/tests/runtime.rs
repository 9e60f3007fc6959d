use tsp_core::runtime::*;
use tsp_core::scheduler::{AbortMode, Exploration, Granularity, SchedulingDecision};
use tsp_core::state::VersionedStateTable;
use tsp_core::udf::{UdfBody, UdfRegistry};
use tsp_core::{FunctionRef, Key, Timestamp, WindowKeys};

/// (from, to, amount); `to == from` is a deposit, amount 0 is filtered.
type Transfer = (u64, u64, i64);

struct Ledger {
    debit: FunctionRef,
    credit: FunctionRef,
    enough: FunctionRef,
    deposit: FunctionRef,
}

impl Ledger {
    fn new(reg: &mut UdfRegistry) -> Self {
        Ledger {
            debit: reg.register("debit", 1, 0, UdfBody::value(|r, p| r[0] - p[0])).unwrap(),
            credit: reg.register("credit", 2, 0, UdfBody::value(|r, p| r[0] + p[0])).unwrap(),
            enough: reg
                .register("enough", 1, 0, UdfBody::condition(|r, p| *r.last().unwrap() >= p[0]))
                .unwrap(),
            deposit: reg.register("deposit", 1, 0, UdfBody::value(|r, p| r[0] + p[0])).unwrap(),
        }
    }
}

impl Operator for Ledger {
    type Payload = Transfer;
    type Output = String;

    fn pre_process(&self, e: &Event<Transfer>) -> EventBlotter {
        let (from, to, v) = e.payload;
        if v == 0 {
            return EventBlotter::noop(e.event_id);
        }
        EventBlotter::new(e.event_id, u8::from(from != to), vec![Key(from), Key(to)], vec![v])
    }

    fn state_access(&self, eb: &EventBlotter, txn: &mut TxnBuilder) -> Result<(), RuntimeError> {
        let (a, b) = (eb.keys[0], eb.keys[1]);
        if eb.kind == 0 {
            txn.request_write(a, &[], self.deposit, None, &eb.params)?;
        } else {
            txn.request_write(a, &[], self.debit, Some(self.enough), &eb.params)?;
            txn.request_write(b, &[a], self.credit, Some(self.enough), &eb.params)?;
        }
        Ok(())
    }

    fn post_process(&self, _e: &Event<Transfer>, eb: &EventBlotter) -> Option<String> {
        match eb.status {
            BlotterStatus::NoOp => None,
            BlotterStatus::Failed => Some(FAILED_STATE_ACCESS.to_string()),
            _ => Some(format!("{:?}", eb.results)),
        }
    }
}

fn events(list: &[Transfer]) -> Vec<Event<Transfer>> {
    list.iter()
        .enumerate()
        .map(|(i, &payload)| Event {
            event_id: i as u64,
            ts: Timestamp(i as u64 + 1),
            arrival_index: i,
            group: 0,
            payload,
        })
        .collect()
}

fn run(list: &[Transfer], interval: usize, cfg: EngineConfig) -> (Vec<i64>, RunResult<String>) {
    let mut reg = UdfRegistry::new();
    let op = Ledger::new(&mut reg);
    let table = VersionedStateTable::new(2, 100).unwrap();
    let engine = Engine::new(&table, &reg, cfg).unwrap();
    let res = engine.run(&op, with_punctuations(events(list), interval)).unwrap();
    (table.latest_values(), res)
}

#[test]
fn ledger_batch_matches_hand_replay() {
    // Deposit 10 on A, A->B 60, B->A 500 (fails: B holds 160).
    let (vals, res) = run(&[(0, 0, 10), (0, 1, 60), (1, 0, 500)], 3, EngineConfig::default());
    assert_eq!(vals, vec![50, 160]);
    assert_eq!(res.batches.len(), 1);
    assert_eq!(res.outputs[0], (0, "[Some(110)]".to_string()));
    assert_eq!(res.outputs[1], (1, "[Some(50), Some(160)]".to_string()));
    assert_eq!(res.outputs[2], (2, FAILED_STATE_ACCESS.to_string()));
    assert_eq!(res.committed.values().copied().collect::<Vec<_>>(), vec![true, true, false]);
}

#[test]
fn transfer_exceeding_balance_leaves_state() {
    let (vals, res) = run(&[(0, 1, 150)], 1, EngineConfig::default());
    assert_eq!(vals, vec![100, 100]);
    assert_eq!(res.outputs, vec![(0, FAILED_STATE_ACCESS.to_string())]);
}

#[test]
fn filtered_event_has_no_output() {
    let (vals, res) = run(&[(0, 1, 0), (0, 1, 50)], 10, EngineConfig::default());
    assert_eq!(vals, vec![50, 150]);
    assert_eq!(res.outputs.len(), 1);
    assert_eq!(res.committed.len(), 1);
}

#[test]
fn punctuation_only_batch_is_noop() {
    let mut reg = UdfRegistry::new();
    let op = Ledger::new(&mut reg);
    let table = VersionedStateTable::new(2, 100).unwrap();
    let engine = Engine::new(&table, &reg, EngineConfig::default()).unwrap();
    let res = engine
        .run(&op, vec![StreamItem::Punctuation, StreamItem::Punctuation, StreamItem::End])
        .unwrap();
    assert!(res.batches.is_empty());
    assert_eq!(table.latest_values(), vec![100, 100]);
}

#[test]
fn events_after_end_are_ignored() {
    let mut reg = UdfRegistry::new();
    let op = Ledger::new(&mut reg);
    let table = VersionedStateTable::new(2, 100).unwrap();
    let engine = Engine::new(&table, &reg, EngineConfig::default()).unwrap();
    let mut items = with_punctuations(events(&[(0, 1, 10)]), 4);
    items.extend(with_punctuations(events(&[(0, 1, 10)]), 4));
    let res = engine.run(&op, items).unwrap();
    assert_eq!(res.batches.len(), 1);
    assert_eq!(table.latest_values(), vec![90, 110]);
}

#[test]
fn batches_follow_interval_and_chain_state() {
    let list: Vec<Transfer> = (0..10).map(|_| (0, 1, 5)).collect();
    let (vals, res) = run(&list, 4, EngineConfig::default());
    assert_eq!(res.batches.iter().map(|b| b.events).collect::<Vec<_>>(), vec![4, 4, 2]);
    assert_eq!(vals, vec![50, 150]);
    for b in &res.batches {
        assert_eq!(b.latencies.len(), b.events);
        assert!(b.all_settled);
        assert_eq!(b.trace.len(), 1);
    }
}

#[test]
fn arrival_order_does_not_change_results() {
    let list = [(0, 1, 30), (1, 0, 80), (0, 1, 90), (0, 0, 5), (1, 0, 200), (0, 1, 1)];
    let (want, base) = run(&list, 6, EngineConfig::default());
    let mut reg = UdfRegistry::new();
    let op = Ledger::new(&mut reg);
    let table = VersionedStateTable::new(2, 100).unwrap();
    let engine = Engine::new(&table, &reg, EngineConfig::default()).unwrap();
    let mut evs = events(&list);
    evs.reverse();
    let res = engine.run(&op, with_punctuations(evs, 6)).unwrap();
    assert_eq!(table.latest_values(), want);
    assert_eq!(res.committed, base.committed);
}

#[test]
fn forced_strategy_is_reported() {
    let d = SchedulingDecision::new(Exploration::NonStructured, Granularity::Coarse, AbortMode::Lazy);
    let cfg = EngineConfig {
        strategy: Strategy::Forced(d),
        threads: 3,
        ..EngineConfig::default()
    };
    let (vals, res) = run(&[(0, 1, 10), (1, 0, 20)], 8, cfg);
    assert_eq!(vals, vec![110, 90]);
    assert_eq!(res.batches[0].decision_label(), "NS/C/L");
}

#[test]
fn zero_threads_rejected() {
    let reg = UdfRegistry::new();
    let table = VersionedStateTable::new(1, 0).unwrap();
    let cfg = EngineConfig {
        threads: 0,
        ..EngineConfig::default()
    };
    assert!(Engine::new(&table, &reg, cfg).is_err());
}

#[test]
fn request_api_checks_arguments() {
    let mut reg = UdfRegistry::new();
    let sum = reg.register("sum", 1, 0, UdfBody::window(|v, _| v.iter().sum())).unwrap();
    let val = reg.register("v", 1, 0, UdfBody::value(|r, _| r[0])).unwrap();
    let pick = reg.register("pick", 1, 0, UdfBody::selector(|_, _| vec![Key(1)])).unwrap();
    let mut tb = TxnBuilder::new(&reg, Timestamp(5), 5, 0);
    assert!(matches!(
        tb.request_window_read(WindowKeys::Explicit(vec![Key(0)]), 0, sum, &[]),
        Err(RuntimeError::EmptyWindow)
    ));
    assert!(tb.request_window_read(WindowKeys::Explicit(vec![Key(0)]), 10, val, &[]).is_err());
    let bogus = FunctionRef { id: 99, ..val };
    assert!(tb.request_write(Key(0), &[], bogus, None, &[]).is_err());
    assert_eq!(tb.request_write(Key(0), &[Key(1)], val, None, &[]).unwrap(), 0);
    assert_eq!(tb.request_nondet_write(pick, None, val, None, &[]).unwrap(), 1);
    assert_eq!(tb.request_window_read(WindowKeys::Explicit(vec![Key(0)]), 10, sum, &[]).unwrap(), 2);
    let txn = tb.finish();
    assert_eq!(txn.ops.len(), 3);
    assert!(txn.validate().is_ok());
}
