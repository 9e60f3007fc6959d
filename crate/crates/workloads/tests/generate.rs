use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tsp_core::Key;
use tsp_workloads::generate::{TP_COLD_GROUP, TP_HOT_GROUP};
use tsp_workloads::io::{read_events, write_events};
use tsp_workloads::*;

fn knobs(kind: WorkloadKind, events: usize, seed: u64) -> Knobs {
    Knobs {
        events,
        seed,
        ..Knobs::defaults(kind)
    }
}

fn csv_bytes(events: &[Event]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_events(&mut buf, &[], events).unwrap();
    buf
}

#[test]
fn same_seed_gives_identical_files() {
    for kind in WorkloadKind::ALL {
        let k = knobs(kind, 3000, 42);
        let a = csv_bytes(&gen(kind, &k).unwrap());
        let b = csv_bytes(&gen(kind, &k).unwrap());
        assert_eq!(a, b, "{kind}");
        let c = csv_bytes(&gen(kind, &Knobs { seed: 43, ..k }).unwrap());
        assert_ne!(a, c, "{kind}");
    }
}

#[test]
fn csv_roundtrip_preserves_events() {
    for kind in WorkloadKind::ALL {
        let k = Knobs {
            trigger_period: 7,
            window_keys: 5,
            ..knobs(kind, 500, 3)
        };
        let events = gen(kind, &k).unwrap();
        let mut buf = Vec::new();
        write_events(&mut buf, &[format!("workload={kind}"), k.describe()], &events).unwrap();
        let (header, back) = read_events(buf.as_slice()).unwrap();
        assert_eq!(header[0], format!("workload={kind}"));
        assert_eq!(back, events, "{kind}");
    }
}

#[test]
fn malformed_lines_report_their_line() {
    let text = "# h\n1,deposit,3,5\n2,grep,0,0,2,1,2,3\n";
    match read_events(text.as_bytes()) {
        Err(WorkloadError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(read_events("1,fly,2".as_bytes()).is_err());
}

fn abort_flag(e: &Event) -> bool {
    match &e.payload {
        Payload::Grep { abort, .. } | Payload::NondetGrep { abort, .. } => *abort,
        Payload::Transfer { amount, .. } => *amount == SL_FAILING_AMOUNT,
        _ => false,
    }
}

#[test]
fn abort_fraction_tracks_knob() {
    for (kind, a) in [(WorkloadKind::Gs, 0.1), (WorkloadKind::Sl, 0.3), (WorkloadKind::GsNondet, 0.5)] {
        let k = Knobs {
            abort_ratio: a,
            ..knobs(kind, 100_000, 9)
        };
        let events = gen(kind, &k).unwrap();
        let frac = events.iter().filter(|e| abort_flag(e)).count() as f64 / events.len() as f64;
        assert!((frac - a).abs() <= 0.01, "{kind}: {frac} vs {a}");
    }
}

#[test]
fn zipf_passes_chi_square() {
    let (n, theta, draws) = (1000u64, 0.8, 1_000_000);
    let s = KeySampler::new(theta, n);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = vec![0f64; n as usize];
    for _ in 0..draws {
        counts[s.sample(&mut rng).0 as usize] += 1.0;
    }
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-theta)).collect();
    let total: f64 = weights.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(c, w)| {
            let e = draws as f64 * w / total;
            (c - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 {stat}, p {p}");
}

#[test]
fn theta_zero_is_uniform() {
    let (n, draws) = (100usize, 1_000_000);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts = vec![0f64; n];
    for _ in 0..draws {
        counts[zipf_key(0.0, n as u64, &mut rng).0 as usize] += 1.0;
    }
    let mean = draws as f64 / n as f64;
    let sd = (draws as f64 * (1.0 / n as f64) * (1.0 - 1.0 / n as f64)).sqrt();
    let within = counts.iter().filter(|c| (*c - mean).abs() <= 3.0 * sd).count();
    // 99.7% of buckets expected inside 3 sigma; allow a couple of outliers.
    assert!(within >= n - 2, "{within} of {n} buckets within 3 sigma");
    assert!(counts.iter().all(|c| (c - mean).abs() <= 4.5 * sd));
}

#[test]
fn theta_one_has_unit_log_log_slope() {
    let (n, draws) = (1000u64, 1_000_000);
    let s = KeySampler::new(1.0, n);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = vec![0f64; n as usize];
    for _ in 0..draws {
        counts[s.sample(&mut rng).0 as usize] += 1.0;
    }
    let pts: Vec<(f64, f64)> = (0..100).map(|r| (((r + 1) as f64).ln(), counts[r].ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn single_key_space_always_yields_key_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for theta in [0.0, 0.5, 1.0] {
        assert!((0..1000).all(|_| zipf_key(theta, 1, &mut rng) == Key(0)));
    }
}

#[test]
fn nondet_ratio_zero_matches_plain_grep() {
    let k = Knobs {
        nondet_ratio: 0.0,
        ..knobs(WorkloadKind::GsNondet, 2000, 11)
    };
    let plain = gen_gs(&k, GsVariant::Plain).unwrap();
    let nondet = gen_gs(&k, GsVariant::Nondet).unwrap();
    assert_eq!(plain, nondet);
}

#[test]
fn nondet_events_carry_spare_candidates() {
    let k = Knobs {
        nondet_ratio: 0.5,
        multi_access: 3,
        ..knobs(WorkloadKind::GsNondet, 4000, 12)
    };
    let events = gen(WorkloadKind::GsNondet, &k).unwrap();
    let nd: Vec<_> = events
        .iter()
        .filter_map(|e| match &e.payload {
            Payload::NondetGrep { candidates, width, .. } => Some((candidates.len(), *width)),
            _ => None,
        })
        .collect();
    let frac = nd.len() as f64 / events.len() as f64;
    assert!((frac - 0.5).abs() < 0.03, "{frac}");
    assert!(nd.iter().all(|&(c, w)| w == 3 && c == 5));
}

#[test]
fn window_readers_fire_on_trigger_period() {
    let k = Knobs {
        trigger_period: 10,
        window_keys: 4,
        window_size: 50,
        ..knobs(WorkloadKind::GsWindow, 100, 13)
    };
    let events = gen(WorkloadKind::GsWindow, &k).unwrap();
    for (i, e) in events.iter().enumerate() {
        match &e.payload {
            Payload::WindowSum { keys, range } => {
                assert_eq!((i + 1) % 10, 0);
                assert_eq!(*range, 50);
                let mut d = keys.clone();
                d.sort();
                d.dedup();
                assert_eq!(d.len(), 4);
            }
            _ => assert_ne!((i + 1) % 10, 0),
        }
    }
}

#[test]
fn tp_groups_split_keys_and_aborts() {
    let k = knobs(WorkloadKind::Tp, 40_000, 14);
    let events = gen_tp(&k).unwrap();
    let half = k.key_space / 2;
    let mut hot = 0usize;
    let mut hot_aborts = 0usize;
    let mut hot_counts = vec![0usize; half as usize];
    for e in &events {
        let Payload::Grep { ops, abort } = &e.payload else {
            panic!("tp events are grep transactions")
        };
        assert_eq!(ops.len(), k.txn_len);
        let keys = ops.iter().flatten();
        if e.group == TP_HOT_GROUP {
            hot += 1;
            hot_aborts += usize::from(*abort);
            for key in keys {
                assert!(key.0 < half);
                hot_counts[key.0 as usize] += 1;
            }
        } else {
            assert_eq!(e.group, TP_COLD_GROUP);
            assert!(!abort);
            assert!(keys.into_iter().all(|key| key.0 >= half && key.0 < k.key_space));
        }
    }
    let share = hot as f64 / events.len() as f64;
    assert!((share - 0.5).abs() < 0.02, "{share}");
    let a = hot_aborts as f64 / hot as f64;
    assert!((a - k.abort_ratio).abs() < 0.02, "{a}");
    // Skewed: the ten hottest keys take far more than their uniform share.
    let top: usize = hot_counts[..10].iter().sum();
    let total: usize = hot_counts.iter().sum();
    assert!(top as f64 / total as f64 > 10.0 * 10.0 / half as f64);
}

#[test]
fn shuffle_with_zero_window_is_identity() {
    let events = gen_gs(&knobs(WorkloadKind::Gs, 500, 15), GsVariant::Plain).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(shuffle_arrival(events.clone(), 0, &mut rng), events);
}

#[test]
fn shuffle_displacement_is_bounded() {
    let events = gen_gs(&knobs(WorkloadKind::Gs, 2000, 16), GsVariant::Plain).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for w in [1usize, 5, 64] {
        let out = shuffle_arrival(events.clone(), w, &mut rng);
        assert_ne!(out, events);
        for (pos, e) in out.iter().enumerate() {
            assert_eq!(e.arrival_index, pos);
            assert!((e.event_id as i64 - pos as i64).unsigned_abs() as usize <= w);
        }
        let mut ids: Vec<u64> = out.iter().map(|e| e.event_id).collect();
        ids.sort();
        assert!(ids.iter().enumerate().all(|(i, id)| *id == i as u64));
    }
}

#[test]
fn knobs_outside_range_are_rejected() {
    let base = Knobs::defaults(WorkloadKind::Gs);
    let bad = [
        Knobs { theta: 1.2, ..base.clone() },
        Knobs { abort_ratio: 0.95, ..base.clone() },
        Knobs { txn_len: 0, ..base.clone() },
        Knobs { txn_len: 11, ..base.clone() },
        Knobs { udf_cost_us: 101, ..base.clone() },
        Knobs { multi_access: 11, ..base.clone() },
        Knobs { key_space: 3, txn_len: 2, ..base.clone() },
    ];
    for k in bad {
        assert!(gen(WorkloadKind::Gs, &k).is_err(), "{}", k.describe());
    }
    assert!("sl2".parse::<WorkloadKind>().is_err());
}

#[test]
fn dynamic_script_ramps_knobs() {
    let text = "
        workload = sl
        keys = 64
        seed = 3
        phase = 1000
        theta = 0.0
        transfer_ratio = 0.0
        abort = 0.0
        phase = 1001
        transfer_ratio = 0.0 -> 1.0   # linear
    ";
    let s = parse_script(text).unwrap();
    assert_eq!(s.kind, WorkloadKind::Sl);
    assert_eq!(s.base.key_space, 64);
    assert_eq!(s.base.events, 2001);
    assert_eq!(s.phases[1].trend, vec![("transfer_ratio".to_string(), 0.0, 1.0)]);
    let events = gen_dynamic(s.kind, &s.base, &s.phases).unwrap();
    assert_eq!(events.len(), 2001);
    let is_transfer = |e: &Event| matches!(e.payload, Payload::Transfer { .. });
    assert!(!events[..1000].iter().any(is_transfer));
    let early = events[1000..1200].iter().filter(|e| is_transfer(e)).count();
    let late = events[1800..].iter().filter(|e| is_transfer(e)).count();
    assert!(early < 40 && late > 160, "{early} {late}");
    assert!(is_transfer(&events[2000]));
    assert!(events.iter().enumerate().all(|(i, e)| e.event_id == i as u64));
}

#[test]
fn dynamic_script_errors() {
    assert!(parse_script("phase = 10\n").is_err());
    assert!(parse_script("workload = gs\nphase = 10\nlen = 3\n").is_err());
    assert!(parse_script("workload = gs\nbogus = 1\nphase = 10\n").is_err());
    let s = parse_script("workload = gs\nphase = 10\ntheta = 0.5 -> 1.5\n").unwrap();
    assert!(gen_dynamic(s.kind, &s.base, &s.phases).is_err());
}

#[test]
fn batch_shuffle_keeps_events_in_their_batch() {
    let events = gen_gs(&knobs(WorkloadKind::Gs, 1000, 17), GsVariant::Plain).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = shuffle_within_batches(events, 128, 128, &mut rng);
    for (pos, e) in out.iter().enumerate() {
        assert_eq!(e.arrival_index, pos);
        assert_eq!(e.event_id as usize / 128, pos / 128);
    }
}
