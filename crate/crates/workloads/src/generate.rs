use rand::distributions::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use tsp_core::{Key, Timestamp};

use crate::{Event, Knobs, Payload, WorkloadError, WorkloadKind, SL_FAILING_AMOUNT};

/// Draws keys `0..n` with probability proportional to `(rank + 1)^-theta`.
#[derive(Debug, Clone)]
pub enum KeySampler {
    Uniform(u64),
    Zipf(Zipf<f64>),
}

impl KeySampler {
    pub fn new(theta: f64, n: u64) -> Self {
        assert!(n >= 1, "empty key space");
        if theta == 0.0 || n == 1 {
            KeySampler::Uniform(n)
        } else {
            KeySampler::Zipf(Zipf::new(n, theta).expect("theta is non-negative"))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Key {
        match self {
            KeySampler::Uniform(n) => Key(rng.gen_range(0..*n)),
            KeySampler::Zipf(z) => Key(z.sample(rng) as u64 - 1),
        }
    }

    /// `count` distinct keys, by rejection.
    pub fn distinct<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Key> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let k = self.sample(rng);
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }
}

pub fn zipf_key<R: Rng + ?Sized>(theta: f64, key_space: u64, rng: &mut R) -> Key {
    KeySampler::new(theta, key_space).sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsVariant {
    Plain,
    Window,
    Nondet,
}

/// TP group of the contended transactions.
pub const TP_HOT_GROUP: u32 = 1;
pub const TP_COLD_GROUP: u32 = 2;

/// Event-at-a-time generator; knobs may change between calls.
pub struct Generator {
    kind: WorkloadKind,
    rng: ChaCha8Rng,
    next: u64,
}

impl Generator {
    pub fn new(kind: WorkloadKind, seed: u64) -> Self {
        Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next: 0,
        }
    }

    pub fn next_event(&mut self, k: &Knobs) -> Event {
        let i = self.next;
        self.next += 1;
        let (group, payload) = match self.kind {
            WorkloadKind::Sl => (0, self.sl(k)),
            WorkloadKind::Gs => (0, self.grep(k, KeySampler::new(k.theta, k.key_space), 0, k.abort_ratio)),
            WorkloadKind::GsWindow => {
                if (i as usize + 1) % k.trigger_period == 0 {
                    let keys = sample(&mut self.rng, k.key_space as usize, k.window_keys)
                        .into_iter()
                        .map(|x| Key(x as u64))
                        .collect();
                    (0, Payload::WindowSum {
                        keys,
                        range: k.window_size,
                    })
                } else {
                    (0, self.grep(k, KeySampler::new(k.theta, k.key_space), 0, k.abort_ratio))
                }
            }
            WorkloadKind::GsNondet => {
                if k.nondet_ratio > 0.0 && self.rng.gen_bool(k.nondet_ratio) {
                    let width = k.multi_access;
                    let candidates = KeySampler::new(k.theta, k.key_space).distinct(&mut self.rng, width + 2);
                    let pick = self.rng.gen_range(0..1_000_000);
                    let abort = self.rng.gen_bool(k.abort_ratio);
                    (0, Payload::NondetGrep {
                        candidates,
                        pick,
                        width,
                        abort,
                    })
                } else {
                    (0, self.grep(k, KeySampler::new(k.theta, k.key_space), 0, k.abort_ratio))
                }
            }
            WorkloadKind::Tp => {
                let half = k.key_space / 2;
                if self.rng.gen_bool(0.5) {
                    (TP_HOT_GROUP, self.grep(k, KeySampler::new(k.theta, half), 0, k.abort_ratio))
                } else {
                    let n = k.key_space - half;
                    (TP_COLD_GROUP, self.grep(k, KeySampler::Uniform(n), half, 0.0))
                }
            }
        };
        Event {
            event_id: i,
            ts: Timestamp(i + 1),
            arrival_index: i as usize,
            group,
            payload,
        }
    }

    fn sl(&mut self, k: &Knobs) -> Payload {
        let keys = KeySampler::new(k.theta, k.key_space);
        if self.rng.gen_bool(k.abort_ratio) {
            let ab = keys.distinct(&mut self.rng, 2);
            return Payload::Transfer {
                from: ab[0],
                to: ab[1],
                amount: SL_FAILING_AMOUNT,
            };
        }
        let amount = self.rng.gen_range(1..=100);
        if self.rng.gen_bool(k.transfer_ratio) {
            let ab = keys.distinct(&mut self.rng, 2);
            Payload::Transfer {
                from: ab[0],
                to: ab[1],
                amount,
            }
        } else {
            Payload::Deposit {
                account: keys.sample(&mut self.rng),
                amount,
            }
        }
    }

    fn grep(&mut self, k: &Knobs, keys: KeySampler, offset: u64, abort_ratio: f64) -> Payload {
        let flat = keys.distinct(&mut self.rng, k.txn_len * k.multi_access);
        let ops = flat
            .chunks(k.multi_access)
            .map(|c| c.iter().map(|x| Key(x.0 + offset)).collect())
            .collect();
        Payload::Grep {
            ops,
            abort: self.rng.gen_bool(abort_ratio),
        }
    }
}

pub fn gen(kind: WorkloadKind, knobs: &Knobs) -> Result<Vec<Event>, WorkloadError> {
    knobs.validate(kind)?;
    let mut g = Generator::new(kind, knobs.seed);
    Ok((0..knobs.events).map(|_| g.next_event(knobs)).collect())
}

pub fn gen_sl(knobs: &Knobs) -> Result<Vec<Event>, WorkloadError> {
    gen(WorkloadKind::Sl, knobs)
}

pub fn gen_gs(knobs: &Knobs, variant: GsVariant) -> Result<Vec<Event>, WorkloadError> {
    let kind = match variant {
        GsVariant::Plain => WorkloadKind::Gs,
        GsVariant::Window => WorkloadKind::GsWindow,
        GsVariant::Nondet => WorkloadKind::GsNondet,
    };
    gen(kind, knobs)
}

pub fn gen_tp(knobs: &Knobs) -> Result<Vec<Event>, WorkloadError> {
    gen(WorkloadKind::Tp, knobs)
}

/// Permutes arrival order so that no event moves more than `window`
/// positions. Timestamps are untouched.
pub fn shuffle_arrival<R: Rng + ?Sized>(mut events: Vec<Event>, window: usize, rng: &mut R) -> Vec<Event> {
    if window == 0 {
        return events;
    }
    // Sorting by i + U[0, w + 1) moves nothing further than w.
    let mut keyed: Vec<(f64, Event)> = events
        .drain(..)
        .enumerate()
        .map(|(i, e)| (i as f64 + rng.gen_range(0.0..(window + 1) as f64), e))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed
        .into_iter()
        .enumerate()
        .map(|(pos, (_, mut e))| {
            e.arrival_index = pos;
            e
        })
        .collect()
}

/// Shuffles each run of `interval` consecutive events on its own, so no event
/// crosses a batch boundary.
pub fn shuffle_within_batches<R: Rng + ?Sized>(events: Vec<Event>, interval: usize, window: usize, rng: &mut R) -> Vec<Event> {
    let mut out = Vec::with_capacity(events.len());
    let mut it = events.into_iter().peekable();
    while it.peek().is_some() {
        let chunk: Vec<Event> = it.by_ref().take(interval.max(1)).collect();
        let base = out.len();
        out.extend(shuffle_arrival(chunk, window, rng).into_iter().map(|mut e| {
            e.arrival_index += base;
            e
        }));
    }
    out
}
