//! Multi-versioned shared state table.
//!
//! Every key owns a chain of versions sorted by timestamp. The first version
//! is the snapshot left by the previous batch at `ts = 0`. Operations append
//! versions at their transaction timestamp, and aborts truncate the chain.
//!
//! Visibility is strict: a reader at `t` sees the version with the largest
//! timestamp below `t`. Window reads return every version inside
//! `[trigger - range, trigger)`.

use std::cell::Cell;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use parking_lot::RwLock;

use crate::error::StateError;
use crate::types::{Key, OpId, Timestamp, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Version {
    pub ts: Timestamp,
    pub value: Value,
    /// `None` for the snapshot version.
    pub writer: Option<OpId>,
}

thread_local! {
    static LOCK_WAIT: Cell<Duration> = const { Cell::new(Duration::ZERO) };
}

/// Returns and resets the time this thread spent blocked on chain locks.
pub fn take_lock_wait() -> Duration {
    LOCK_WAIT.with(|c| c.replace(Duration::ZERO))
}

fn charge_wait(start: Instant) {
    let d = start.elapsed();
    LOCK_WAIT.with(|c| c.set(c.get() + d));
}

#[derive(Debug)]
pub struct VersionedStateTable {
    chains: Vec<RwLock<Vec<Version>>>,
    in_batch: AtomicBool,
}

impl VersionedStateTable {
    /// Preallocates `keys` chains, each holding `initial` as its snapshot.
    pub fn new(keys: u64, initial: Value) -> Result<Self, StateError> {
        Self::from_values(vec![initial; keys as usize])
    }

    pub fn from_values(values: Vec<Value>) -> Result<Self, StateError> {
        if values.is_empty() {
            return Err(StateError::EmptyTable);
        }
        let chains = values.into_iter().map(|v| RwLock::new(vec![snapshot(v)])).collect();
        Ok(Self {
            chains,
            in_batch: AtomicBool::new(false),
        })
    }

    /// Grows the table to `keys` chains. Existing chains are untouched.
    pub fn expand(&mut self, keys: u64, initial: Value) {
        while (self.chains.len() as u64) < keys {
            self.chains.push(RwLock::new(vec![snapshot(initial)]));
        }
    }

    pub fn key_count(&self) -> u64 {
        self.chains.len() as u64
    }

    fn chain(&self, key: Key) -> Result<&RwLock<Vec<Version>>, StateError> {
        self.chains.get(key.index()).ok_or(StateError::UnknownKey(key))
    }

    fn read_chain(&self, key: Key) -> Result<parking_lot::RwLockReadGuard<'_, Vec<Version>>, StateError> {
        let lock = self.chain(key)?;
        if let Some(g) = lock.try_read() {
            return Ok(g);
        }
        let start = Instant::now();
        let g = lock.read();
        charge_wait(start);
        Ok(g)
    }

    fn write_chain(&self, key: Key) -> Result<parking_lot::RwLockWriteGuard<'_, Vec<Version>>, StateError> {
        let lock = self.chain(key)?;
        if let Some(g) = lock.try_write() {
            return Ok(g);
        }
        let start = Instant::now();
        let g = lock.write();
        charge_wait(start);
        Ok(g)
    }

    /// Value visible to a reader at `reader_ts`.
    pub fn read_version(&self, key: Key, reader_ts: Timestamp) -> Result<Value, StateError> {
        self.read_visible(key, reader_ts).map(|v| v.value)
    }

    /// Version visible to a reader at `reader_ts`: the largest `ts < reader_ts`,
    /// or the snapshot when the reader sits at ts 0.
    pub fn read_visible(&self, key: Key, reader_ts: Timestamp) -> Result<Version, StateError> {
        let chain = self.read_chain(key)?;
        let idx = chain.partition_point(|v| v.ts < reader_ts);
        Ok(chain[idx.saturating_sub(1)])
    }

    pub fn write_version(&self, key: Key, ts: Timestamp, value: Value, writer: OpId) -> Result<(), StateError> {
        let mut chain = self.write_chain(key)?;
        let idx = chain.partition_point(|v| v.ts < ts);
        if chain.get(idx).is_some_and(|v| v.ts == ts) || ts == Timestamp::SNAPSHOT {
            return Err(StateError::DuplicateVersion { key, ts });
        }
        chain.insert(
            idx,
            Version {
                ts,
                value,
                writer: Some(writer),
            },
        );
        debug_assert!(chain.windows(2).all(|w| w[0].ts < w[1].ts));
        Ok(())
    }

    /// Removes every version with `ts >= aborted_ts` and returns them in
    /// ascending order.
    pub fn truncate_after(&self, key: Key, aborted_ts: Timestamp) -> Result<Vec<Version>, StateError> {
        if aborted_ts == Timestamp::SNAPSHOT {
            return Err(StateError::SnapshotTruncation);
        }
        let mut chain = self.write_chain(key)?;
        let idx = chain.partition_point(|v| v.ts < aborted_ts).max(1);
        Ok(chain.split_off(idx))
    }

    /// Versions of each key inside `[trigger - range, trigger)`.
    pub fn window_read(&self, keys: &[Key], trigger: Timestamp, range: u64) -> Result<Vec<Vec<Version>>, StateError> {
        if range == 0 {
            return Err(StateError::EmptyRange);
        }
        let lo = trigger.saturating_sub(range);
        keys.iter()
            .map(|&k| {
                let chain = self.read_chain(k)?;
                let a = chain.partition_point(|v| v.ts < lo);
                let b = chain.partition_point(|v| v.ts < trigger);
                Ok(chain[a..b.max(a)].to_vec())
            })
            .collect()
    }

    pub fn begin_batch(&self) {
        self.in_batch.store(true, Ordering::Release);
    }

    pub fn end_batch(&self) {
        self.in_batch.store(false, Ordering::Release);
    }

    /// Collapses every chain into a fresh snapshot holding its latest value.
    pub fn gc_batch(&self) -> Result<(), StateError> {
        if self.in_batch.load(Ordering::Acquire) {
            return Err(StateError::BatchInFlight);
        }
        for lock in &self.chains {
            let mut chain = lock.write();
            let last = chain.last().expect("chains are never empty").value;
            chain.clear();
            chain.push(snapshot(last));
        }
        Ok(())
    }

    /// Copy of one chain.
    pub fn versions(&self, key: Key) -> Result<Vec<Version>, StateError> {
        Ok(self.read_chain(key)?.clone())
    }

    /// Latest value of every key.
    pub fn latest_values(&self) -> Vec<Value> {
        self.chains
            .iter()
            .map(|c| c.read().last().expect("chains are never empty").value)
            .collect()
    }

    /// One line per key: `key ts:value ts:value ...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, lock) in self.chains.iter().enumerate() {
            let chain = lock.read();
            let _ = write!(out, "{k}");
            for v in chain.iter() {
                let _ = write!(out, " {}:{}", v.ts.0, v.value);
            }
            out.push('\n');
        }
        out
    }
}

fn snapshot(value: Value) -> Version {
    Version {
        ts: Timestamp::SNAPSHOT,
        value,
        writer: None,
    }
}
