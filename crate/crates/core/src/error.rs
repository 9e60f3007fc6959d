use thiserror::Error;

use crate::types::{Key, OpId, Timestamp};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoreError {
    #[error("function {0:?} is already registered")]
    DuplicateFunction(String),
    #[error("unknown function id {0}")]
    UnknownFunction(u32),
    #[error("function {id} has kind {actual:?}, expected {expected:?}")]
    WrongFunctionKind {
        id: u32,
        expected: crate::types::FunctionKind,
        actual: crate::types::FunctionKind,
    },
    #[error("invalid operation {0}: {1}")]
    InvalidOperation(OpId, &'static str),
    #[error("transaction at ts {0} has no operations")]
    EmptyTransaction(Timestamp),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("state table needs at least one key")]
    EmptyTable,
    #[error("unknown key {0}")]
    UnknownKey(Key),
    #[error("key {key} already has a version at ts {ts}")]
    DuplicateVersion { key: Key, ts: Timestamp },
    #[error("the snapshot version (ts 0) cannot be truncated")]
    SnapshotTruncation,
    #[error("window range must be positive")]
    EmptyRange,
    #[error("garbage collection requested while a batch is in flight")]
    BatchInFlight,
}
