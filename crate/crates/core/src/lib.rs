//! Transactional stream processing engine: planning, scheduling and
//! execution of state transactions over a multi-versioned state table.

pub mod error;
pub mod executor;
pub mod planner;
pub mod runtime;
pub mod scheduler;
pub mod state;
pub mod types;
pub mod udf;

pub use error::{CoreError, StateError};
pub use types::*;
