//! Benchmark driver: runs workloads on the engine, checks them against a
//! serial reference execution and reports metrics.

pub mod bench;
pub mod oracle;
pub mod report;
pub mod verify;

pub use bench::{run_benchmark, run_events, BenchError, Metrics, RunConfig, RunOutcome, WorkloadSpec};
pub use oracle::{serial_oracle, OracleResult};
pub use report::{emit_report, Format, Report};
pub use verify::{verify, EngineResult, VerifyReport};
