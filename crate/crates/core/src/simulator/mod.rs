//! Deterministic simulation: scenarios, the event engine, workloads and
//! traces. Same scenario and seed give a byte-identical trace.

pub mod builtin;
pub mod engine;
pub mod fuzz;
pub mod scenario;
pub mod trace;
pub mod workload;

pub use engine::{run, Engine, RunResult};
pub use scenario::{Model, Scenario};
pub use trace::{count_delays, Record, Trace};
