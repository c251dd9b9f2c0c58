//! Deterministic discrete-event model of CPU core isolation: tick silencing,
//! IPI suppression with virtual completion, RCU grace-period bookkeeping, and
//! shared-memory messaging, plus the measurement workloads that quantify what
//! isolation buys.
//!
//! Everything in the simulated half is driven by a virtual clock in integer
//! nanoseconds. Equal seeds and equal scenarios produce byte-identical traces.
//! The live half (`spsc`, `live_bench`) is the one deliberately concurrent
//! piece: a lock-free SPSC ring exercised by a two-thread round-trip bench.

pub mod collector;
pub mod engine;
pub mod event;
pub mod gpio;
pub mod ipi;
pub mod isolator;
pub mod live_bench;
pub mod noise;
pub mod rcu;
pub mod rng;
pub mod run;
pub mod scenario;
pub mod shmem;
pub mod spsc;
pub mod stats;
pub mod time;
pub mod timer;
pub mod trace;
pub mod workloads;

pub use engine::{FatalError, Sim, SimError};
pub use time::{CoreId, SimTime};
