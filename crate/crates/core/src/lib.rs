//! Cross-domain regulatory state synchronization.
//!
//! The crate is layered bottom-up:
//!
//! * [`machine`]: finite deterministic partial state machines with terminal
//!   states, plus a validator for their structural assumptions.
//! * [`preservation`]: structure-preserving maps between machines, roundtrip
//!   maps, and the generic N-domain `sync_all` layer with exhaustive checkers.
//! * [`regulatory`]: the concrete five-state / seven-action regulatory machine.
//! * [`engine`]: the concrete global state and the atomic
//!   lock / validate / update / unlock sync protocol.
//! * [`priority`]: the lexicographic priority key and unique-maximum selection.
//! * [`liveness`]: timeout locks, BFT configuration, leader schedules and the
//!   epoch simulator.
//! * [`modelcheck`]: bounded exhaustive exploration of the engine.
//! * [`scenario`]: the JSON scenario format consumed by the CLI.

pub mod engine;
pub mod ids;
pub mod liveness;
pub mod machine;
pub mod modelcheck;
pub mod preservation;
pub mod priority;
pub mod regulatory;
pub mod report;
pub mod scenario;

pub use engine::{sync, GlobalState, SyncFailure, SyncResult};
pub use ids::{AssetKey, ChainId};
pub use machine::{ActionId, StateId, StateMachineSpec};
pub use regulatory::{RegAction, RegState};
pub use report::{ValidationReport, Violation};

/// Default cap on the number of enumerated steps for exhaustive checks.
pub const DEFAULT_BUDGET: u64 = 20_000_000;

/// An exhaustive enumeration would exceed the configured budget.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("enumeration budget exceeded: {required} steps required, budget is {budget}")]
pub struct BudgetExceeded {
    pub required: u64,
    pub budget: u64,
}
