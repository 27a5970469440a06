//! Context-management engine for iterative ML/data pipelines.
//!
//! Captures log records, loop contexts, arguments, checkpoints, and
//! build/version lineage while pipelines run; answers pivoted tabular
//! queries over all history; and backfills metadata onto past versions via
//! hindsight replay with checkpoint memoization.

pub mod buildspec;
pub mod clock;
pub mod config;
pub mod error;
pub mod events;
pub mod project;
pub mod query;
pub mod replay;
pub mod runner;
pub mod store;
pub mod vcs;

pub use clock::{ClockMode, Timestamp};
pub use config::ProjectConfig;
pub use error::{FlorError, Result};
pub use project::Project;
