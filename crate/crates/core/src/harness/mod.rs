//! Configuration, sweeps, inequality audits and their file formats.

pub mod audit;
pub mod config;
pub mod export;
pub mod sweep;

pub use audit::{verify_inequalities, AuditProfile, AuditReport, AuditRow, ConstantsLedger};
pub use config::{ComparisonGrid, GrowthConfig, RunConfig, Setup};
pub use sweep::{run_delta_sweep, SweepReport, SweepRow};
