pub mod banded;
pub mod boundary_data;
pub mod error;
pub mod field_solver;
pub mod geometry;
pub mod mechanics;
pub mod optimizer;
pub mod quadrature;
pub mod harness;

pub use boundary_data::{BoundaryData, FamilySpec, Model, PermittivityProfile, SigmaSpec};
pub use error::{MemsError, Result};
pub use field_solver::{solve_model, solve_robin, solve_transmission, PotentialField};
pub use geometry::{Deflection, DeviceConfig};
pub use harness::{run_delta_sweep, verify_inequalities, RunConfig};
pub use mechanics::{EnergyBreakdown, EnergyModel, GradientMode};
pub use optimizer::{minimize_total, MinimizeOptions, MinimizeResult, Termination};
