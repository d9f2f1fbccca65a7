//! Numerical laboratory for randomly kicked Hamilton–Jacobi / Burgers
//! dynamics in one space dimension.

pub mod airy;
pub mod coalescing;
pub mod error;
pub mod estimators;
pub mod export;
pub mod forcing;
pub mod geometry;
pub mod grid;
pub mod hamiltonian;
pub mod inviscid;
pub mod polymer;
pub mod renorm;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod viscous;

pub use error::{Error, Result};
pub use forcing::{make_shear_pair, PotentialField, Synthesis};
pub use grid::Grid;
pub use hamiltonian::HamiltonianSpec;
pub use inviscid::{MinimiserPath, ShockRecord, SolutionField};
pub use viscous::{PartitionField, ViscousConfig};
pub use geometry::{PointFieldStats, StripConfig};
pub use renorm::{StripStack, SweepMode};
pub use coalescing::{CoalescingRun, SkewMatrix};
pub use airy::{RenormConstants, StationaryFieldEnsemble};
pub use estimators::{ExponentEstimate, ShapeFunctionEstimate};
