//! Grid/particle incompressible fluid simulation in which every particle is
//! constrained to a grid cell and per-cell particle counts are enforced
//! exactly by a small integer program solved as a min-cost flow.

pub mod band;
pub mod correction;
pub mod error;
pub mod flip;
pub mod grid;
pub mod instances;
pub mod output;
pub mod particles;
pub mod scene;
pub mod sim;
pub mod solids;
pub mod solvers;

pub use correction::{Assignment, CorrectionProblem};
pub use error::{Error, Result};
pub use grid::{CellGrid, CellIndex, Dims, Marking, NeighborhoodKind, VolumeReport};
pub use particles::{ParticleSet, Vec3};
