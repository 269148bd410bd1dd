//! Forward and inverse acoustic scattering by rough obstacles with an
//! impedance boundary condition `∂u/∂ν + iλu = 0` (ν pointing into the
//! obstacle).
//!
//! The crate covers the whole pipeline: wave functions, boundary
//! discretizations (smooth curves, Lipschitz star polygons, spheres), modal
//! and Nyström forward solvers, far-field patterns and their continuation
//! back to the near field, boundary Sobolev norms, pointwise impedance
//! recovery, and numerical probes of the stability estimates that govern the
//! inverse problem.

pub mod error;
pub mod farfield;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod norms;
pub mod probes;
pub mod reconstruction;
pub mod special;

mod linalg;

pub use error::{Error, Result};
pub use farfield::{alpha_of, compute_far_field, far_to_near, Directions, FarFieldPattern};
pub use forward::{
    evaluate_field, solve, solve_modal, solve_nystrom_2d, BoundaryTrace, ExteriorRepresentation,
    ImpedanceField, IncidentWave, Solution,
};
pub use geometry::{boundary_patch, build_geometry, BoundaryGeometry, BoundaryPatch, GeometrySpec};
pub use norms::{interpolation_check, sobolev_norm, BoundaryFunction};
pub use reconstruction::{
    eta, eta_eta, impedance_from_trace, reconstruct_from_farfield, weighted_interpolation_bound,
    ImpedanceEstimate,
};
pub use probes::{ProbeReport, SweepRecord};
pub use io::{RunConfig, Metadata};

pub use num_complex::Complex64;
