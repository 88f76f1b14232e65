//! Parallel explicit model predictive control.
//!
//! The online controller alternates between evaluating pre-computed
//! piecewise-affine solution maps of small stage QPs and one factorized
//! equality-constrained tracking solve. Offline tools build the maps,
//! certify stability and feasibility constants, and simulate closed loops.

pub mod certify;
pub mod controller;
pub mod coupled;
pub mod error;
pub mod linalg;
pub mod lp;
pub mod mpqp;
pub mod polytope;
pub mod problem;
pub mod qp;
pub mod riccati;
pub mod selftest;
pub mod simulate;
pub mod stacked;
pub mod store;

pub use certify::{CertificateReport, CertifyOptions};
pub use controller::{Controller, ControllerConfig, IterateState, StepDiagnostics};
pub use coupled::{CoupledFactorization, TrackingWorkspace};
pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use mpqp::{CriticalRegion, ParametricQp, PwaSolutionMap, SearchTree};
pub use polytope::Polyhedron;
pub use problem::{InterconnectedSpec, MpcProblem, ValidationReport, Weights};
pub use qp::{DenseQp, QpSolution};
pub use simulate::{Trajectory, TrajectoryRecord};
pub use stacked::{AlgebraicPlacement, StackedProblem};
pub use store::{MapStore, StageMaps};
