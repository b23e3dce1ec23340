//! Projected block coordinate descent over polyhedra, together with the
//! asymptotic rate matrices of the cyclic, synchronous and randomized maps.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod objectives;
pub mod polytope;
pub mod projection;
pub mod rates;
pub mod saa;
pub mod solvers;

pub use error::{Error, Result};
pub use objectives::{Objective, ObjectiveModel, QuadraticObjective};
pub use polytope::{ActiveSet, BlockStructure, Polyhedron, ReducedBasis};
pub use projection::ScalingMatrix;
pub use rates::{RateKind, RateReport, ReducedModel};
pub use solvers::{IterateTrace, Scaling, SolverConfig, StepRule, Variant};
