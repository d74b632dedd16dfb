//! User admission control for topological interference management.
//!
//! The crate finds the largest set of users whose interference-alignment
//! conditions are simultaneously satisfiable at a given number of channel uses
//! `r`. Everything is driven by a trust-region optimizer on the quotient
//! manifold of rank-`r` matrices `X = U V^T`:
//!
//! 1. [`admission::induce_sparsity`] minimizes a smoothed, regularized l1 cost
//!    whose diagonal ranks users by priority;
//! 2. [`admission::bisection_admit`] searches the longest feasible prefix of
//!    that ranking with masked low-rank completion as the feasibility test;
//! 3. [`admission::design_transceivers`] completes the alignment matrix of the
//!    admitted users, yielding decoders (rows of `U`) and precoders (rows of `V`).
//!
//! [`admission::exhaustive_oracle`] and [`admission::orthogonal_baseline`]
//! bracket the result from above and below.

pub mod admission;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod manifold;
pub mod objectives;
pub mod report;
pub mod seeding;
pub mod topology_io;
pub mod trust_region;

pub use admission::{AdmissionConfig, AdmissionResult, SearchMode};
pub use error::{Error, Result};
pub use manifold::{FactoredPoint, LocalGeometry, ManifoldShape, TangentVector};
pub use objectives::{CompletionCost, NetworkTopology, ObservationMask, SmoothedL1Params, SparsityCost};
pub use trust_region::{minimize, CostProblem, SolveReport, Termination, TrustRegionConfig};
