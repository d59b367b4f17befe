//! Numerical laboratory for mean-field bounds on lattice two-point functions.
//!
//! The crate computes lattice Green functions, effective random walks and exact or
//! Monte Carlo two-point functions of several lattice models, and checks the
//! differential and finite-difference inequalities that drive mean-field behaviour.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conv;
pub mod exact;
pub mod green;
pub mod interval;
pub mod kernels;
pub mod lattice;
pub mod numeric;
pub mod observables;
pub mod orbit;
pub mod percolation;
pub mod report;
pub mod rng;
pub mod rw;
pub mod saw;
pub mod ising;
pub mod trees;
pub mod verifier;

pub use interval::Interval;
pub use kernels::{AdmissibleKernel, KernelSpec};
pub use lattice::{LatticeBox, LatticeField, Point};
pub use report::InequalityReport;
