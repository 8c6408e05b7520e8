//! Hierarchical transit signal priority and bus speed control testbed.

pub mod bus;
pub mod controller;
pub mod corridor;
pub mod eval;
pub mod lower;
pub mod milp;
pub mod scalar;
pub mod signal;
pub mod sim;
pub mod upper;

#[cfg(test)]
pub(crate) mod testutil;

pub use scalar::Scalar;

pub type Problem = milp::MilpProblem<f64>;
pub type Solution = milp::MilpSolution<f64>;
pub type Constraint = milp::LinearConstraint<f64>;
pub type Builder = milp::ModelBuilder<f64>;
