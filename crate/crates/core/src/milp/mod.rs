//! Small MILP toolkit: model types, simplex, branch-and-bound and LP export.

pub mod bnb;
pub mod lp_format;
mod lu;
pub mod model;
pub mod revised;
pub mod simplex;
pub mod solver;

pub use bnb::{solve_lp_relaxation, solve_milp, solve_milp_with, Budget, MilpSolution, SolveOptions, SolveStatus};
pub use lp_format::export_lp_text;
pub use model::{
    build_problem, LinearConstraint, LinearExpr, MilpProblem, ModelBuilder, ModelError, Sense, VarId, VarKind,
    VariableDef,
};
pub use simplex::{solve_lp, LpResult, LpStatus};
pub use solver::{BranchAndBound, MilpSolver};
