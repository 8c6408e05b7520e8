use super::bnb::{solve_milp_with, MilpSolution, SolveOptions};
use super::model::MilpProblem;
use crate::scalar::Scalar;

/// Anything that can solve a [`MilpProblem`]; the built-in branch-and-bound is the default.
pub trait MilpSolver<T: Scalar>: Send + Sync {
    fn solve(&self, problem: &MilpProblem<T>, opts: &SolveOptions<T>) -> MilpSolution<T>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BranchAndBound;

impl<T: Scalar> MilpSolver<T> for BranchAndBound {
    fn solve(&self, problem: &MilpProblem<T>, opts: &SolveOptions<T>) -> MilpSolution<T> {
        solve_milp_with(problem, opts)
    }
}
