//! Best-bound branch-and-bound over the binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::model::{MilpProblem, VarKind};
use super::revised::Simplex;
use super::simplex::{LpStatus, StandardForm};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Node or time limit hit; `values` hold the best incumbent if any.
    BudgetExceeded,
}

#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub max_nodes: usize,
    pub time_limit: Option<Duration>,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_nodes: 200_000,
            time_limit: None,
        }
    }
}

impl Budget {
    pub fn nodes(max_nodes: usize) -> Self {
        Budget {
            max_nodes,
            time_limit: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions<T> {
    pub budget: Budget,
    /// Nodes whose bound is not below the incumbent by more than this are pruned.
    pub gap_abs: T,
    /// Optional starting incumbent; kept unless something strictly better turns up.
    pub incumbent: Option<Vec<T>>,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            budget: Budget::default(),
            gap_abs: T::lit(1e-9),
            incumbent: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MilpSolution<T> {
    pub status: SolveStatus,
    pub values: Vec<T>,
    pub objective: T,
    /// Proven lower bound on the optimum.
    pub bound: T,
    pub nodes: usize,
    pub pivots: usize,
    /// True when the returned point is the caller's starting incumbent.
    pub kept_incumbent: bool,
}

impl<T: Scalar> MilpSolution<T> {
    pub fn has_solution(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, v: super::model::VarId) -> T {
        self.values[v.0]
    }
}

struct Node<T> {
    bound: T,
    id: u64,
    fixes: Vec<(usize, T)>,
}

impl<T: Scalar> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Node<T> {}
impl<T: Scalar> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Node<T> {
    // max-heap: smallest bound first, then the newest node so equal bounds dive
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.id.cmp(&other.id))
    }
}

fn most_fractional<T: Scalar>(values: &[T], binaries: &[usize]) -> Option<usize> {
    let mut best = None;
    let mut best_frac = T::int_tol();
    for &j in binaries {
        let x = values[j];
        let frac = (x - x.floor()).min(x.ceil() - x);
        if frac > best_frac {
            best_frac = frac;
            best = Some(j);
        }
    }
    best
}

pub fn solve_milp<T: Scalar>(p: &MilpProblem<T>, budget: &Budget) -> MilpSolution<T> {
    let opts = SolveOptions {
        budget: *budget,
        ..SolveOptions::default()
    };
    solve_milp_with(p, &opts)
}

pub fn solve_milp_with<T: Scalar>(p: &MilpProblem<T>, opts: &SolveOptions<T>) -> MilpSolution<T> {
    let start = Instant::now();
    let sf = StandardForm::from_problem(p);
    let binaries: Vec<usize> = p
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .filter_map(|(j, _)| sf.column(j))
        .collect();
    let mut pivots = 0usize;

    let mut inc_values: Option<Vec<T>> = None;
    let mut inc_obj = T::infinity();
    let mut kept = false;
    if let Some(start_vals) = &opts.incumbent {
        if p.is_feasible(start_vals, T::feas_tol()) {
            inc_obj = p.objective.eval(start_vals);
            inc_values = Some(start_vals.clone());
            kept = true;
        } else {
            log::debug!("starting incumbent rejected as infeasible");
        }
    }

    let (st, root) = Simplex::solve_cold(&sf, &sf.lo, &sf.hi);
    let mut nodes = 1usize;
    let mut cur = match (st, root) {
        (LpStatus::Optimal, Some(t)) => t,
        (LpStatus::Unbounded, _) => {
            return finish(p, &sf, SolveStatus::Unbounded, inc_values, inc_obj, T::neg_infinity(), nodes, pivots, kept);
        }
        (LpStatus::Infeasible, _) => {
            let status = if inc_values.is_some() { SolveStatus::Optimal } else { SolveStatus::Infeasible };
            return finish(p, &sf, status, inc_values, inc_obj, inc_obj, nodes, pivots, kept);
        }
        _ => {
            return finish(p, &sf, SolveStatus::BudgetExceeded, inc_values, inc_obj, T::neg_infinity(), nodes, pivots, kept);
        }
    };
    pivots += cur.pivots;

    // one tableau walks the whole tree: moving to a node only changes binary
    // bounds, which keeps the basis dual feasible
    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    let mut fixes: Vec<(usize, T)> = Vec::new();
    let mut solved = true;
    let mut global_bound = cur.objective(&sf);
    let mut exhausted_budget = false;

    loop {
        if !solved {
            let Some(node) = heap.pop() else { break };
            let node: Node<T> = node;
            if node.bound >= inc_obj - opts.gap_abs {
                continue;
            }
            if nodes >= opts.budget.max_nodes || opts.budget.time_limit.is_some_and(|tl| start.elapsed() >= tl) {
                global_bound = node.bound;
                exhausted_budget = true;
                break;
            }
            nodes += 1;
            fixes = node.fixes;
            let (lo, hi) = node_bounds(&sf, &fixes);
            let before = cur.pivots;
            for &j in &binaries {
                if cur.bounds(j) != (lo[j], hi[j]) {
                    cur.set_bounds_dual(j, lo[j], hi[j]);
                }
            }
            match cur.reoptimize() {
                LpStatus::Optimal => pivots += cur.pivots - before,
                LpStatus::Infeasible => {
                    pivots += cur.pivots - before;
                    continue;
                }
                _ => match Simplex::solve_cold(&sf, &lo, &hi) {
                    (LpStatus::Optimal, Some(t)) => {
                        pivots += t.pivots;
                        cur = t;
                    }
                    _ => continue,
                },
            }
        }
        solved = false;
        let obj = cur.objective(&sf);
        if obj >= inc_obj - opts.gap_abs {
            continue;
        }
        let values = cur.values();
        match most_fractional(&values, &binaries) {
            None => {
                inc_obj = obj;
                inc_values = Some(sf.expand(&values));
                kept = false;
            }
            Some(j) => {
                // explore the side the relaxation leans towards first
                let order = if values[j] >= T::lit(0.5) { [T::one(), T::zero()] } else { [T::zero(), T::one()] };
                for v in order {
                    if v < sf.lo[j] || v > sf.hi[j] {
                        continue;
                    }
                    let mut f = fixes.clone();
                    f.push((j, v));
                    heap.push(Node {
                        bound: obj,
                        id: next_id,
                        fixes: f,
                    });
                    next_id += 1;
                }
            }
        }
    }

    if exhausted_budget {
        let lb = heap
            .iter()
            .map(|n| n.bound)
            .fold(global_bound, |a, b| a.min(b))
            .min(inc_obj);
        return finish(p, &sf, SolveStatus::BudgetExceeded, inc_values, inc_obj, lb, nodes, pivots, kept);
    }
    match inc_values {
        Some(v) => finish(p, &sf, SolveStatus::Optimal, Some(v), inc_obj, inc_obj, nodes, pivots, kept),
        None => finish(p, &sf, SolveStatus::Infeasible, None, inc_obj, T::infinity(), nodes, pivots, kept),
    }
}

fn node_bounds<T: Scalar>(sf: &StandardForm<T>, fixes: &[(usize, T)]) -> (Vec<T>, Vec<T>) {
    let mut lo = sf.lo.clone();
    let mut hi = sf.hi.clone();
    for &(j, v) in fixes {
        lo[j] = v;
        hi[j] = v;
    }
    (lo, hi)
}

/// Rounds binaries of the chosen point and re-solves the continuous part
/// so that every returned value sits exactly on an integral configuration.
#[allow(clippy::too_many_arguments)]
fn finish<T: Scalar>(
    p: &MilpProblem<T>,
    sf: &StandardForm<T>,
    status: SolveStatus,
    values: Option<Vec<T>>,
    objective: T,
    bound: T,
    nodes: usize,
    pivots: usize,
    kept: bool,
) -> MilpSolution<T> {
    let Some(mut values) = values else {
        return MilpSolution {
            status,
            values: Vec::new(),
            objective: T::nan(),
            bound,
            nodes,
            pivots,
            kept_incumbent: false,
        };
    };
    let mut objective = objective;
    if !kept {
        let fixes: Vec<(usize, T)> = p
            .binaries()
            .filter_map(|b| sf.column(b.0).map(|c| (c, values[b.0].round())))
            .collect();
        let (lo, hi) = node_bounds(sf, &fixes);
        if let (LpStatus::Optimal, Some(t)) = Simplex::solve_cold(sf, &lo, &hi) {
            let polished = sf.expand(&t.values());
            let obj = t.objective(sf);
            if obj <= objective + T::feas_tol() {
                values = polished;
                objective = obj;
            }
        } else {
            for b in p.binaries() {
                values[b.0] = values[b.0].round();
            }
            objective = p.objective.eval(&values);
        }
    }
    MilpSolution {
        status,
        values,
        objective,
        bound: bound.min(objective),
        nodes,
        pivots,
        kept_incumbent: kept,
    }
}

/// LP relaxation reported in the same shape as a MILP solve.
pub fn solve_lp_relaxation<T: Scalar>(p: &MilpProblem<T>) -> MilpSolution<T> {
    let r = super::simplex::solve_lp(p);
    let status = match r.status {
        LpStatus::Optimal => SolveStatus::Optimal,
        LpStatus::Infeasible => SolveStatus::Infeasible,
        LpStatus::Unbounded => SolveStatus::Unbounded,
        LpStatus::IterationLimit => SolveStatus::BudgetExceeded,
    };
    MilpSolution {
        status,
        bound: r.objective,
        objective: r.objective,
        values: r.values,
        nodes: 1,
        pivots: 0,
        kept_incumbent: false,
    }
}
