//! LP presolve into a reduced row form, and the LP relaxation entry point.

use super::model::{MilpProblem, Sense, VarKind};
use super::revised::Simplex;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Rows longer than this are never used to eliminate a free variable.
const SUBST_MAX_TERMS: usize = 8;

/// A free variable eliminated through an equality row: `coef·x + Σ terms = rhs`.
#[derive(Debug, Clone)]
struct Substitution<T> {
    var: usize,
    coef: T,
    rhs: T,
    terms: Vec<(usize, T)>,
}

/// Presolved problem in row form with slack columns implied, shared by every node.
///
/// Fixed columns are dropped and free continuous variables that sit in short
/// equality rows are substituted out. Column indices below are reduced ones;
/// `expand` maps a reduced point back onto the original variables.
#[derive(Debug, Clone)]
pub struct StandardForm<T> {
    pub nv: usize,
    pub(super) rows: Vec<Vec<(usize, T)>>,
    pub(super) rhs: Vec<T>,
    pub(super) slack_lo: Vec<T>,
    pub(super) slack_hi: Vec<T>,
    pub(super) cost: Vec<T>,
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    pub obj_const: T,
    /// A row became empty or a bound pair crossed during presolve.
    pub trivially_infeasible: bool,
    /// Reduced column → original variable.
    pub cols: Vec<usize>,
    col_of: Vec<Option<usize>>,
    fixed: Vec<T>,
    subs: Vec<Substitution<T>>,
}

struct Row<T> {
    terms: Vec<(usize, T)>,
    sense: Sense,
    rhs: T,
}

fn axpy_terms<T: Scalar>(into: &mut Vec<(usize, T)>, f: T, from: &[(usize, T)], skip: usize) {
    for &(k, a) in from {
        if k == skip {
            continue;
        }
        match into.iter_mut().find(|(j, _)| *j == k) {
            Some(e) => e.1 += f * a,
            None => into.push((k, f * a)),
        }
    }
    into.retain(|(_, a)| a.abs() > T::drop_tol());
}

impl<T: Scalar> StandardForm<T> {
    pub fn from_problem(p: &MilpProblem<T>) -> Self {
        let n = p.vars.len();
        let tol = T::feas_tol();
        let binary: Vec<bool> = p.vars.iter().map(|v| v.kind == VarKind::Binary).collect();
        let mut lo: Vec<T> = p.vars.iter().map(|v| v.lower).collect();
        let mut hi: Vec<T> = p.vars.iter().map(|v| v.upper).collect();
        let mut cost = vec![T::zero(); n];
        for &(v, a) in &p.objective.terms {
            cost[v.0] += a;
        }
        let mut obj_const = p.objective.constant;
        let mut rows: Vec<Option<Row<T>>> = p
            .constraints
            .iter()
            .map(|c| {
                Some(Row {
                    terms: c.terms.iter().map(|&(v, a)| (v.0, a)).collect(),
                    sense: c.sense,
                    rhs: c.rhs,
                })
            })
            .collect();
        let mut occurs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for &(j, _) in &row.as_ref().unwrap().terms {
                occurs[j].push(r);
            }
        }
        let mut gone = vec![false; n];
        let mut subs = Vec::new();
        let mut bad = false;

        let round_binary = |j: usize, lo: &mut [T], hi: &mut [T]| {
            if binary[j] {
                lo[j] = (lo[j] - tol).ceil();
                hi[j] = (hi[j] + tol).floor();
            }
        };
        for j in 0..n {
            round_binary(j, &mut lo, &mut hi);
        }

        let mut changed = true;
        while changed && !bad {
            changed = false;
            for r in 0..rows.len() {
                let Some(row) = rows[r].as_mut() else { continue };
                // fold fixed columns into the right-hand side
                let mut k = 0;
                while k < row.terms.len() {
                    let (j, a) = row.terms[k];
                    if lo[j] == hi[j] {
                        row.rhs -= a * lo[j];
                        row.terms.swap_remove(k);
                    } else {
                        k += 1;
                    }
                }
                match row.terms.len() {
                    0 => {
                        let ok = match row.sense {
                            Sense::Le => T::zero() <= row.rhs + tol,
                            Sense::Ge => T::zero() >= row.rhs - tol,
                            Sense::Eq => row.rhs.abs() <= tol,
                        };
                        bad |= !ok;
                        rows[r] = None;
                    }
                    1 => {
                        let (j, a) = row.terms[0];
                        let bound = row.rhs / a;
                        let (upper, lower) = match (row.sense, a > T::zero()) {
                            (Sense::Eq, _) => (true, true),
                            (Sense::Le, true) | (Sense::Ge, false) => (true, false),
                            _ => (false, true),
                        };
                        if upper {
                            hi[j] = hi[j].min(bound);
                        }
                        if lower {
                            lo[j] = lo[j].max(bound);
                        }
                        round_binary(j, &mut lo, &mut hi);
                        if lo[j] > hi[j] {
                            if lo[j] - hi[j] <= tol {
                                let mid = (lo[j] + hi[j]) / T::lit(2.0);
                                lo[j] = mid;
                                hi[j] = mid;
                            } else {
                                bad = true;
                            }
                        }
                        rows[r] = None;
                        changed = true;
                    }
                    _ => {}
                }
            }
            if bad {
                break;
            }
            // eliminate free continuous columns through short equality rows
            for r in 0..rows.len() {
                let Some(row) = rows[r].as_ref() else { continue };
                if row.sense != Sense::Eq || row.terms.len() > SUBST_MAX_TERMS {
                    continue;
                }
                let amax = row.terms.iter().fold(T::zero(), |m, t| m.max(t.1.abs()));
                let pick = row
                    .terms
                    .iter()
                    .filter(|&&(j, a)| {
                        !binary[j] && !lo[j].is_finite() && !hi[j].is_finite() && a.abs() >= T::lit(0.1) * amax
                    })
                    .min_by_key(|&&(j, _)| occurs[j].len())
                    .copied();
                let Some((x, ax)) = pick else { continue };
                let row = rows[r].take().unwrap();
                for &o in &occurs[x] {
                    if o == r {
                        continue;
                    }
                    let Some(other) = rows[o].as_mut() else { continue };
                    let Some(pos) = other.terms.iter().position(|t| t.0 == x) else { continue };
                    let c = other.terms[pos].1;
                    let f = -c / ax;
                    other.terms.swap_remove(pos);
                    axpy_terms(&mut other.terms, f, &row.terms, x);
                    other.rhs += f * row.rhs;
                }
                let cx = cost[x];
                if cx != T::zero() {
                    obj_const += cx * row.rhs / ax;
                    for &(k, a) in &row.terms {
                        if k != x {
                            cost[k] -= cx * a / ax;
                        }
                    }
                    cost[x] = T::zero();
                }
                let others: Vec<usize> = occurs[x].clone();
                for &(k, _) in &row.terms {
                    if k != x {
                        for &o in &others {
                            if o != r && rows[o].is_some() && !occurs[k].contains(&o) {
                                occurs[k].push(o);
                            }
                        }
                    }
                }
                gone[x] = true;
                subs.push(Substitution {
                    var: x,
                    coef: ax,
                    rhs: row.rhs,
                    terms: row.terms.into_iter().filter(|t| t.0 != x).collect(),
                });
                changed = true;
            }
        }

        let mut cols = Vec::new();
        let mut col_of = vec![None; n];
        let mut fixed = vec![T::zero(); n];
        for j in 0..n {
            if gone[j] {
                continue;
            }
            if lo[j] == hi[j] {
                fixed[j] = lo[j];
                obj_const += cost[j] * lo[j];
            } else {
                col_of[j] = Some(cols.len());
                cols.push(j);
            }
        }
        let mut out_rows = Vec::new();
        let mut rhs = Vec::new();
        let mut slack_lo = Vec::new();
        let mut slack_hi = Vec::new();
        for row in rows.into_iter().flatten() {
            let mut terms = Vec::with_capacity(row.terms.len());
            let mut b = row.rhs;
            for (j, a) in row.terms {
                match col_of[j] {
                    Some(c) => terms.push((c, a)),
                    None => b -= a * fixed[j],
                }
            }
            if terms.is_empty() {
                let ok = match row.sense {
                    Sense::Le => T::zero() <= b + tol,
                    Sense::Ge => T::zero() >= b - tol,
                    Sense::Eq => b.abs() <= tol,
                };
                bad |= !ok;
                continue;
            }
            terms.sort_by_key(|t| t.0);
            out_rows.push(terms);
            rhs.push(b);
            let (sl, sh) = match row.sense {
                Sense::Le => (T::zero(), T::infinity()),
                Sense::Ge => (T::neg_infinity(), T::zero()),
                Sense::Eq => (T::zero(), T::zero()),
            };
            slack_lo.push(sl);
            slack_hi.push(sh);
        }
        for j in 0..n {
            if lo[j] > hi[j] {
                bad = true;
            }
        }
        StandardForm {
            nv: cols.len(),
            rows: out_rows,
            rhs,
            slack_lo,
            slack_hi,
            cost: cols.iter().map(|&j| cost[j]).collect(),
            lo: cols.iter().map(|&j| lo[j]).collect(),
            hi: cols.iter().map(|&j| hi[j]).collect(),
            obj_const,
            trivially_infeasible: bad,
            cols,
            col_of,
            fixed,
            subs,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Reduced column of an original variable, if it survived presolve.
    pub fn column(&self, var: usize) -> Option<usize> {
        self.col_of[var]
    }

    /// Original-space point from a reduced one.
    pub fn expand(&self, x: &[T]) -> Vec<T> {
        let mut full = self.fixed.clone();
        for (c, &j) in self.cols.iter().enumerate() {
            full[j] = x[c];
        }
        for s in self.subs.iter().rev() {
            let rest: T = s.terms.iter().map(|&(k, a)| a * full[k]).sum();
            full[s.var] = (s.rhs - rest) / s.coef;
        }
        full
    }
}

/// Result of a continuous relaxation.
#[derive(Debug, Clone)]
pub struct LpResult<T> {
    pub status: LpStatus,
    pub objective: T,
    pub values: Vec<T>,
}

/// Solves the LP relaxation (binaries relaxed to their bounds).
pub fn solve_lp<T: Scalar>(p: &MilpProblem<T>) -> LpResult<T> {
    let sf = StandardForm::from_problem(p);
    let (st, tab) = Simplex::solve_cold(&sf, &sf.lo, &sf.hi);
    match tab {
        Some(t) => LpResult {
            status: st,
            objective: t.objective(&sf),
            values: sf.expand(&t.values()),
        },
        None => LpResult {
            status: st,
            objective: T::nan(),
            values: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::ModelBuilder;

    #[test]
    fn min_x_with_lower_row() {
        let mut b = ModelBuilder::<f64>::new();
        let x = b.free("x");
        let y = b.free("y");
        b.add("c", vec![(x, 1.0), (y, 0.0)], Sense::Ge, 3.0);
        b.add("d", vec![(x, 1.0), (y, 1.0)], Sense::Ge, 3.0);
        b.add("e", vec![(y, 1.0), (x, -1.0)], Sense::Le, 10.0);
        b.minimize_term(x, 1.0);
        b.minimize_term(y, 1.0);
        let r = solve_lp(&b.build().unwrap());
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn textbook_maximisation() {
        // max 3x + 2y, x + y <= 4, x + 3y <= 6
        let mut b = ModelBuilder::<f64>::new();
        let x = b.continuous("x", 0.0, f64::INFINITY);
        let y = b.continuous("y", 0.0, f64::INFINITY);
        b.add("a", vec![(x, 1.0), (y, 1.0)], Sense::Le, 4.0);
        b.add("b", vec![(x, 1.0), (y, 3.0)], Sense::Le, 6.0);
        b.minimize_term(x, -3.0);
        b.minimize_term(y, -2.0);
        let r = solve_lp(&b.build().unwrap());
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective + 12.0).abs() < 1e-9);
        assert!((r.values[0] - 4.0).abs() < 1e-9 && r.values[1].abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut b = ModelBuilder::<f64>::new();
        let x = b.continuous("x", 0.0, f64::INFINITY);
        let y = b.continuous("y", 0.0, f64::INFINITY);
        b.add("a", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.0);
        b.add("b", vec![(x, 1.0), (y, 1.0)], Sense::Ge, 2.0);
        assert_eq!(solve_lp(&b.build().unwrap()).status, LpStatus::Infeasible);

        let mut b = ModelBuilder::<f64>::new();
        let x = b.continuous("x", 0.0, f64::INFINITY);
        let y = b.continuous("y", 0.0, f64::INFINITY);
        b.add("a", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        b.minimize_term(y, -1.0);
        assert_eq!(solve_lp(&b.build().unwrap()).status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_system() {
        let mut b = ModelBuilder::<f64>::new();
        let x = b.free("x");
        let y = b.free("y");
        let z = b.continuous("z", 0.0, 5.0);
        b.add("a", vec![(x, 1.0), (y, -1.0)], Sense::Eq, 2.0);
        b.add("b", vec![(y, 1.0), (z, -1.0)], Sense::Eq, 1.0);
        b.minimize_term(x, 1.0);
        let r = solve_lp(&b.build().unwrap());
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn warm_reoptimisation_matches_cold() {
        let mut b = ModelBuilder::<f64>::new();
        let x = b.continuous("x", 0.0, 10.0);
        let y = b.continuous("y", 0.0, 10.0);
        b.add("a", vec![(x, 1.0), (y, 2.0)], Sense::Le, 14.0);
        b.add("b", vec![(x, 3.0), (y, -1.0)], Sense::Ge, 0.0);
        b.add("c", vec![(x, 1.0), (y, -1.0)], Sense::Le, 2.0);
        b.minimize_term(x, -1.0);
        b.minimize_term(y, -1.0);
        let p = b.build().unwrap();
        let sf = StandardForm::from_problem(&p);
        let (st, tab) = Simplex::solve_cold(&sf, &sf.lo, &sf.hi);
        assert_eq!(st, LpStatus::Optimal);
        let mut tab = tab.unwrap();
        tab.set_bounds(0, 0.0, 3.0);
        assert_eq!(tab.reoptimize(), LpStatus::Optimal);
        let mut hi = sf.hi.clone();
        hi[0] = 3.0;
        let (_, cold) = Simplex::solve_cold(&sf, &sf.lo, &hi);
        let cold = cold.unwrap();
        assert!((tab.objective(&sf) - cold.objective(&sf)).abs() < 1e-9);
    }
}
