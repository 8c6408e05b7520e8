use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct VariableDef<T> {
    pub name: String,
    pub kind: VarKind,
    pub lower: T,
    pub upper: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearConstraint<T> {
    pub name: String,
    pub terms: Vec<(VarId, T)>,
    pub sense: Sense,
    pub rhs: T,
}

impl<T: Scalar> LinearConstraint<T> {
    /// Builds a constraint, merging repeated variables and dropping zero coefficients.
    pub fn new(name: impl Into<String>, terms: Vec<(VarId, T)>, sense: Sense, rhs: T) -> Self {
        LinearConstraint {
            name: name.into(),
            terms: merge_terms(terms),
            sense,
            rhs,
        }
    }

    pub fn activity(&self, values: &[T]) -> T {
        self.terms.iter().map(|&(v, a)| a * values[v.0]).sum()
    }

    /// Amount by which `values` violates the constraint (zero when satisfied).
    pub fn violation(&self, values: &[T]) -> T {
        let lhs = self.activity(values);
        let zero = T::zero();
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(zero),
            Sense::Ge => (self.rhs - lhs).max(zero),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

fn merge_terms<T: Scalar>(terms: Vec<(VarId, T)>) -> Vec<(VarId, T)> {
    let mut acc: BTreeMap<VarId, T> = BTreeMap::new();
    for (v, a) in terms {
        *acc.entry(v).or_insert_with(T::zero) += a;
    }
    acc.into_iter().filter(|(_, a)| *a != T::zero()).collect()
}

#[derive(Debug, Clone)]
pub struct LinearExpr<T> {
    pub terms: Vec<(VarId, T)>,
    pub constant: T,
}

impl<T: Scalar> LinearExpr<T> {
    pub fn new(terms: Vec<(VarId, T)>, constant: T) -> Self {
        LinearExpr {
            terms: merge_terms(terms),
            constant,
        }
    }

    pub fn eval(&self, values: &[T]) -> T {
        self.constant + self.terms.iter().map(|&(v, a)| a * values[v.0]).sum::<T>()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("constraint `{constraint}` references unknown variable {var}")]
    UnknownVariable { constraint: String, var: VarId },
    #[error("constraint `{constraint}` lists variable {var} more than once")]
    DuplicateTerm { constraint: String, var: VarId },
    #[error("variable `{name}` has lower bound above upper bound")]
    EmptyDomain { name: String },
    #[error("binary variable `{name}` has bounds outside [0, 1]")]
    BinaryBounds { name: String },
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
}

/// A minimisation MILP over continuous and binary variables.
#[derive(Debug, Clone)]
pub struct MilpProblem<T> {
    pub vars: Vec<VariableDef<T>>,
    pub constraints: Vec<LinearConstraint<T>>,
    pub objective: LinearExpr<T>,
}

impl<T: Scalar> MilpProblem<T> {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
    }

    /// Largest constraint or bound violation of a full assignment.
    pub fn max_violation(&self, values: &[T]) -> T {
        let mut worst = T::zero();
        for (v, def) in values.iter().zip(&self.vars) {
            worst = worst.max(def.lower - *v).max(*v - def.upper);
        }
        for c in &self.constraints {
            worst = worst.max(c.violation(values));
        }
        worst
    }

    /// Feasible within `tol`, with binaries integral within the integrality tolerance.
    pub fn is_feasible(&self, values: &[T], tol: T) -> bool {
        if values.len() != self.vars.len() {
            return false;
        }
        let integral = self.binaries().all(|b| {
            let x = values[b.0];
            (x - x.round()).abs() <= T::int_tol()
        });
        integral && self.max_violation(values) <= tol
    }
}

/// Validates and assembles a problem.
pub fn build_problem<T: Scalar>(
    vars: Vec<VariableDef<T>>,
    constraints: Vec<LinearConstraint<T>>,
    objective: LinearExpr<T>,
) -> Result<MilpProblem<T>, ModelError> {
    for v in &vars {
        if v.lower.is_nan() || v.upper.is_nan() {
            return Err(ModelError::NonFinite(v.name.clone()));
        }
        if v.lower > v.upper {
            return Err(ModelError::EmptyDomain { name: v.name.clone() });
        }
        if v.kind == VarKind::Binary && (v.lower < T::zero() || v.upper > T::one()) {
            return Err(ModelError::BinaryBounds { name: v.name.clone() });
        }
    }
    let n = vars.len();
    let mut seen = vec![false; n];
    for c in &constraints {
        for &(v, _) in &c.terms {
            if v.0 < n {
                seen[v.0] = false;
            }
        }
        if !c.rhs.is_finite() {
            return Err(ModelError::NonFinite(c.name.clone()));
        }
        for &(v, a) in &c.terms {
            if v.0 >= n {
                return Err(ModelError::UnknownVariable {
                    constraint: c.name.clone(),
                    var: v,
                });
            }
            if seen[v.0] {
                return Err(ModelError::DuplicateTerm {
                    constraint: c.name.clone(),
                    var: v,
                });
            }
            seen[v.0] = true;
            if !a.is_finite() {
                return Err(ModelError::NonFinite(c.name.clone()));
            }
        }
    }
    for &(v, a) in &objective.terms {
        if v.0 >= n {
            return Err(ModelError::UnknownVariable {
                constraint: "objective".into(),
                var: v,
            });
        }
        if !a.is_finite() {
            return Err(ModelError::NonFinite("objective".into()));
        }
    }
    Ok(MilpProblem {
        vars,
        constraints,
        objective,
    })
}

/// Incremental helper used by the model builders.
#[derive(Debug, Clone)]
pub struct ModelBuilder<T> {
    vars: Vec<VariableDef<T>>,
    constraints: Vec<LinearConstraint<T>>,
    objective: Vec<(VarId, T)>,
    constant: T,
}

impl<T: Scalar> Default for ModelBuilder<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelBuilder<T> {
    pub fn new() -> Self {
        ModelBuilder {
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            constant: T::zero(),
        }
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: T, upper: T) -> VarId {
        self.vars.push(VariableDef {
            name: name.into(),
            kind: VarKind::Continuous,
            lower,
            upper,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn free(&mut self, name: impl Into<String>) -> VarId {
        self.continuous(name, T::neg_infinity(), T::infinity())
    }

    pub fn binary(&mut self, name: impl Into<String>) -> VarId {
        self.vars.push(VariableDef {
            name: name.into(),
            kind: VarKind::Binary,
            lower: T::zero(),
            upper: T::one(),
        });
        VarId(self.vars.len() - 1)
    }

    /// Tightens the bounds of a declared variable.
    pub fn set_bounds(&mut self, id: VarId, lower: T, upper: T) {
        self.vars[id.0].lower = lower;
        self.vars[id.0].upper = upper;
    }

    pub fn var(&self, id: VarId) -> &VariableDef<T> {
        &self.vars[id.0]
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn constrain(&mut self, c: LinearConstraint<T>) {
        self.constraints.push(c);
    }

    pub fn extend(&mut self, cs: impl IntoIterator<Item = LinearConstraint<T>>) {
        self.constraints.extend(cs);
    }

    pub fn add(&mut self, name: impl Into<String>, terms: Vec<(VarId, T)>, sense: Sense, rhs: T) {
        self.constraints
            .push(LinearConstraint::new(name, terms, sense, rhs));
    }

    pub fn minimize_term(&mut self, v: VarId, coef: T) {
        self.objective.push((v, coef));
    }

    pub fn objective_constant(&mut self, c: T) {
        self.constant += c;
    }

    pub fn build(self) -> Result<MilpProblem<T>, ModelError> {
        let objective = LinearExpr::new(self.objective, self.constant);
        build_problem(self.vars, self.constraints, objective)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_terms_are_rejected_by_validation() {
        let vars = vec![VariableDef {
            name: "x".into(),
            kind: VarKind::Continuous,
            lower: 0.0,
            upper: 1.0,
        }];
        let c = LinearConstraint {
            name: "c".into(),
            terms: vec![(VarId(0), 1.0), (VarId(0), 2.0)],
            sense: Sense::Le,
            rhs: 1.0,
        };
        let err = build_problem(vars, vec![c], LinearExpr::new(vec![], 0.0)).unwrap_err();
        assert!(matches!(err, ModelError::DuplicateTerm { .. }));
    }

    #[test]
    fn constructor_merges_terms() {
        let c = LinearConstraint::new("c", vec![(VarId(1), 1.0), (VarId(0), 2.0), (VarId(1), -1.0)], Sense::Eq, 0.0);
        assert_eq!(c.terms, vec![(VarId(0), 2.0)]);
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let mut b = ModelBuilder::<f64>::new();
        b.continuous("x", 0.0, 1.0);
        b.add("c", vec![(VarId(3), 1.0)], Sense::Le, 1.0);
        assert!(matches!(b.build(), Err(ModelError::UnknownVariable { .. })));
    }

    #[test]
    fn empty_domain_is_rejected() {
        let mut b = ModelBuilder::<f64>::new();
        b.continuous("x", 2.0, 1.0);
        assert!(matches!(b.build(), Err(ModelError::EmptyDomain { .. })));
    }
}
