//! Bounded revised simplex over a factorised basis.
//!
//! Every row carries a slack column, so the all-slack basis is always available
//! as a start. Nonbasic columns sit on a bound (or at zero when free). A cold
//! solve parks each column on the side its cost prefers, which makes the slack
//! basis dual feasible, runs the dual simplex and then a primal cleanup.

use super::lu::{Factor, SparseCol};
use super::simplex::{LpStatus, StandardForm};
use crate::scalar::Scalar;

const NONBASIC: usize = usize::MAX;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_RUN: usize = 25;
/// Eta updates kept before the basis is factorised again.
const REFACTOR_EVERY: usize = 64;
/// Temporary box for columns whose cost pushes them towards an infinite bound.
const BOX: f64 = 1e7;

#[derive(Debug, Clone)]
pub struct Simplex<T> {
    m: usize,
    nv: usize,
    n: usize,
    col_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    col_val: Vec<T>,
    row_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    row_val: Vec<T>,
    rhs: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
    x: Vec<T>,
    cost: Vec<T>,
    d: Vec<T>,
    basis: Vec<usize>,
    pos: Vec<usize>,
    factor: Factor<T>,
    x_dirty: bool,
    pub pivots: usize,
}

fn preferred<T: Scalar>(c: T, lo: T, hi: T) -> T {
    if c > T::zero() && lo.is_finite() {
        lo
    } else if c < T::zero() && hi.is_finite() {
        hi
    } else if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        T::zero()
    }
}

impl<T: Scalar> Simplex<T> {
    fn ptol() -> T {
        T::lit(1e-7)
    }
    fn dtol() -> T {
        T::lit(1e-9)
    }

    /// Solves from the slack basis with the given structural bounds.
    pub fn solve_cold(sf: &StandardForm<T>, lo: &[T], hi: &[T]) -> (LpStatus, Option<Simplex<T>>) {
        if sf.trivially_infeasible || lo.iter().zip(hi).any(|(l, h)| *l > *h) {
            return (LpStatus::Infeasible, None);
        }
        let m = sf.rows.len();
        let nv = sf.nv;
        let n = nv + m;
        let mut col_cnt = vec![0usize; nv + 1];
        for row in &sf.rows {
            for &(j, _) in row {
                col_cnt[j + 1] += 1;
            }
        }
        for j in 0..nv {
            col_cnt[j + 1] += col_cnt[j];
        }
        let col_ptr = col_cnt.clone();
        let nnz = col_ptr[nv];
        let mut fill = col_ptr.clone();
        let mut col_idx = vec![0; nnz];
        let mut col_val = vec![T::zero(); nnz];
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut row_val = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (i, row) in sf.rows.iter().enumerate() {
            for &(j, a) in row {
                col_idx[fill[j]] = i;
                col_val[fill[j]] = a;
                fill[j] += 1;
                row_idx.push(j);
                row_val.push(a);
            }
            row_ptr.push(row_idx.len());
        }

        let mut lo_v = lo.to_vec();
        let mut hi_v = hi.to_vec();
        lo_v.extend_from_slice(&sf.slack_lo);
        hi_v.extend_from_slice(&sf.slack_hi);
        let mut cost = sf.cost.clone();
        cost.extend(std::iter::repeat(T::zero()).take(m));
        // box the columns whose cost points at an infinite bound
        let big = T::lit(BOX);
        let mut boxed = Vec::new();
        for j in 0..nv {
            if cost[j] > T::zero() && !lo_v[j].is_finite() {
                boxed.push((j, lo_v[j], hi_v[j]));
                lo_v[j] = -big;
            } else if cost[j] < T::zero() && !hi_v[j].is_finite() {
                boxed.push((j, lo_v[j], hi_v[j]));
                hi_v[j] = big;
            }
        }
        let mut x = vec![T::zero(); n];
        for j in 0..nv {
            x[j] = preferred(cost[j], lo_v[j], hi_v[j]);
        }
        let basis: Vec<usize> = (nv..n).collect();
        let mut pos = vec![NONBASIC; n];
        for (p, &b) in basis.iter().enumerate() {
            pos[b] = p;
        }
        let factor = Factor::new(m, (0..m).map(|i| vec![(i, T::one())]).collect()).expect("identity");
        let mut s = Simplex {
            m,
            nv,
            n,
            col_ptr,
            col_idx,
            col_val,
            row_ptr,
            row_idx,
            row_val,
            rhs: sf.rhs.clone(),
            lo: lo_v,
            hi: hi_v,
            x,
            d: cost.clone(),
            cost,
            basis,
            pos,
            factor,
            x_dirty: true,
            pivots: 0,
        };
        s.recompute_x();
        let st = s.dual();
        if st != LpStatus::Optimal {
            return (st, None);
        }
        if !boxed.is_empty() {
            for &(j, l, h) in &boxed {
                s.lo[j] = l;
                s.hi[j] = h;
            }
        }
        let st = s.finish();
        match st {
            LpStatus::Optimal => (st, Some(s)),
            _ => (st, None),
        }
    }

    fn column(&self, j: usize) -> SparseCol<T> {
        if j < self.nv {
            (self.col_ptr[j]..self.col_ptr[j + 1])
                .map(|k| (self.col_idx[k], self.col_val[k]))
                .collect()
        } else {
            vec![(j - self.nv, T::one())]
        }
    }

    fn refactor(&mut self) {
        for _ in 0..self.m + 1 {
            let cols: Vec<SparseCol<T>> = self.basis.iter().map(|&j| self.column(j)).collect();
            match Factor::new(self.m, cols) {
                Ok(f) => {
                    self.factor = f;
                    return;
                }
                Err(sing) => {
                    // swap the dependent columns for slacks of the uncovered rows
                    for (&p, &row) in sing.positions.iter().zip(&sing.rows) {
                        let slack = self.nv + row;
                        if self.pos[slack] != NONBASIC {
                            continue;
                        }
                        let out = self.basis[p];
                        self.pos[out] = NONBASIC;
                        self.x[out] = self.x[out].max(self.lo[out]).min(self.hi[out]);
                        self.basis[p] = slack;
                        self.pos[slack] = p;
                    }
                }
            }
        }
        panic!("basis repair did not converge");
    }

    fn recompute_x(&mut self) {
        let mut b = self.rhs.clone();
        for j in 0..self.n {
            if self.pos[j] != NONBASIC {
                continue;
            }
            let xj = self.x[j];
            if xj == T::zero() {
                continue;
            }
            if j < self.nv {
                for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                    b[self.col_idx[k]] -= self.col_val[k] * xj;
                }
            } else {
                b[j - self.nv] -= xj;
            }
        }
        self.factor.ftran(&mut b);
        for (p, &j) in self.basis.iter().enumerate() {
            self.x[j] = b[p];
        }
        self.x_dirty = false;
    }

    fn recompute_d(&mut self) {
        let mut y: Vec<T> = self.basis.iter().map(|&j| self.cost[j]).collect();
        self.factor.btran(&mut y);
        for j in 0..self.nv {
            let mut v = self.cost[j];
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                v -= self.col_val[k] * y[self.col_idx[k]];
            }
            self.d[j] = v;
        }
        for i in 0..self.m {
            self.d[self.nv + i] = -y[i];
        }
        for &b in &self.basis {
            self.d[b] = T::zero();
        }
    }

    fn refresh(&mut self) {
        self.refactor();
        self.recompute_x();
        self.recompute_d();
    }

    /// Row `r` of B⁻¹[A I], dense over all columns (basic entries zeroed).
    fn pivot_row(&self, r: usize) -> Vec<T> {
        let mut rho = vec![T::zero(); self.m];
        rho[r] = T::one();
        self.factor.btran(&mut rho);
        let mut alpha = vec![T::zero(); self.n];
        for (i, &ri) in rho.iter().enumerate() {
            if ri == T::zero() {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                alpha[self.row_idx[k]] += ri * self.row_val[k];
            }
            alpha[self.nv + i] = ri;
        }
        for &b in &self.basis {
            alpha[b] = T::zero();
        }
        alpha
    }

    fn ftran_col(&self, q: usize) -> Vec<T> {
        let mut a = vec![T::zero(); self.m];
        for (i, v) in self.column(q) {
            a[i] = v;
        }
        self.factor.ftran(&mut a);
        a
    }

    fn replace(&mut self, r: usize, q: usize, alpha_q: &[T]) {
        let out = self.basis[r];
        self.pos[out] = NONBASIC;
        self.basis[r] = q;
        self.pos[q] = r;
        self.factor.update(r, alpha_q);
        self.pivots += 1;
        if self.factor.num_etas() >= REFACTOR_EVERY {
            self.refresh();
        }
    }

    fn free_to_move(&self, j: usize) -> (bool, bool) {
        (self.x[j] < self.hi[j], self.x[j] > self.lo[j])
    }

    /// Primal simplex from a primal feasible basis.
    fn primal(&mut self) -> LpStatus {
        let dtol = Self::dtol();
        let max_iter = 20 * (self.m + self.n) + 1000;
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut enter = None;
            let mut best = T::zero();
            for j in 0..self.n {
                if self.pos[j] != NONBASIC || self.lo[j] == self.hi[j] {
                    continue;
                }
                let dj = self.d[j];
                let (up, down) = self.free_to_move(j);
                let dir = if dj < -dtol && up {
                    1
                } else if dj > dtol && down {
                    -1
                } else {
                    continue;
                };
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    enter = Some((j, dir));
                }
            }
            let Some((q, dir)) = enter else {
                return LpStatus::Optimal;
            };
            let dirt = if dir > 0 { T::one() } else { -T::one() };
            let alpha = self.ftran_col(q);
            // two-pass ratio test: loosen bounds slightly, then prefer the largest pivot
            let ptol = Self::ptol();
            let piv_min = T::lit(1e-9);
            let mut theta_max = if dir > 0 { self.hi[q] - self.x[q] } else { self.x[q] - self.lo[q] };
            for (p, &a) in alpha.iter().enumerate() {
                let a = a * dirt;
                if a.abs() <= piv_min {
                    continue;
                }
                let b = self.basis[p];
                let lim = if a > T::zero() {
                    (self.x[b] - self.lo[b] + ptol) / a
                } else {
                    (self.hi[b] - self.x[b] + ptol) / -a
                };
                if lim < theta_max {
                    theta_max = lim;
                }
            }
            let flip = if dir > 0 { self.hi[q] - self.x[q] } else { self.x[q] - self.lo[q] };
            if !theta_max.is_finite() {
                return LpStatus::Unbounded;
            }
            let mut leave: Option<usize> = None;
            let mut best_a = T::zero();
            let mut theta = flip;
            for (p, &a) in alpha.iter().enumerate() {
                let a = a * dirt;
                if a.abs() <= piv_min {
                    continue;
                }
                let b = self.basis[p];
                let lim = if a > T::zero() {
                    (self.x[b] - self.lo[b]) / a
                } else {
                    (self.hi[b] - self.x[b]) / -a
                };
                if lim <= theta_max {
                    let take = match leave {
                        None => true,
                        Some(lp) if bland => b < self.basis[lp],
                        Some(_) => a.abs() > best_a,
                    };
                    if take {
                        leave = Some(p);
                        best_a = a.abs();
                        theta = lim.max(T::zero());
                    }
                }
            }
            if leave.is_some() && flip <= theta {
                leave = None;
                theta = flip;
            }
            if theta <= T::lit(1e-12) {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            if theta > T::zero() {
                for (p, &a) in alpha.iter().enumerate() {
                    if a != T::zero() {
                        let b = self.basis[p];
                        self.x[b] -= dirt * a * theta;
                    }
                }
                self.x[q] += dirt * theta;
            }
            match leave {
                None => {
                    self.x[q] = if dir > 0 { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    let b = self.basis[r];
                    let a = alpha[r] * dirt;
                    self.x[b] = if a > T::zero() { self.lo[b] } else { self.hi[b] };
                    let row = self.pivot_row(r);
                    let f = self.d[q] / alpha[r];
                    for j in 0..self.n {
                        if row[j] != T::zero() {
                            self.d[j] -= f * row[j];
                        }
                    }
                    self.d[b] = -f;
                    self.d[q] = T::zero();
                    self.replace(r, q, &alpha);
                }
            }
        }
        LpStatus::IterationLimit
    }

    /// Dual simplex from a dual feasible basis.
    fn dual(&mut self) -> LpStatus {
        let ptol = Self::ptol();
        let dtol = Self::dtol();
        let piv_min = T::lit(1e-9);
        let max_iter = 20 * (self.m + self.n) + 1000;
        let mut retried = false;
        let mut iter = 0;
        while iter < max_iter {
            iter += 1;
            let mut leave = None;
            let mut worst = ptol;
            for (p, &b) in self.basis.iter().enumerate() {
                let v = if self.x[b] < self.lo[b] {
                    self.lo[b] - self.x[b]
                } else if self.x[b] > self.hi[b] {
                    self.x[b] - self.hi[b]
                } else {
                    continue;
                };
                if v > worst {
                    worst = v;
                    leave = Some(p);
                }
            }
            let Some(r) = leave else {
                return LpStatus::Optimal;
            };
            let b = self.basis[r];
            let below = self.x[b] < self.lo[b];
            let bound = if below { self.lo[b] } else { self.hi[b] };
            let row = self.pivot_row(r);
            let eligible = |j: usize, a: T, s: &Self| -> bool {
                if s.pos[j] != NONBASIC || s.lo[j] == s.hi[j] || a.abs() <= piv_min {
                    return false;
                }
                let (up, down) = s.free_to_move(j);
                // increasing x_j moves x_b by -a
                if below {
                    (a < T::zero() && up) || (a > T::zero() && down)
                } else {
                    (a > T::zero() && up) || (a < T::zero() && down)
                }
            };
            let mut theta_max = T::infinity();
            for (j, &a) in row.iter().enumerate() {
                if eligible(j, a, self) {
                    let lim = (self.d[j].abs() + dtol) / a.abs();
                    if lim < theta_max {
                        theta_max = lim;
                    }
                }
            }
            let mut enter = None;
            let mut best_a = T::zero();
            if theta_max.is_finite() {
                for (j, &a) in row.iter().enumerate() {
                    if eligible(j, a, self) && self.d[j].abs() / a.abs() <= theta_max && a.abs() > best_a {
                        best_a = a.abs();
                        enter = Some(j);
                    }
                }
            }
            let Some(q) = enter else {
                if !retried {
                    retried = true;
                    self.refresh();
                    continue;
                }
                return LpStatus::Infeasible;
            };
            let alpha = self.ftran_col(q);
            let arq = alpha[r];
            if (arq - row[q]).abs() > T::lit(1e-7) * (T::one() + arq.abs()) || arq.abs() <= piv_min {
                // the updates have drifted; start over from a fresh factorisation
                if self.factor.num_etas() > 0 {
                    self.refresh();
                    continue;
                }
            }
            retried = false;
            let step = (self.x[b] - bound) / arq;
            for (p, &a) in alpha.iter().enumerate() {
                if a != T::zero() {
                    let bp = self.basis[p];
                    self.x[bp] -= a * step;
                }
            }
            self.x[q] += step;
            self.x[b] = bound;
            let f = self.d[q] / row[q];
            for j in 0..self.n {
                if row[j] != T::zero() {
                    self.d[j] -= f * row[j];
                }
            }
            self.d[b] = -f;
            self.d[q] = T::zero();
            self.replace(r, q, &alpha);
        }
        LpStatus::IterationLimit
    }

    /// Fresh factorisation, then dual and primal passes until both agree.
    fn finish(&mut self) -> LpStatus {
        for _ in 0..4 {
            self.refresh();
            let st = self.primal();
            if st != LpStatus::Optimal {
                return st;
            }
            self.refresh();
            if self.primal_infeasibility() <= Self::ptol() && self.dual_infeasibility() <= Self::dtol() {
                return LpStatus::Optimal;
            }
            if self.primal_infeasibility() > Self::ptol() {
                let st = self.dual();
                if st != LpStatus::Optimal {
                    return st;
                }
            }
        }
        LpStatus::Optimal
    }

    fn primal_infeasibility(&self) -> T {
        let mut worst = T::zero();
        for &b in &self.basis {
            worst = worst.max(self.lo[b] - self.x[b]).max(self.x[b] - self.hi[b]);
        }
        worst
    }

    fn dual_infeasibility(&self) -> T {
        let mut worst = T::zero();
        for j in 0..self.n {
            if self.pos[j] != NONBASIC || self.lo[j] == self.hi[j] {
                continue;
            }
            let (up, down) = self.free_to_move(j);
            if up {
                worst = worst.max(-self.d[j]);
            }
            if down {
                worst = worst.max(self.d[j]);
            }
        }
        worst
    }

    /// Changes bounds of a structural column, keeping the point primal consistent.
    pub fn set_bounds(&mut self, j: usize, lo: T, hi: T) {
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.pos[j] == NONBASIC {
            let old = self.x[j];
            let new = if old < lo || old > hi || (old != lo && old != hi) {
                preferred(T::zero(), lo, hi).max(lo).min(hi)
            } else {
                old
            };
            if new != old {
                self.x[j] = new;
                self.x_dirty = true;
            }
        }
    }

    /// Changes bounds and parks a nonbasic column on the side its reduced cost
    /// prefers, so the basis stays dual feasible.
    pub fn set_bounds_dual(&mut self, j: usize, lo: T, hi: T) {
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.pos[j] != NONBASIC {
            return;
        }
        let dtol = Self::dtol();
        let dj = self.d[j];
        let target = if lo == hi {
            lo
        } else if dj > dtol && lo.is_finite() {
            lo
        } else if dj < -dtol && hi.is_finite() {
            hi
        } else {
            self.x[j].max(lo).min(hi)
        };
        if target != self.x[j] {
            self.x[j] = target;
            self.x_dirty = true;
        }
    }

    pub fn bounds(&self, j: usize) -> (T, T) {
        (self.lo[j], self.hi[j])
    }

    /// Re-optimises after bound changes: dual simplex, then a primal cleanup.
    pub fn reoptimize(&mut self) -> LpStatus {
        if self.x_dirty {
            self.recompute_x();
        }
        if self.dual_infeasibility() > Self::dtol() {
            if self.primal_infeasibility() <= Self::ptol() {
                return self.finish();
            }
            return LpStatus::IterationLimit;
        }
        let st = self.dual();
        if st != LpStatus::Optimal {
            return st;
        }
        self.finish()
    }

    pub fn objective(&self, sf: &StandardForm<T>) -> T {
        sf.obj_const + (0..self.nv).map(|j| self.cost[j] * self.x[j]).sum::<T>()
    }

    /// Structural values, clipped onto their bounds.
    pub fn values(&self) -> Vec<T> {
        (0..self.nv).map(|j| self.x[j].max(self.lo[j]).min(self.hi[j])).collect()
    }

    pub fn kernel_size(&self) -> usize {
        self.factor.kernel_size()
    }
}
