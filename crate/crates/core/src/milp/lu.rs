//! Basis factorisation for the revised simplex.
//!
//! Singleton columns and rows are peeled off first; whatever is left (the
//! kernel) gets a dense LU with partial pivoting. The permuted basis is block
//! upper triangular, so both solves only need column access to the basis.

use crate::scalar::Scalar;

/// A basis column: (row, value) pairs.
pub type SparseCol<T> = Vec<(usize, T)>;

#[derive(Debug, Clone)]
pub struct Factor<T> {
    m: usize,
    cols: Vec<SparseCol<T>>,
    /// Column singletons in elimination order: (position, row, pivot).
    upper: Vec<(usize, usize, T)>,
    /// Row singletons in elimination order.
    lower: Vec<(usize, usize, T)>,
    k_rows: Vec<usize>,
    k_cols: Vec<usize>,
    /// Dense LU of the kernel, row-major, with the row permutation.
    k_lu: Vec<T>,
    k_perm: Vec<usize>,
    /// Eta columns of the updates since the last factorisation: (position, column).
    etas: Vec<(usize, SparseCol<T>)>,
}

/// Basis positions that could not be pivoted, with rows left uncovered.
#[derive(Debug, Clone, PartialEq)]
pub struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

impl<T: Scalar> Factor<T> {
    pub fn new(m: usize, cols: Vec<SparseCol<T>>) -> Result<Self, Singular> {
        assert_eq!(cols.len(), m);
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (p, c) in cols.iter().enumerate() {
            for &(i, _) in c {
                row_cols[i].push(p);
            }
        }
        let mut row_alive = vec![true; m];
        let mut col_alive = vec![true; m];
        let mut col_cnt: Vec<usize> = cols.iter().map(|c| c.len()).collect();
        let mut row_cnt: Vec<usize> = row_cols.iter().map(|r| r.len()).collect();

        let mut upper = Vec::new();
        let mut stack: Vec<usize> = (0..m).filter(|&p| col_cnt[p] == 1).collect();
        while let Some(p) = stack.pop() {
            if !col_alive[p] || col_cnt[p] != 1 {
                continue;
            }
            let &(i, v) = cols[p].iter().find(|(i, _)| row_alive[*i]).expect("live entry");
            if v.abs() < T::pivot_tol() {
                continue;
            }
            col_alive[p] = false;
            row_alive[i] = false;
            upper.push((p, i, v));
            for &q in &row_cols[i] {
                if col_alive[q] {
                    col_cnt[q] -= 1;
                    if col_cnt[q] == 1 {
                        stack.push(q);
                    }
                }
            }
        }
        for i in 0..m {
            row_cnt[i] = row_cols[i].iter().filter(|&&p| col_alive[p]).count();
        }
        let mut lower = Vec::new();
        let mut stack: Vec<usize> = (0..m).filter(|&i| row_alive[i] && row_cnt[i] == 1).collect();
        while let Some(i) = stack.pop() {
            if !row_alive[i] || row_cnt[i] != 1 {
                continue;
            }
            let p = *row_cols[i].iter().find(|&&p| col_alive[p]).expect("live column");
            let v = cols[p].iter().find(|(r, _)| *r == i).map(|e| e.1).unwrap();
            if v.abs() < T::pivot_tol() {
                continue;
            }
            row_alive[i] = false;
            col_alive[p] = false;
            lower.push((p, i, v));
            for &(r, _) in &cols[p] {
                if row_alive[r] {
                    row_cnt[r] -= 1;
                    if row_cnt[r] == 1 {
                        stack.push(r);
                    }
                }
            }
        }

        let k_rows: Vec<usize> = (0..m).filter(|&i| row_alive[i]).collect();
        let k_cols: Vec<usize> = (0..m).filter(|&p| col_alive[p]).collect();
        let k = k_rows.len();
        debug_assert_eq!(k, k_cols.len());
        let mut local = vec![usize::MAX; m];
        for (a, &i) in k_rows.iter().enumerate() {
            local[i] = a;
        }
        let mut lu = vec![T::zero(); k * k];
        for (b, &p) in k_cols.iter().enumerate() {
            for &(i, v) in &cols[p] {
                if local[i] != usize::MAX {
                    lu[local[i] * k + b] = v;
                }
            }
        }
        let mut perm: Vec<usize> = (0..k).collect();
        let mut bad_cols = Vec::new();
        let mut bad_rows = Vec::new();
        let mut row_used = vec![false; k];
        // column-by-column partial pivoting; rows are swapped logically through `perm`
        let mut r = 0;
        for c in 0..k {
            let mut best = r;
            let mut best_v = T::zero();
            for a in r..k {
                let v = lu[perm[a] * k + c].abs();
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            if best_v < T::lit(1e-11) {
                bad_cols.push(k_cols[c]);
                continue;
            }
            perm.swap(r, best);
            let pr = perm[r];
            row_used[pr] = true;
            let piv = lu[pr * k + c];
            for a in r + 1..k {
                let ra = perm[a];
                let f = lu[ra * k + c] / piv;
                if f == T::zero() {
                    continue;
                }
                lu[ra * k + c] = f;
                for b in c + 1..k {
                    let u = lu[pr * k + b];
                    if u != T::zero() {
                        lu[ra * k + b] -= f * u;
                    }
                }
            }
            r += 1;
        }
        if !bad_cols.is_empty() {
            for (a, &used) in row_used.iter().enumerate() {
                if !used {
                    bad_rows.push(k_rows[a]);
                }
            }
            return Err(Singular {
                positions: bad_cols,
                rows: bad_rows,
            });
        }
        Ok(Factor {
            m,
            cols,
            upper,
            lower,
            k_rows,
            k_cols,
            k_lu: lu,
            k_perm: perm,
            etas: Vec::new(),
        })
    }

    pub fn num_etas(&self) -> usize {
        self.etas.len()
    }

    pub fn kernel_size(&self) -> usize {
        self.k_rows.len()
    }

    /// Solves B z = b in place: `b` comes in indexed by row and leaves indexed by position.
    pub fn ftran(&self, b: &mut Vec<T>) {
        let m = self.m;
        let mut z = vec![T::zero(); m];
        for &(p, i, v) in &self.lower {
            let zp = b[i] / v;
            z[p] = zp;
            if zp != T::zero() {
                for &(r, a) in &self.cols[p] {
                    b[r] -= a * zp;
                }
            }
        }
        let k = self.k_rows.len();
        if k > 0 {
            let mut y: Vec<T> = self.k_perm.iter().map(|&a| b[self.k_rows[a]]).collect();
            // forward with unit L, then back with U, both in permuted row order
            for c in 0..k {
                let yc = y[c];
                if yc == T::zero() {
                    continue;
                }
                for a in c + 1..k {
                    let l = self.k_lu[self.k_perm[a] * k + c];
                    if l != T::zero() {
                        y[a] -= l * yc;
                    }
                }
            }
            for c in (0..k).rev() {
                let row = self.k_perm[c] * k;
                let mut s = y[c];
                for b2 in c + 1..k {
                    let u = self.k_lu[row + b2];
                    if u != T::zero() {
                        s -= u * y[b2];
                    }
                }
                y[c] = s / self.k_lu[row + c];
            }
            for (c, &p) in self.k_cols.iter().enumerate() {
                let zp = y[c];
                z[p] = zp;
                if zp != T::zero() {
                    for &(r, a) in &self.cols[p] {
                        b[r] -= a * zp;
                    }
                }
            }
        }
        for &(p, i, v) in self.upper.iter().rev() {
            let zp = b[i] / v;
            z[p] = zp;
            if zp != T::zero() {
                for &(r, a) in &self.cols[p] {
                    b[r] -= a * zp;
                }
            }
        }
        for (r, col) in &self.etas {
            let zr = z[*r];
            if zr == T::zero() {
                continue;
            }
            let ar = col.iter().find(|(i, _)| i == r).map(|e| e.1).unwrap();
            let zr = zr / ar;
            for &(i, a) in col {
                if i != *r {
                    z[i] -= a * zr;
                }
            }
            z[*r] = zr;
        }
        *b = z;
    }

    /// Solves Bᵀ y = c in place: `c` comes in indexed by position and leaves indexed by row.
    pub fn btran(&self, c: &mut Vec<T>) {
        let m = self.m;
        for (r, col) in self.etas.iter().rev() {
            let mut s = c[*r];
            let mut ar = T::one();
            for &(i, a) in col {
                if i == *r {
                    ar = a;
                } else {
                    s -= a * c[i];
                }
            }
            c[*r] = s / ar;
        }
        let mut y = vec![T::zero(); m];
        for &(p, i, v) in &self.upper {
            let mut s = c[p];
            for &(r, a) in &self.cols[p] {
                if r != i {
                    s -= a * y[r];
                }
            }
            y[i] = s / v;
        }
        let k = self.k_rows.len();
        if k > 0 {
            let mut w: Vec<T> = self
                .k_cols
                .iter()
                .map(|&p| {
                    let mut s = c[p];
                    for &(r, a) in &self.cols[p] {
                        s -= a * y[r];
                    }
                    s
                })
                .collect();
            // Uᵀ forward, then Lᵀ backward
            for cc in 0..k {
                let row = self.k_perm[cc] * k;
                let v = w[cc] / self.k_lu[row + cc];
                w[cc] = v;
                if v != T::zero() {
                    for b2 in cc + 1..k {
                        let u = self.k_lu[row + b2];
                        if u != T::zero() {
                            w[b2] -= u * v;
                        }
                    }
                }
            }
            for cc in (0..k).rev() {
                let v = w[cc];
                if v == T::zero() {
                    continue;
                }
                for a in 0..cc {
                    let l = self.k_lu[self.k_perm[cc] * k + a];
                    if l != T::zero() {
                        w[a] -= l * v;
                    }
                }
            }
            for (a, &pa) in self.k_perm.iter().enumerate() {
                y[self.k_rows[pa]] = w[a];
            }
        }
        for &(p, i, v) in self.lower.iter().rev() {
            let mut s = c[p];
            for &(r, a) in &self.cols[p] {
                if r != i {
                    s -= a * y[r];
                }
            }
            y[i] = s / v;
        }
        *c = y;
    }

    /// Records that position `r` now holds a column whose FTRAN image is `alpha`.
    pub fn update(&mut self, r: usize, alpha: &[T]) {
        let col: SparseCol<T> = alpha
            .iter()
            .enumerate()
            .filter(|(i, a)| a.abs() > T::drop_tol() || *i == r)
            .map(|(i, &a)| (i, a))
            .collect();
        self.etas.push((r, col));
    }
}
