//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `min c'x  s.t. A x <= b, lo <= x <= hi` where individual bounds may
//! be infinite. Bound handling is by substitution: a finite lower bound shifts
//! the variable, an upper-only bound reflects it, and a fully free variable is
//! split into a difference of two nonnegative parts. Bland's entering/leaving
//! rule keeps the pivot sequence finite and deterministic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const EPS_PIVOT: f64 = 1e-11;
const EPS_REDUCED: f64 = 1e-10;
const EPS_FEAS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: LpStatus,
    /// Multipliers for the `A x <= b` rows (nonnegative at an optimum).
    pub row_duals: DVector<f64>,
}

struct Tableau {
    /// rows x (cols + 1); last column is the rhs
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * (self.cols + 1) + self.cols]
    }
    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.cols + 1;
        let pv = self.data[row * w + col];
        for j in 0..w {
            self.data[row * w + j] /= pv;
        }
        for r in 0..self.rows {
            if r == row {
                continue;
            }
            let factor = self.data[r * w + col];
            if factor != 0.0 {
                for j in 0..w {
                    self.data[r * w + j] -= factor * self.data[row * w + j];
                }
            }
        }
        self.basis[row] = col;
    }

    /// One simplex phase over the given objective; returns false on unbounded.
    fn run(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> bool {
        loop {
            // reduced costs r_j = c_j - c_B B^{-1} A_j on the current tableau
            let mut entering = None;
            for j in 0..self.cols {
                if !allowed(j) || self.basis.contains(&j) {
                    continue;
                }
                let mut rc = cost[j];
                for (r, &bj) in self.basis.iter().enumerate() {
                    if cost[bj] != 0.0 {
                        rc -= cost[bj] * self.at(r, j);
                    }
                }
                if rc < -EPS_REDUCED {
                    entering = Some(j); // Bland: lowest index
                    break;
                }
            }
            let Some(col) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, col);
                if a > EPS_PIVOT {
                    let ratio = self.rhs(r) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((br, brat)) => {
                            // Bland tie-break: smallest ratio, then smallest basis index
                            if ratio < brat - 1e-12
                                || (ratio <= brat + 1e-12 && self.basis[r] < self.basis[br])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else { return false };
            self.pivot(row, col);
        }
    }
}

/// Solve `min c'x  s.t. a_ub x <= b_ub, bounds[j].0 <= x_j <= bounds[j].1`.
pub fn solve_lp(
    c: &DVector<f64>,
    a_ub: &DMatrix<f64>,
    b_ub: &DVector<f64>,
    bounds: &[(f64, f64)],
) -> Result<LpSolution> {
    let n = c.len();
    let m0 = a_ub.nrows();
    if a_ub.ncols() != n || b_ub.len() != m0 || bounds.len() != n {
        return Err(Error::DimensionMismatch("LP operand sizes".into()));
    }

    // variable transform bookkeeping
    enum VarMap {
        Shift { col: usize, lo: f64 },
        Reflect { col: usize, hi: f64 },
        Split { pos: usize, neg: usize },
    }

    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new(); // (transformed col, ub)
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        if lo > hi {
            return Err(Error::InvalidBounds(format!("LP bound {j}: lo > hi")));
        }
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: ncols, lo });
            if hi.is_finite() {
                upper_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Reflect { col: ncols, hi });
            ncols += 1;
        } else {
            maps.push(VarMap::Split { pos: ncols, neg: ncols + 1 });
            ncols += 2;
        }
    }

    let m = m0 + upper_rows.len();
    let total = ncols + m; // structural + slack
    let width = total + 1;

    let mut data = vec![0.0; m * width];
    let mut cost = vec![0.0; total];
    let mut const_term = 0.0;

    // structural columns and transformed costs
    for (j, map) in maps.iter().enumerate() {
        match *map {
            VarMap::Shift { col, lo } => {
                for i in 0..m0 {
                    data[i * width + col] = a_ub[(i, j)];
                }
                cost[col] = c[j];
                const_term += c[j] * lo;
            }
            VarMap::Reflect { col, hi } => {
                for i in 0..m0 {
                    data[i * width + col] = -a_ub[(i, j)];
                }
                cost[col] = -c[j];
                const_term += c[j] * hi;
            }
            VarMap::Split { pos, neg } => {
                for i in 0..m0 {
                    data[i * width + pos] = a_ub[(i, j)];
                    data[i * width + neg] = -a_ub[(i, j)];
                }
                cost[pos] = c[j];
                cost[neg] = -c[j];
            }
        }
    }
    // rhs after shifting/reflecting
    for i in 0..m0 {
        let mut rhs = b_ub[i];
        for (j, map) in maps.iter().enumerate() {
            match *map {
                VarMap::Shift { lo, .. } => rhs -= a_ub[(i, j)] * lo,
                VarMap::Reflect { hi, .. } => rhs -= a_ub[(i, j)] * hi,
                VarMap::Split { .. } => {}
            }
        }
        data[i * width + total] = rhs;
    }
    // upper-bound rows x'_col <= ub
    for (extra, &(col, ub)) in upper_rows.iter().enumerate() {
        let i = m0 + extra;
        data[i * width + col] = 1.0;
        data[i * width + total] = ub;
    }
    // slacks
    for i in 0..m {
        data[i * width + ncols + i] = 1.0;
    }

    let mut tab = Tableau { data, rows: m, cols: total, basis: (ncols..ncols + m).collect() };

    // phase 1: rows with negative rhs get an artificial after sign flip
    let mut artificials: Vec<usize> = Vec::new();
    let mut need_phase1 = false;
    for i in 0..m {
        if tab.rhs(i) < 0.0 {
            need_phase1 = true;
        }
    }
    if need_phase1 {
        let mut extra_cols = 0;
        for i in 0..m {
            if tab.rhs(i) < 0.0 {
                extra_cols += 1;
            }
        }
        let new_total = total + extra_cols;
        let new_width = new_total + 1;
        let mut data2 = vec![0.0; m * new_width];
        let mut art = total;
        let mut art_of_row = vec![usize::MAX; m];
        for i in 0..m {
            let negative = tab.rhs(i) < 0.0;
            let sign = if negative { -1.0 } else { 1.0 };
            for j in 0..total {
                data2[i * new_width + j] = sign * tab.at(i, j);
            }
            data2[i * new_width + new_total] = sign * tab.rhs(i);
            if negative {
                data2[i * new_width + art] = 1.0;
                art_of_row[i] = art;
                artificials.push(art);
                art += 1;
            }
        }
        let mut basis = tab.basis.clone();
        for i in 0..m {
            if art_of_row[i] != usize::MAX {
                basis[i] = art_of_row[i];
            }
        }
        tab = Tableau { data: data2, rows: m, cols: new_total, basis };

        let mut p1cost = vec![0.0; new_total];
        for &a in &artificials {
            p1cost[a] = 1.0;
        }
        if !tab.run(&p1cost, &|_| true) {
            return Err(Error::LpFailure("phase 1 unbounded".into()));
        }
        let p1val: f64 = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| artificials.contains(&b))
            .map(|(r, _)| tab.rhs(r))
            .sum();
        if p1val > EPS_FEAS {
            return Ok(LpSolution {
                x: DVector::zeros(n),
                objective: f64::NAN,
                status: LpStatus::Infeasible,
                row_duals: DVector::zeros(m0),
            });
        }
    }

    // phase 2: artificials may linger in the basis at zero but cannot re-enter
    let arts = artificials.clone();
    let mut cost2 = vec![0.0; tab.cols];
    cost2[..total].copy_from_slice(&cost);
    let allowed = move |j: usize| !arts.contains(&j);
    if !tab.run(&cost2, &allowed) {
        return Ok(LpSolution {
            x: DVector::zeros(n),
            objective: f64::NEG_INFINITY,
            status: LpStatus::Unbounded,
            row_duals: DVector::zeros(m0),
        });
    }

    // read structural values
    let mut y = vec![0.0; tab.cols];
    for (r, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(r);
    }
    let mut x = DVector::zeros(n);
    for (j, map) in maps.iter().enumerate() {
        x[j] = match *map {
            VarMap::Shift { col, lo } => lo + y[col],
            VarMap::Reflect { col, hi } => hi - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        };
    }
    let objective = c.dot(&x);
    debug_assert!((objective - (const_term + cost2.iter().zip(&y).map(|(c, v)| c * v).sum::<f64>())).abs() <= 1e-7 * (1.0 + objective.abs()));

    // duals of the original rows from the slack reduced costs
    let mut row_duals = DVector::zeros(m0);
    for i in 0..m0 {
        let slack_col = ncols + i;
        let mut rc = cost2[slack_col];
        for (r, &bj) in tab.basis.iter().enumerate() {
            if cost2[bj] != 0.0 {
                rc -= cost2[bj] * tab.at(r, slack_col);
            }
        }
        row_duals[i] = -rc;
    }

    Ok(LpSolution { x, objective, status: LpStatus::Optimal, row_duals })
}
