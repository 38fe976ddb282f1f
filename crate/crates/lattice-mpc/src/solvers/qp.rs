//! Primal active-set solver for the strictly convex parametric QP
//! `min 1/2 z'Hz  s.t. Gz <= w + Sx`.
//!
//! The solver starts from the unconstrained minimizer `z = 0` when feasible,
//! otherwise finds a feasible point with a phase-1 LP. Each iteration solves
//! the equality-constrained subproblem on the working set through its KKT
//! system, steps toward that minimizer with a ratio test, and adds the
//! blocking row (always independent of the working set since its gradient
//! has a nonzero product with the step). A warm start from a previous active
//! set short-circuits the whole loop when the guess is exactly right, which
//! is the common case for neighboring grid points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::independent_rows;
use crate::model::CondensedQp;
use crate::solvers::lp::{solve_lp, LpStatus};

/// Residual tolerance for declaring a constraint active at the optimum.
pub const TOL_ACT: f64 = 1e-8;
/// Multipliers may sit this far below zero before counting as dual-infeasible.
pub const TOL_MULT: f64 = 1e-9;
/// Phase-1 slack above this means the point is infeasible.
const TOL_FEAS: f64 = 1e-7;
const STEP_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

/// Pointwise QP solution with its exactly detected active set.
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Sorted indices of rows with `|G_j z - w_j - S_j x| <= TOL_ACT`.
    pub active_set: Vec<usize>,
    /// Multipliers aligned with `active_set`; zero on rows dropped by the
    /// independence reduction.
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Active rows were linearly dependent (primary degeneracy).
    pub degenerate: bool,
    /// Some active row carries a (near-)zero multiplier.
    pub weakly_active: bool,
}

impl QpSolution {
    fn infeasible(m: usize) -> Self {
        QpSolution {
            z: DVector::zeros(m),
            active_set: Vec::new(),
            multipliers: Vec::new(),
            objective: f64::NAN,
            status: QpStatus::Infeasible,
            degenerate: false,
            weakly_active: false,
        }
    }
}

/// Solve the QP at parameter `x`.
pub fn solve_qp(qp: &CondensedQp, x: &DVector<f64>) -> Result<QpSolution> {
    solve_qp_warm(qp, x, &[])
}

/// Solve with a working-set hint (e.g. the active set at a neighboring state).
pub fn solve_qp_warm(qp: &CondensedQp, x: &DVector<f64>, hint: &[usize]) -> Result<QpSolution> {
    let b = qp.rhs(x);
    let m = qp.h.nrows();
    let p = qp.g.nrows();

    // fast path: unconstrained minimizer feasible
    if (0..p).all(|j| b[j] >= -1e-12) {
        let z = DVector::zeros(m);
        return Ok(finish(qp, x, z, &b));
    }

    // warm start: solve the EQP on the hinted set and accept if it is a
    // KKT point for the full problem
    if !hint.is_empty() {
        let hint: Vec<usize> = hint.iter().copied().filter(|&j| j < p).collect();
        let keep = independent_subset(qp, &hint);
        if !keep.is_empty() {
            if let Some((z, lambda)) = eqp_solve(qp, &keep, &b) {
                let feasible = (0..p).all(|j| row_dot(&qp.g, j, &z) <= b[j] + TOL_ACT);
                if feasible && lambda.iter().all(|&l| l >= -TOL_MULT) {
                    return Ok(finish(qp, x, z, &b));
                }
            }
        }
    }

    // phase 1: min t s.t. Gz - t <= b, t >= 0
    let mut c = DVector::zeros(m + 1);
    c[m] = 1.0;
    let mut a_ub = DMatrix::zeros(p, m + 1);
    a_ub.view_mut((0, 0), (p, m)).copy_from(&qp.g);
    for i in 0..p {
        a_ub[(i, m)] = -1.0;
    }
    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); m];
    bounds.push((0.0, f64::INFINITY));
    let lp = solve_lp(&c, &a_ub, &b, &bounds)?;
    if lp.status != LpStatus::Optimal {
        return Err(Error::LpFailure(format!("phase-1 LP ended {:?}", lp.status)));
    }
    if lp.x[m] > TOL_FEAS {
        return Ok(QpSolution::infeasible(m));
    }
    let mut z = DVector::from_iterator(m, (0..m).map(|j| lp.x[j]));

    // working set: independent subset of rows active at the start point
    let active: Vec<usize> = (0..p).filter(|&j| row_dot(&qp.g, j, &z) - b[j] >= -1e-9).collect();
    let mut work = independent_subset(qp, &active);
    work.truncate(m);

    let max_iter = 100 * (p + m + 1);
    for _ in 0..max_iter {
        let (y, lambda) = match eqp_solve(qp, &work, &b) {
            Some(r) => r,
            None => {
                // dependent working set can only arise from the phase-1 seed
                work = independent_subset(qp, &work);
                continue;
            }
        };
        let d = &y - &z;
        let step = d.amax();
        if step <= STEP_TOL * (1.0 + z.amax()) {
            if let Some(worst) = most_negative(&lambda) {
                work.remove(worst);
                continue;
            }
            return Ok(finish(qp, x, y, &b));
        }
        // ratio test toward y
        let mut alpha = 1.0;
        let mut blocking = None;
        for j in 0..p {
            if work.contains(&j) {
                continue;
            }
            let gd = row_dot(&qp.g, j, &d);
            if gd > 1e-13 {
                let slack = b[j] - row_dot(&qp.g, j, &z);
                let ratio = (slack / gd).max(0.0);
                if ratio < alpha - 1e-15 {
                    alpha = ratio;
                    blocking = Some(j);
                }
            }
        }
        z += d * alpha;
        match blocking {
            Some(j) => {
                work.push(j);
                work.sort_unstable();
            }
            None => {
                // full step reached the EQP minimizer; loop re-checks multipliers
                z = y;
            }
        }
    }
    Err(Error::QpStalled(max_iter))
}

fn row_dot(g: &DMatrix<f64>, row: usize, v: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..g.ncols() {
        acc += g[(row, j)] * v[j];
    }
    acc
}

fn independent_subset(qp: &CondensedQp, rows: &[usize]) -> Vec<usize> {
    if rows.is_empty() {
        return Vec::new();
    }
    let sub = qp.g.select_rows(rows.iter());
    independent_rows(&sub).into_iter().map(|i| rows[i]).collect()
}

/// Solve the equality-constrained QP on the working set via its KKT system.
fn eqp_solve(qp: &CondensedQp, work: &[usize], b: &DVector<f64>) -> Option<(DVector<f64>, Vec<f64>)> {
    let m = qp.h.nrows();
    let q = work.len();
    if q == 0 {
        return Some((DVector::zeros(m), Vec::new()));
    }
    let mut kkt = DMatrix::zeros(m + q, m + q);
    kkt.view_mut((0, 0), (m, m)).copy_from(&qp.h);
    for (r, &row) in work.iter().enumerate() {
        for j in 0..m {
            kkt[(j, m + r)] = qp.g[(row, j)];
            kkt[(m + r, j)] = qp.g[(row, j)];
        }
    }
    let mut rhs = DVector::zeros(m + q);
    for (r, &row) in work.iter().enumerate() {
        rhs[m + r] = b[row];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let z = sol.rows(0, m).into_owned();
    let lambda: Vec<f64> = (0..q).map(|r| sol[m + r]).collect();
    Some((z, lambda))
}

fn most_negative(lambda: &[f64]) -> Option<usize> {
    let mut worst = None;
    let mut val = -TOL_MULT;
    for (i, &l) in lambda.iter().enumerate() {
        if l < val {
            val = l;
            worst = Some(i);
        }
    }
    worst
}

/// Assemble the solution record: tolerance-detected active set, reduced
/// multipliers, degeneracy flags.
fn finish(qp: &CondensedQp, _x: &DVector<f64>, z: DVector<f64>, b: &DVector<f64>) -> QpSolution {
    let p = qp.g.nrows();
    let active_set: Vec<usize> =
        (0..p).filter(|&j| (row_dot(&qp.g, j, &z) - b[j]).abs() <= TOL_ACT).collect();
    let reduced = independent_subset(qp, &active_set);
    let degenerate = reduced.len() < active_set.len();

    let mut multipliers = vec![0.0; active_set.len()];
    let mut weakly_active = false;
    if !reduced.is_empty() {
        // lambda = -(G_A H^{-1} G_A')^{-1} (w_A + S_A x) on the reduced set
        let ga = qp.g.select_rows(reduced.iter());
        let ba = DVector::from_iterator(reduced.len(), reduced.iter().map(|&j| b[j]));
        let gram = &ga * &qp.hinv * ga.transpose();
        if let Some(lam) = gram.lu().solve(&(-&ba)) {
            for (r, &row) in reduced.iter().enumerate() {
                let pos = active_set.iter().position(|&a| a == row).unwrap();
                multipliers[pos] = lam[r];
                if lam[r] < TOL_MULT {
                    weakly_active = true;
                }
            }
        }
    }
    let objective = 0.5 * (z.transpose() * &qp.h * &z)[(0, 0)];
    QpSolution {
        z,
        active_set,
        multipliers,
        objective,
        status: QpStatus::Optimal,
        degenerate,
        weakly_active,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{condense, MpcProblem};
    use approx::assert_abs_diff_eq;

    fn box_only_1d(h: f64, upper: f64) -> CondensedQp {
        // hand-built 1-D QP: min 1/2 h z^2 s.t. z <= upper (w = upper, S = 0)
        let hm = DMatrix::from_element(1, 1, h);
        let hinv = DMatrix::from_element(1, 1, 1.0 / h);
        CondensedQp {
            h: hm.clone(),
            f: DMatrix::zeros(1, 1),
            g: DMatrix::from_element(1, 1, 1.0),
            w: DVector::from_element(1, upper),
            e: DMatrix::zeros(1, 1),
            s: DMatrix::zeros(1, 1),
            hinv_ft: DMatrix::zeros(1, 1),
            hinv,
            n_x: 1,
            n_u: 1,
            horizon: 1,
            n_rows: 1,
        }
    }

    #[test]
    fn unconstrained_minimizer_is_zero() {
        let qp = box_only_1d(2.0, 1.0);
        let sol = solve_qp(&qp, &DVector::zeros(1)).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 0.0, epsilon = 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn binding_upper_bound_kkt() {
        // min 1/2 * 2 z^2 s.t. z <= -1 binds: z* = -1, lambda = 2
        let qp = box_only_1d(2.0, -1.0);
        let sol = solve_qp(&qp, &DVector::zeros(1)).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], -1.0, epsilon = 1e-10);
        assert_eq!(sol.active_set, vec![0]);
        assert_abs_diff_eq!(sol.multipliers[0], 2.0, epsilon = 1e-9);
    }

    fn double_integrator() -> CondensedQp {
        let ts = 0.3;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[ts * ts, ts]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = DMatrix::from_element(1, 1, 1.0);
        let p = crate::model::solve_dare(&a, &b, &q, &r).unwrap();
        let problem = MpcProblem {
            a,
            b,
            q,
            r,
            p,
            horizon: 2,
            x_min: DVector::from_column_slice(&[f64::NEG_INFINITY, -0.8]),
            x_max: DVector::from_column_slice(&[f64::INFINITY, 0.8]),
            u_min: DVector::from_element(1, -1.0),
            u_max: DVector::from_element(1, 1.0),
            extra_rows: vec![],
        };
        condense(&problem).unwrap()
    }

    #[test]
    fn lqr_fixed_point_at_origin() {
        let qp = double_integrator();
        let sol = solve_qp(&qp, &DVector::zeros(2)).unwrap();
        let u = qp.u_from_z(&sol.z, &DVector::zeros(2));
        assert!(u.amax() <= 1e-10);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn saturated_state_is_clipped() {
        let qp = double_integrator();
        let x = DVector::from_column_slice(&[-1.5, -0.7]);
        let sol = solve_qp(&qp, &x).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let u = qp.first_input(&sol.z, &x);
        assert_abs_diff_eq!(u, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn kkt_invariants_on_a_grid() {
        let qp = double_integrator();
        for i in 0..9 {
            for j in 0..9 {
                let x = DVector::from_column_slice(&[-1.0 + 0.25 * i as f64, -0.8 + 0.2 * j as f64]);
                let sol = solve_qp(&qp, &x).unwrap();
                if sol.status != QpStatus::Optimal {
                    continue;
                }
                let b = qp.rhs(&x);
                // stationarity with the reported multipliers
                let mut grad = &qp.h * &sol.z;
                for (idx, &row) in sol.active_set.iter().enumerate() {
                    for k in 0..qp.h.nrows() {
                        grad[k] += qp.g[(row, k)] * sol.multipliers[idx];
                    }
                }
                assert!(grad.amax() <= 1e-8, "stationarity failed at {x:?}");
                for &l in &sol.multipliers {
                    assert!(l >= -1e-9);
                }
                for j in 0..qp.g.nrows() {
                    let resid = (0..qp.h.nrows()).map(|k| qp.g[(j, k)] * sol.z[k]).sum::<f64>() - b[j];
                    if sol.active_set.contains(&j) {
                        assert!(resid.abs() <= TOL_ACT);
                    } else {
                        assert!(resid < TOL_ACT);
                    }
                }
            }
        }
    }

    #[test]
    fn infeasible_point_reported() {
        let qp = double_integrator();
        // x2 = 1.2 cannot be brought into the +-0.8 band in one step
        let sol = solve_qp(&qp, &DVector::from_column_slice(&[0.0, 1.2])).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn warm_start_matches_cold() {
        let qp = double_integrator();
        let x = DVector::from_column_slice(&[-1.5, -0.7]);
        let cold = solve_qp(&qp, &x).unwrap();
        let warm = solve_qp_warm(&qp, &x, &cold.active_set).unwrap();
        assert_eq!(cold.active_set, warm.active_set);
        assert!((&cold.z - &warm.z).amax() <= 1e-9);
    }

    #[test]
    fn deterministic_resolve() {
        let qp = double_integrator();
        let x = DVector::from_column_slice(&[0.9, -0.5]);
        let a = solve_qp(&qp, &x).unwrap();
        let b = solve_qp(&qp, &x).unwrap();
        assert_eq!(a.active_set, b.active_set);
        assert_eq!(a.z, b.z);
    }
}
