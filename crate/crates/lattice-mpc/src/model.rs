//! Linear MPC problem description and its condensation to a parametric QP.
//!
//! The finite-horizon problem
//!
//! ```text
//!   min  x_N' P x_N + sum_{k=0}^{N-1} ( x_k' Q x_k + u_k' R u_k )
//!   s.t. x_{k+1} = A x_k + B u_k
//!        u_min <= u_k <= u_max            k = 0..N-1
//!        x_min <= x_k <= x_max            k = 1..N
//!        cx' x_k + cu' u_k <= d           k = 0..N-1   (optional rows)
//! ```
//!
//! condenses to `min 1/2 U'HU + x'FU  s.t. GU <= w + Ex`, and after the
//! substitution `z = U + H^{-1}F'x` to `min 1/2 z'Hz  s.t. Gz <= w + Sx`
//! with `S = E + G H^{-1} F'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, max_abs};

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;
const S_IDENTITY_TOL: f64 = 1e-10;
pub const DARE_RESIDUAL_TOL: f64 = 1e-10;
const DARE_MAX_ITER: usize = 100_000;
const EXPM_TOL: f64 = 1e-12;

/// A general stage constraint `cx' x_k + cu' u_k <= d` imposed at steps 0..N-1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageConstraint {
    pub cx: Vec<f64>,
    pub cu: Vec<f64>,
    pub d: f64,
}

/// Linear MPC problem data. Bounds may be infinite; infinite rows generate no
/// constraint.
#[derive(Clone, Debug)]
pub struct MpcProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub horizon: usize,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub extra_rows: Vec<StageConstraint>,
}

impl MpcProblem {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Check symmetry, definiteness and dimension consistency.
    pub fn validate(&self) -> Result<()> {
        let nx = self.n_states();
        let nu = self.n_inputs();
        if self.a.ncols() != nx || self.b.nrows() != nx {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.nrows(),
                self.b.ncols()
            )));
        }
        if self.q.nrows() != nx || self.q.ncols() != nx || self.p.nrows() != nx || self.p.ncols() != nx {
            return Err(Error::DimensionMismatch("Q/P must be n_x x n_x".into()));
        }
        if self.r.nrows() != nu || self.r.ncols() != nu {
            return Err(Error::DimensionMismatch("R must be n_u x n_u".into()));
        }
        if self.x_min.len() != nx || self.x_max.len() != nx || self.u_min.len() != nu || self.u_max.len() != nu {
            return Err(Error::DimensionMismatch("bound vectors must match state/input sizes".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        check_symmetric(&self.q, "Q")?;
        check_symmetric(&self.p, "P")?;
        check_symmetric(&self.r, "R")?;
        check_psd(&self.q, "Q")?;
        check_psd(&self.p, "P")?;
        if self.r.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("R".into()));
        }
        for i in 0..nx {
            if self.x_min[i] >= self.x_max[i] {
                return Err(Error::InvalidBounds(format!("x_min[{i}] >= x_max[{i}]")));
            }
        }
        for i in 0..nu {
            if self.u_min[i] >= self.u_max[i] {
                return Err(Error::InvalidBounds(format!("u_min[{i}] >= u_max[{i}]")));
            }
        }
        for (k, row) in self.extra_rows.iter().enumerate() {
            if row.cx.len() != nx || row.cu.len() != nu {
                return Err(Error::DimensionMismatch(format!("extra row {k} has wrong arity")));
            }
        }
        Ok(())
    }

    /// One step of the closed-loop dynamics.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// Stage cost `x'Qx + u'Ru`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let scale = max_abs(m).max(1.0);
    if max_abs(&(m - m.transpose())) > SYMMETRY_TOL * scale {
        return Err(Error::Config(format!("{name} is not symmetric")));
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let sym = (m + m.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    let scale = max_abs(m).max(1.0);
    if eigs.iter().any(|&e| e < -PSD_TOL * scale) {
        return Err(Error::NotPositiveSemidefinite(name.into()));
    }
    Ok(())
}

/// Condensed parametric QP `min 1/2 z'Hz s.t. Gz <= w + Sx`.
#[derive(Clone, Debug)]
pub struct CondensedQp {
    pub h: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub e: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Precomputed `H^{-1} F'`, used to map z back to U.
    pub hinv_ft: DMatrix<f64>,
    pub hinv: DMatrix<f64>,
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    pub n_rows: usize,
}

impl CondensedQp {
    /// Right-hand side `w + Sx` of the constraint system at a given state.
    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w + &self.s * x
    }

    /// Map the shifted variable `z` back to the input sequence `U`.
    pub fn u_from_z(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        z - &self.hinv_ft * x
    }

    /// First input of the optimal sequence.
    pub fn first_input(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        (self.u_from_z(z, x))[0]
    }
}

/// Build the condensed QP from the MPC problem.
///
/// State stacking uses `X = Sx_mat x0 + Su U` with `Sx_mat = [A; A^2; ...]`
/// and `Su` block lower triangular with blocks `A^{i-j-1} B`. The cost
/// matrices are `H = 2(Su' Qbar Su + Rbar)` and `F = 2 Sx' Qbar Su` with
/// `Qbar = blkdiag(Q, ..., Q, P)` and `Rbar = blkdiag(R, ..., R)`.
pub fn condense(problem: &MpcProblem) -> Result<CondensedQp> {
    problem.validate()?;
    let nx = problem.n_states();
    let nu = problem.n_inputs();
    let n = problem.horizon;
    let m = n * nu;

    // powers of A
    let mut a_pow: Vec<DMatrix<f64>> = Vec::with_capacity(n + 1);
    a_pow.push(DMatrix::identity(nx, nx));
    for k in 0..n {
        let next = &a_pow[k] * &problem.a;
        a_pow.push(next);
    }

    let mut sx = DMatrix::zeros(n * nx, nx);
    let mut su = DMatrix::zeros(n * nx, m);
    for k in 1..=n {
        sx.view_mut(((k - 1) * nx, 0), (nx, nx)).copy_from(&a_pow[k]);
        for j in 0..k {
            let block = &a_pow[k - 1 - j] * &problem.b;
            su.view_mut(((k - 1) * nx, j * nu), (nx, nu)).copy_from(&block);
        }
    }

    let mut qbar = DMatrix::zeros(n * nx, n * nx);
    for k in 0..n {
        let blk = if k + 1 == n { &problem.p } else { &problem.q };
        qbar.view_mut((k * nx, k * nx), (nx, nx)).copy_from(blk);
    }
    let mut rbar = DMatrix::zeros(m, m);
    for k in 0..n {
        rbar.view_mut((k * nu, k * nu), (nu, nu)).copy_from(&problem.r);
    }

    let h = (su.transpose() * &qbar * &su + rbar) * 2.0;
    let f = sx.transpose() * &qbar * &su * 2.0;

    // constraint rows: input bounds first so that degenerate active sets
    // reduce onto the input rows, then state bounds, then extra rows
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut w_vals: Vec<f64> = Vec::new();
    let mut e_rows: Vec<Vec<f64>> = Vec::new();

    let mut push = |g: Vec<f64>, w: f64, e: Vec<f64>| {
        g_rows.push(g);
        w_vals.push(w);
        e_rows.push(e);
    };

    for k in 0..n {
        for i in 0..nu {
            if problem.u_max[i].is_finite() {
                let mut g = vec![0.0; m];
                g[k * nu + i] = 1.0;
                push(g, problem.u_max[i], vec![0.0; nx]);
            }
        }
    }
    for k in 0..n {
        for i in 0..nu {
            if problem.u_min[i].is_finite() {
                let mut g = vec![0.0; m];
                g[k * nu + i] = -1.0;
                push(g, -problem.u_min[i], vec![0.0; nx]);
            }
        }
    }
    for k in 1..=n {
        for i in 0..nx {
            if problem.x_max[i].is_finite() {
                let g: Vec<f64> = (0..m).map(|j| su[((k - 1) * nx + i, j)]).collect();
                let e: Vec<f64> = (0..nx).map(|j| -sx[((k - 1) * nx + i, j)]).collect();
                push(g, problem.x_max[i], e);
            }
        }
    }
    for k in 1..=n {
        for i in 0..nx {
            if problem.x_min[i].is_finite() {
                let g: Vec<f64> = (0..m).map(|j| -su[((k - 1) * nx + i, j)]).collect();
                let e: Vec<f64> = (0..nx).map(|j| sx[((k - 1) * nx + i, j)]).collect();
                push(g, -problem.x_min[i], e);
            }
        }
    }
    for row in &problem.extra_rows {
        let cx = DVector::from_column_slice(&row.cx);
        let cu = DVector::from_column_slice(&row.cu);
        for k in 0..n {
            // cx' x_k + cu' u_k <= d with x_k = Sx_k x + Su_k U (x_0 = x)
            let mut g = vec![0.0; m];
            let mut e = vec![0.0; nx];
            if k == 0 {
                for j in 0..nx {
                    e[j] = -cx[j];
                }
            } else {
                for j in 0..m {
                    let mut acc = 0.0;
                    for i in 0..nx {
                        acc += cx[i] * su[((k - 1) * nx + i, j)];
                    }
                    g[j] = acc;
                }
                for j in 0..nx {
                    let mut acc = 0.0;
                    for i in 0..nx {
                        acc += cx[i] * sx[((k - 1) * nx + i, j)];
                    }
                    e[j] = -acc;
                }
            }
            for j in 0..nu {
                g[k * nu + j] += cu[j];
            }
            push(g, row.d, e);
        }
    }

    let p_rows = g_rows.len();
    let mut g = DMatrix::zeros(p_rows, m);
    let mut e = DMatrix::zeros(p_rows, nx);
    let mut w = DVector::zeros(p_rows);
    for (i, row) in g_rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            g[(i, j)] = *v;
        }
        w[i] = w_vals[i];
        for (j, v) in e_rows[i].iter().enumerate() {
            e[(i, j)] = *v;
        }
    }

    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("H (condensed cost)".into()))?;
    let hinv = chol.inverse();
    let hinv_ft = &hinv * f.transpose();
    let s = &e + &g * &hinv * f.transpose();

    debug_assert!(max_abs(&(&s - (&e + &g * &hinv_ft.clone()))) <= S_IDENTITY_TOL);

    Ok(CondensedQp {
        h,
        f,
        g,
        w,
        e,
        s,
        hinv_ft,
        hinv,
        n_x: nx,
        n_u: nu,
        horizon: n,
        n_rows: p_rows,
    })
}

/// Solve the discrete algebraic Riccati equation by fixed-point iteration.
///
/// Iterates `P <- A'PA - A'PB (R + B'PB)^{-1} B'PA + Q` from `P = Q` until the
/// update stalls, then checks the fixed-point residual against 1e-10.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let nx = a.nrows();
    if a.ncols() != nx || b.nrows() != nx || q.nrows() != nx || q.ncols() != nx {
        return Err(Error::DimensionMismatch("DARE operand sizes".into()));
    }
    let nu = b.ncols();
    if r.nrows() != nu || r.ncols() != nu {
        return Err(Error::DimensionMismatch("R must be n_u x n_u".into()));
    }
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let btpb = r + b.transpose() * &p * b;
        let inv = btpb
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("R + B'PB".into()))?
            .inverse();
        let next = a.transpose() * &p * a - a.transpose() * &p * b * inv * b.transpose() * &p * a + q;
        // symmetrize to stop drift
        let next = (&next + next.transpose()) * 0.5;
        residual = max_abs(&(&next - &p));
        p = next;
        if residual <= 1e-14 * max_abs(&p).max(1.0) {
            break;
        }
    }
    let btpb = r + b.transpose() * &p * b;
    let inv = btpb
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R + B'PB".into()))?
        .inverse();
    let fixed = a.transpose() * &p * a - a.transpose() * &p * b * inv * b.transpose() * &p * a + q;
    let res = max_abs(&(&fixed - &p));
    if res > DARE_RESIDUAL_TOL {
        return Err(Error::DareDidNotConverge { iterations: DARE_MAX_ITER, residual: residual.min(res) });
    }
    Ok(p)
}

/// Infinite-horizon LQR gain `K` with `u = -Kx`, from the DARE solution.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let btpb = r + b.transpose() * p * b;
    let inv = btpb
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R + B'PB".into()))?
        .inverse();
    Ok(inv * b.transpose() * p * a)
}

/// Zero-order-hold discretization via the augmented matrix exponential.
pub fn discretize_zoh(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if ts <= 0.0 {
        return Err(Error::Config("sampling time must be positive".into()));
    }
    let nx = a_c.nrows();
    let nu = b_c.ncols();
    if a_c.ncols() != nx || b_c.nrows() != nx {
        return Err(Error::DimensionMismatch("A_c/B_c sizes".into()));
    }
    let mut aug = DMatrix::zeros(nx + nu, nx + nu);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&(a_c * ts));
    aug.view_mut((0, nx), (nx, nu)).copy_from(&(b_c * ts));
    let e = expm(&aug, EXPM_TOL);
    let a = e.view((0, 0), (nx, nx)).into_owned();
    let b = e.view((0, nx), (nx, nu)).into_owned();
    Ok((a, b))
}

// ---------------------------------------------------------------------------
// JSON problem specification
// ---------------------------------------------------------------------------

/// Terminal-weight field: either the literal string "dare" or a matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalWeight {
    Keyword(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuousModel {
    pub a_c: Vec<Vec<f64>>,
    pub b_c: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// On-disk problem description. Matrices are row-major; bound entries may be
/// `null` for an unbounded coordinate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default, rename = "A")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, rename = "B")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: TerminalWeight,
    #[serde(rename = "N_p")]
    pub n_p: usize,
    pub x_min: Vec<Option<f64>>,
    pub x_max: Vec<Option<f64>>,
    pub u_min: Vec<Option<f64>>,
    pub u_max: Vec<Option<f64>>,
    pub domain: DomainSpec,
    #[serde(default, rename = "Ts")]
    pub ts: Option<f64>,
    #[serde(default)]
    pub continuous: Option<ContinuousModel>,
    #[serde(default)]
    pub extra_rows: Vec<StageConstraint>,
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::Config("empty matrix in problem spec".into()));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config("ragged matrix in problem spec".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nr, nc, &flat))
}

fn to_bound(vals: &[Option<f64>], sign: f64) -> DVector<f64> {
    DVector::from_iterator(vals.len(), vals.iter().map(|v| v.unwrap_or(sign * f64::INFINITY)))
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Resolve the spec into a validated problem and the sampling domain.
    pub fn build(&self) -> Result<(MpcProblem, crate::sampler::Hyperbox)> {
        let (a, b) = match (&self.a, &self.b, &self.continuous, self.ts) {
            (Some(a), Some(b), _, _) => (to_matrix(a)?, to_matrix(b)?),
            (None, None, Some(cont), Some(ts)) => {
                discretize_zoh(&to_matrix(&cont.a_c)?, &to_matrix(&cont.b_c)?, ts)?
            }
            _ => {
                return Err(Error::Config(
                    "problem spec needs either A and B or continuous {A_c, B_c} with Ts".into(),
                ))
            }
        };
        let q = to_matrix(&self.q)?;
        let r = to_matrix(&self.r)?;
        let p = match &self.p {
            TerminalWeight::Keyword(k) if k == "dare" => solve_dare(&a, &b, &q, &r)?,
            TerminalWeight::Keyword(k) => {
                return Err(Error::Config(format!("unknown terminal weight keyword '{k}'")))
            }
            TerminalWeight::Matrix(m) => to_matrix(m)?,
        };
        let problem = MpcProblem {
            a,
            b,
            q,
            r,
            p,
            horizon: self.n_p,
            x_min: to_bound(&self.x_min, -1.0),
            x_max: to_bound(&self.x_max, 1.0),
            u_min: to_bound(&self.u_min, -1.0),
            u_max: to_bound(&self.u_max, 1.0),
            extra_rows: self.extra_rows.clone(),
        };
        problem.validate()?;
        let domain = crate::sampler::Hyperbox::new(
            DVector::from_column_slice(&self.domain.lo),
            DVector::from_column_slice(&self.domain.hi),
        )?;
        if domain.dim() != problem.n_states() {
            return Err(Error::DimensionMismatch("domain dimension != n_x".into()));
        }
        Ok((problem, domain))
    }
}

/// Serializable mirror of [`CondensedQp`] (row-major matrices).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CondensedQpFile {
    pub h: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

impl CondensedQpFile {
    pub fn from_qp(qp: &CondensedQp) -> Self {
        CondensedQpFile {
            h: matrix_rows(&qp.h),
            f: matrix_rows(&qp.f),
            g: matrix_rows(&qp.g),
            w: qp.w.iter().copied().collect(),
            e: matrix_rows(&qp.e),
            s: matrix_rows(&qp.s),
            n_x: qp.n_x,
            n_u: qp.n_u,
            horizon: qp.horizon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn simple_1d() -> MpcProblem {
        MpcProblem {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, 1.0),
            q: DMatrix::from_element(1, 1, 1.0),
            r: DMatrix::from_element(1, 1, 1.0),
            p: DMatrix::from_element(1, 1, 0.0),
            horizon: 1,
            x_min: DVector::from_element(1, f64::NEG_INFINITY),
            x_max: DVector::from_element(1, f64::INFINITY),
            u_min: DVector::from_element(1, -1.0),
            u_max: DVector::from_element(1, 1.0),
            extra_rows: vec![],
        }
    }

    #[test]
    fn condense_trivial_1d() {
        // terminal weight zero leaves only u0' R u0, so H = 2R = 2 and F = 0
        let qp = condense(&simple_1d()).unwrap();
        assert_abs_diff_eq!(qp.h[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(qp.f[(0, 0)], 0.0, epsilon = 1e-12);
        assert_eq!(qp.n_rows, 2);
        assert_abs_diff_eq!(qp.g[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(qp.g[(1, 0)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(qp.w[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(qp.w[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(max_abs(&qp.e), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn condense_rejects_indefinite_r() {
        let mut p = simple_1d();
        p.r[(0, 0)] = -1.0;
        assert!(condense(&p).is_err());
    }

    #[test]
    fn condense_rejects_bad_dimensions() {
        let mut p = simple_1d();
        p.x_min = DVector::from_element(2, -1.0);
        assert!(condense(&p).is_err());
    }

    #[test]
    fn dare_one_step_decay() {
        // A = 0 makes the closed loop die in one step, so P = Q
        let a = DMatrix::from_element(1, 1, 0.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let r = DMatrix::from_element(1, 1, 1.0);
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        // a=b=q=r=1: p^2 - p - 1 = 0, positive root (1+sqrt(5))/2
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = solve_dare(&one, &one, &one, &one).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], (1.0 + 5.0_f64.sqrt()) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn dare_residual_and_symmetry() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.09, 0.3]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = DMatrix::from_element(1, 1, 1.0);
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(max_abs(&(&p - p.transpose())) <= 1e-12);
        let inv = (&r + b.transpose() * &p * &b).try_inverse().unwrap();
        let fixed = a.transpose() * &p * &a
            - a.transpose() * &p * &b * inv * b.transpose() * &p * &a
            + &q;
        assert!(max_abs(&(&fixed - &p)) <= 1e-10);
    }

    #[test]
    fn dare_gain_matches_double_integrator_literal() {
        // with B = [Ts^2; Ts] the unconstrained law is u = -0.8082 x1 - 1.1559 x2
        let ts = 0.3;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[ts * ts, ts]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = DMatrix::from_element(1, 1, 1.0);
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        let k = lqr_gain(&a, &b, &p, &r).unwrap();
        assert_abs_diff_eq!(-k[(0, 0)], -0.8082, epsilon = 1e-4);
        assert_abs_diff_eq!(-k[(0, 1)], -1.1559, epsilon = 1e-4);
    }

    #[test]
    fn zoh_zero_dynamics() {
        let a_c = DMatrix::from_element(1, 1, 0.0);
        let b_c = DMatrix::from_element(1, 1, 1.0);
        let (a, b) = discretize_zoh(&a_c, &b_c, 1.0).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zoh_scalar_decay() {
        let a_c = DMatrix::from_element(1, 1, -1.0);
        let b_c = DMatrix::from_element(1, 1, 1.0);
        let (a, b) = discretize_zoh(&a_c, &b_c, 1.0).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(b[(0, 0)], 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn zoh_lag_chain_spectrum() {
        // ten cascaded 1/(s+1) stages; all discrete eigenvalues equal e^{-1}.
        // A tenfold defective eigenvalue scatters badly in any numerical
        // eigensolver, so check the exact symmetric functions instead:
        // trace/n and det^{1/n} both pin the common eigenvalue.
        let n = 10;
        let mut a_c = DMatrix::from_diagonal_element(n, n, -1.0);
        for i in 1..n {
            a_c[(i, i - 1)] = 1.0;
        }
        let mut b_c = DMatrix::zeros(n, 1);
        b_c[(0, 0)] = 1.0;
        let (a, b) = discretize_zoh(&a_c, &b_c, 1.0).unwrap();
        assert_eq!(b.nrows(), 10);
        assert_eq!(b.ncols(), 1);
        let target = (-1.0f64).exp();
        assert_abs_diff_eq!(a.trace() / n as f64, target, epsilon = 1e-8);
        assert_abs_diff_eq!(a.determinant().powf(1.0 / n as f64), target, epsilon = 1e-8);
        // lower-triangular structure makes the diagonal the spectrum exactly
        for i in 0..n {
            assert_abs_diff_eq!(a[(i, i)], target, epsilon = 1e-12);
        }
    }

    #[test]
    fn problem_spec_parses_with_dare_keyword() {
        let text = r#"{
            "A": [[1.0, 0.3], [0.0, 1.0]],
            "B": [[0.09], [0.3]],
            "Q": [[1.0, 0.0], [0.0, 0.0]],
            "R": [[1.0]],
            "P": "dare",
            "N_p": 2,
            "x_min": [null, -0.8],
            "x_max": [null, 0.8],
            "u_min": [-1.0],
            "u_max": [1.0],
            "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}
        }"#;
        let spec = ProblemSpec::from_json(text).unwrap();
        let (problem, domain) = spec.build().unwrap();
        assert_eq!(problem.horizon, 2);
        assert!(problem.x_max[0].is_infinite());
        assert_abs_diff_eq!(problem.x_max[1], 0.8, epsilon = 1e-15);
        assert_eq!(domain.dim(), 2);
        // P came from the DARE
        let k = lqr_gain(&problem.a, &problem.b, &problem.p, &problem.r).unwrap();
        assert_abs_diff_eq!(k[(0, 0)], 0.8082, epsilon = 1e-4);
    }
}
