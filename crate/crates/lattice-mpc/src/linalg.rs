//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Pivot threshold below which a row is treated as dependent.
pub const PIVOT_TOL: f64 = 1e-10;

/// Matrix exponential by scaling-and-squaring of a truncated Taylor series.
///
/// The series is extended until the term's 1-norm drops below `tol` relative
/// to the accumulated sum.
pub fn expm(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    let norm = m.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64;
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..200 {
        term = (&term * &scaled) / k as f64;
        result += &term;
        let term_norm = term.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let result_norm = result.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if term_norm <= tol * result_norm.max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Indices of a maximal linearly independent subset of rows, chosen greedily
/// in ascending row order by elimination against the rows already accepted.
pub fn independent_rows(m: &DMatrix<f64>) -> Vec<usize> {
    let mut accepted: Vec<usize> = Vec::new();
    // reduced row together with its pivot column
    let mut pivots: Vec<(DVector<f64>, usize)> = Vec::new();
    for i in 0..m.nrows() {
        let mut row: DVector<f64> = m.row(i).transpose().into_owned();
        for (reduced, col) in &pivots {
            let factor = row[*col] / reduced[*col];
            if factor != 0.0 {
                row -= reduced * factor;
            }
        }
        let (col, mag) = row
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc });
        if mag > PIVOT_TOL {
            accepted.push(i);
            pivots.push((row, col));
        }
    }
    accepted
}

/// Solve a dense square system; `None` if singular to working precision.
pub fn solve_dense(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    a.lu().solve(&b)
}

/// Max-abs entry of a matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).fold(0.0, f64::max)
}
