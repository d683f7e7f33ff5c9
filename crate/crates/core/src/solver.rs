//! Solve `G(y) := y - h b(y) = r` for one implicit drift step.
//!
//! When `C_b h < 1`, `G` is strongly monotone with constant `1 - C_b h` and
//! therefore a homeomorphism with a `1 / (1 - C_b h)`-Lipschitz inverse, so
//! the solution exists and is unique. Newton's method from `r` is the
//! primary iteration; if its residual stalls, a damped fixed-point
//! iteration takes over.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fields::DriftField;
use crate::grid::euclid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("C_b h = {product} >= 1: implicit step is not well posed")]
    NotWellPosed { product: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("non-finite iterate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Newton,
    Contraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `|y - r - h b(y)|`, recomputed after the iteration stops.
    pub residual: f64,
    pub method_used: SolveMethod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Absolute residual tolerance.
    pub tol: f64,
    pub max_newton: usize,
    pub max_fallback: usize,
    /// Consecutive non-decreasing Newton residuals before switching.
    pub stall_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_newton: 50,
            max_fallback: 1000,
            stall_limit: 5,
        }
    }
}

fn residual_vec(b: &DriftField, h: f64, r: &[f64], y: &[f64]) -> Vec<f64> {
    let by = b.eval(y);
    y.iter()
        .zip(r)
        .zip(&by)
        .map(|((yi, ri), bi)| yi - ri - h * bi)
        .collect()
}

/// Drift Jacobian, analytic when available, otherwise central differences
/// with step `1e-7 * max(1, |y|)`.
fn drift_jacobian(b: &DriftField, y: &[f64]) -> Vec<f64> {
    if let Some(j) = b.jacobian(y) {
        return j;
    }
    let d = y.len();
    let eps = 1e-7 * euclid(y).max(1.0);
    let mut j = vec![0.0; d * d];
    let mut probe = y.to_vec();
    for col in 0..d {
        probe[col] = y[col] + eps;
        let up = b.eval(&probe);
        probe[col] = y[col] - eps;
        let dn = b.eval(&probe);
        probe[col] = y[col];
        for row in 0..d {
            j[row * d + col] = (up[row] - dn[row]) / (2.0 * eps);
        }
    }
    j
}

/// Solve `y - h b(y) = r` to absolute residual `options.tol`.
pub fn solve_step(
    b: &DriftField,
    h: f64,
    r: &[f64],
    options: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    let product = b.one_sided_lipschitz() * h;
    if product >= 1.0 {
        return Err(SolveError::NotWellPosed { product });
    }
    if !(options.tol > 0.0) {
        return Err(SolveError::BadTolerance(options.tol));
    }
    let d = r.len();
    let mut y = r.to_vec();
    let mut res = residual_vec(b, h, r, &y);
    let mut norm = euclid(&res);
    if norm <= options.tol {
        return Ok(SolveReport {
            solution: y,
            iterations: 0,
            residual: norm,
            method_used: SolveMethod::Newton,
        });
    }

    let mut best = (y.clone(), norm);
    let mut stalled = 0;
    for it in 1..=options.max_newton {
        let jb = drift_jacobian(b, &y);
        let jg = DMatrix::from_fn(d, d, |row, col| {
            let id = if row == col { 1.0 } else { 0.0 };
            id - h * jb[row * d + col]
        });
        let rhs = DVector::from_column_slice(&res);
        let Some(step) = jg.lu().solve(&rhs) else {
            break;
        };
        for (yi, si) in y.iter_mut().zip(step.iter()) {
            *yi -= si;
        }
        if y.iter().any(|v| !v.is_finite()) {
            break;
        }
        res = residual_vec(b, h, r, &y);
        let new_norm = euclid(&res);
        if new_norm <= options.tol {
            return Ok(SolveReport {
                solution: y,
                iterations: it,
                residual: new_norm,
                method_used: SolveMethod::Newton,
            });
        }
        if new_norm < best.1 {
            best = (y.clone(), new_norm);
        }
        stalled = if new_norm >= norm { stalled + 1 } else { 0 };
        norm = new_norm;
        if stalled >= options.stall_limit {
            break;
        }
    }

    // damped Picard: y <- (y + r + h b(y)) / 2, started from the best Newton iterate
    let (mut y, mut norm) = best;
    for it in 1..=options.max_fallback {
        let by = b.eval(&y);
        for a in 0..d {
            y[a] = 0.5 * y[a] + 0.5 * (r[a] + h * by[a]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite);
        }
        norm = euclid(&residual_vec(b, h, r, &y));
        if norm <= options.tol {
            return Ok(SolveReport {
                solution: y,
                iterations: options.max_newton + it,
                residual: norm,
                method_used: SolveMethod::Contraction,
            });
        }
    }
    Err(SolveError::NoConvergence {
        iterations: options.max_newton + options.max_fallback,
        residual: norm,
    })
}
