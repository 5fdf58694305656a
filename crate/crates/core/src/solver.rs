//! Jacobi-preconditioned conjugate gradients and a dense direct oracle.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest system accepted by [`dense_solve`].
pub const DENSE_MAX_DIM: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// `||b - M x|| / ||b||` recomputed from the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Default iteration cap `20 sqrt(n) + 1000`.
pub fn default_max_iter(n: usize) -> usize {
    20 * (n as f64).sqrt().ceil() as usize + 1000
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual(m: &SparseMatrix, b: &[f64], x: &[f64]) -> f64 {
    let mx = m.mul(x);
    let r: Vec<f64> = b.iter().zip(&mx).map(|(bi, yi)| bi - yi).collect();
    norm(&r)
}

pub fn cg_solve(
    m: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    cg_solve_observed(m, b, tol, max_iter, |_, _| {})
}

/// [`cg_solve`] calling `observe(iteration, x)` after every update.
pub fn cg_solve_observed<F>(
    m: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    mut observe: F,
) -> Result<(Vec<f64>, SolveStats)>
where
    F: FnMut(usize, &[f64]),
{
    let n = m.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs has length {}, matrix has {n} rows",
            b.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let diag = m.diagonal();
    if let Some((row, &value)) = diag.iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
        return Err(Error::NotSpd { row, value });
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut iterations = 0;

    while iterations < max_iter {
        m.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotSpd { row: 0, value: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        observe(iterations, &x);

        if norm(&r) <= tol * b_norm {
            // the recursive residual drifts from the true one; confirm
            let rel = true_residual(m, b, &x) / b_norm;
            if rel <= tol {
                return Ok((
                    x,
                    SolveStats {
                        iterations,
                        relative_residual: rel,
                        converged: true,
                    },
                ));
            }
            let mx = m.mul(&x);
            for i in 0..n {
                r[i] = b[i] - mx[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Err(Error::NonConvergence {
        stats: SolveStats {
            iterations,
            relative_residual: true_residual(m, b, &x) / b_norm,
            converged: false,
        },
    })
}

/// Gaussian elimination with partial pivoting on the densified matrix.
pub fn dense_solve(m: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    if n > DENSE_MAX_DIM {
        return Err(Error::DimensionMismatch(format!(
            "dense oracle limited to {DENSE_MAX_DIM} unknowns, got {n}"
        )));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs has length {}, matrix has {n} rows",
            b.len()
        )));
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            a[(i, j)] = v;
        }
    }
    let lu = a.lu();
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(x.as_slice().to_vec())
}
