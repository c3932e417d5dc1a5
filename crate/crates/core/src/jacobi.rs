//! Cyclic Jacobi method for simultaneous diagonalization of real symmetric
//! tuples.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{off_diag, MatrixTuple};
use crate::metrics::{objective_j, JNorm};
use crate::solver::SolveStatus;
use crate::vjd::{DiagResult, Method};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JacobiConfig {
    /// Stop once `Σ off(A_k) ≤ eps · Σ ‖A_k‖_F`.
    pub eps: f64,
    pub max_sweeps: usize,
}

impl Default for JacobiConfig {
    fn default() -> Self {
        JacobiConfig { eps: 1e-10, max_sweeps: 100 }
    }
}

impl JacobiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Rotation equal to the identity except `R[i,i] = R[j,j] = c`,
/// `R[i,j] = −s`, `R[j,i] = s` (indices from 0).
pub fn givens(i: usize, j: usize, c: f64, s: f64, n: usize) -> Result<DMatrix<f64>> {
    if !(i < j && j < n) {
        return Err(Error::InvalidConfig(format!("need i < j < n, got i={i}, j={j}, n={n}")));
    }
    if (c * c + s * s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!("c² + s² must equal 1, got {}", c * c + s * s)));
    }
    let mut r = DMatrix::identity(n, n);
    r[(i, i)] = c;
    r[(j, j)] = c;
    r[(i, j)] = -s;
    r[(j, i)] = s;
    Ok(r)
}

fn angle_from(entries: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64) {
    let (mut g11, mut g12, mut g22) = (0.0, 0.0, 0.0);
    for (aii, ajj, aij) in entries {
        let h0 = aii - ajj;
        let h1 = 2.0 * aij;
        g11 += h0 * h0;
        g12 += h0 * h1;
        g22 += h1 * h1;
    }
    let half = 0.5 * (g11 - g22);
    let root = half.hypot(g12);
    if root == 0.0 {
        return (1.0, 0.0);
    }
    let top = 0.5 * (g11 + g22) + root;
    let (mut x, mut y) = if g11 >= g22 { (top - g22, g12) } else { (g12, top - g11) };
    if x < 0.0 {
        x = -x;
        y = -y;
    }
    let r = x.hypot(y);
    if r == 0.0 {
        return (1.0, 0.0);
    }
    let c = ((x + r) / (2.0 * r)).sqrt();
    let s = y / (2.0 * r * (x + r)).sqrt();
    (c, s)
}

/// Rotation `(c, s)` minimizing the off-diagonal mass of `Rᵀ A_k R` at `(i, j)`
/// summed over the tuple.
pub fn optimal_angle(mats: &MatrixTuple, i: usize, j: usize) -> Result<(f64, f64)> {
    let n = mats.dim();
    if !(i < j && j < n) {
        return Err(Error::InvalidConfig(format!("need i < j < n, got i={i}, j={j}, n={n}")));
    }
    Ok(angle_from(mats.iter().map(|a| (a.get(i, i), a.get(j, j), a.get(i, j)))))
}

/// `A ← Rᵀ A R` in place.
fn rotate_sym(a: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    rotate_cols(a, i, j, c, s);
    let n = a.nrows();
    for k in 0..n {
        let x = a[(i, k)];
        let y = a[(j, k)];
        a[(i, k)] = c * x + s * y;
        a[(j, k)] = -s * x + c * y;
    }
}

/// `M ← M R` in place.
fn rotate_cols(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    let n = m.nrows();
    let (mut ci, mut cj) = m.columns_range_pair_mut(i, j);
    for k in 0..n {
        let x = ci[k];
        let y = cj[k];
        ci[k] = c * x + s * y;
        cj[k] = -s * x + c * y;
    }
}

pub fn run_jacobi(mats: &MatrixTuple, cfg: &JacobiConfig) -> Result<DiagResult> {
    cfg.validate()?;
    let n = mats.dim();
    let mut work: Vec<DMatrix<f64>> = mats.iter().map(|a| a.as_matrix().clone()).collect();
    let tol = cfg.eps * mats.iter().map(|a| a.as_matrix().norm()).sum::<f64>();
    let start = Instant::now();
    let mut u = DMatrix::identity(n, n);
    let mut offs = Vec::new();
    let mut off: f64 = work.iter().map(off_diag).sum();
    let mut converged = off <= tol;
    let mut sweeps = 0;
    while !converged && sweeps < cfg.max_sweeps {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (c, s) = angle_from(work.iter().map(|a| (a[(i, i)], a[(j, j)], a[(i, j)])));
                if s.abs() < 1e-14 {
                    continue;
                }
                rotated = true;
                for a in work.iter_mut() {
                    rotate_sym(a, i, j, c, s);
                }
                rotate_cols(&mut u, i, j, c, s);
            }
        }
        sweeps += 1;
        off = work.iter().map(off_diag).sum();
        offs.push(off);
        converged = off <= tol;
        if !rotated {
            break;
        }
    }
    let lambdas: Vec<Vec<f64>> = work.iter().map(|a| a.diagonal().iter().copied().collect()).collect();
    let wall_time = start.elapsed().as_secs_f64();

    let column_residuals =
        (0..n).map(|j| work.iter().map(|a| a.column(j).norm_squared() - a[(j, j)] * a[(j, j)]).sum()).collect();
    let j_objective = objective_j(mats, &u, &lambdas, JNorm::Frobenius)?;
    let status = if converged { SolveStatus::Converged } else { SolveStatus::MaxIters };
    Ok(DiagResult {
        method: Method::Jacobi,
        u,
        lambdas,
        j_objective,
        column_residuals,
        column_status: vec![status; n],
        column_traces: None,
        raw_columns: None,
        eps: None,
        retries: 0,
        sweep_offs: offs,
        converged,
        wall_time,
    })
}
