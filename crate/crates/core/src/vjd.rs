//! Vector-wise joint diagonalization: one approximate common eigenvector per
//! column under relaxed orthogonality, finished by a nearest-orthogonal step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constrained::{sample_feasible_init, solve_constrained, ConstraintSet};
use crate::error::{Error, Result};
use crate::matcore::{svd, MatrixTuple, SymMatrix};
use crate::metrics::{objective_j, JNorm};
use crate::randgen::derive_seed;
use crate::solver::{solve_sphere, MinimizerTriple, SolveStatus, SolveTrace, SolverConfig};
use crate::sphere::SphereVector;

/// How the relaxation `ε` of the orthogonality constraints is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsPolicy {
    Fixed(f64),
    /// `clamp(c · √comm · n^{3/2}, 1e-8, cap)` with `comm` the largest
    /// relative commutator norm of the tuple.
    Auto {
        c: f64,
        cap: f64,
    },
}

impl Default for EpsPolicy {
    fn default() -> Self {
        EpsPolicy::Auto { c: 1.0, cap: 0.5 }
    }
}

impl EpsPolicy {
    pub fn resolve(&self, mats: &MatrixTuple) -> Result<f64> {
        match *self {
            EpsPolicy::Fixed(e) if e > 0.0 => Ok(e),
            EpsPolicy::Fixed(e) => Err(Error::InvalidConfig(format!("eps must be positive, got {e}"))),
            EpsPolicy::Auto { c, cap } => {
                if !(c > 0.0 && cap >= 1e-8) {
                    return Err(Error::InvalidConfig("auto eps needs c > 0 and cap >= 1e-8".into()));
                }
                let n = mats.dim() as f64;
                let comm = relative_commutator(mats);
                Ok((c * comm.sqrt() * n.powf(1.5)).clamp(1e-8, cap))
            }
        }
    }
}

/// `max_{k<l} ‖[A_k, A_l]‖ / (‖A_k‖ ‖A_l‖)`.
pub fn relative_commutator(mats: &MatrixTuple) -> f64 {
    let norms: Vec<f64> = mats.iter().map(crate::matcore::sym_op_norm).collect();
    let mut best = 0.0f64;
    for k in 0..mats.len() {
        for l in (k + 1)..mats.len() {
            let d = norms[k] * norms[l];
            if d > 0.0 {
                let c = crate::matcore::commutator(mats.get(k), mats.get(l)).expect("same dimension");
                best = best.max(crate::matcore::op_norm(&c) / d);
            }
        }
    }
    best
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VjdConfig {
    pub solver: SolverConfig,
    pub eps: EpsPolicy,
    pub seed: u64,
    /// Take `Λ` from the columns of `U` instead of the solved vectors.
    pub post_procrustes_eigs: bool,
    pub keep_traces: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vjd,
    Jacobi,
}

/// Output of a joint diagonalization run.
#[derive(Clone, Debug)]
pub struct DiagResult {
    pub method: Method,
    pub u: DMatrix<f64>,
    /// Diagonal of `Λ_k`, one entry per column of `u`.
    pub lambdas: Vec<Vec<f64>>,
    /// `Σ_k ‖Uᵀ A_k U − Λ_k‖_F²`.
    pub j_objective: f64,
    /// `L̃` at each solved column (VJD), or the final diagonal residuals of
    /// each column (Jacobi).
    pub column_residuals: Vec<f64>,
    pub column_status: Vec<SolveStatus>,
    pub column_traces: Option<Vec<SolveTrace>>,
    /// Solved columns before orthogonalization (VJD only).
    pub raw_columns: Option<DMatrix<f64>>,
    pub eps: Option<f64>,
    pub retries: usize,
    /// `Σ_k off(A_k)` after each sweep (Jacobi only).
    pub sweep_offs: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

impl DiagResult {
    pub fn lambda_matrix(&self, k: usize) -> SymMatrix {
        SymMatrix::from_diagonal(&self.lambdas[k])
    }

    pub fn unconverged_columns(&self) -> usize {
        self.column_status.iter().filter(|s| **s != SolveStatus::Converged).count()
    }

    pub fn summary(&self) -> DiagSummary {
        DiagSummary {
            method: self.method,
            n: self.u.nrows(),
            m: self.lambdas.len(),
            j_frobenius: self.j_objective,
            lambdas: self.lambdas.clone(),
            column_residuals: self.column_residuals.clone(),
            unconverged_columns: self.unconverged_columns(),
            eps: self.eps,
            retries: self.retries,
            sweep_offs: self.sweep_offs.clone(),
            converged: self.converged,
            wall_time: self.wall_time,
        }
    }
}

/// Serializable scalar part of a [`DiagResult`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagSummary {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub j_frobenius: f64,
    pub lambdas: Vec<Vec<f64>>,
    pub column_residuals: Vec<f64>,
    pub unconverged_columns: usize,
    pub eps: Option<f64>,
    pub retries: usize,
    pub sweep_offs: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

/// Orthogonalizes `v` against an orthonormal `basis`, with a second pass when
/// the first leaves a visible component.
pub fn gram_schmidt_append(basis: &[DVector<f64>], v: &SphereVector) -> Result<SphereVector> {
    if basis.is_empty() {
        return Ok(v.clone());
    }
    let mut x = v.as_vec().clone();
    for w in basis {
        let c = w.dot(&x);
        x.axpy(-c, w, 1.0);
    }
    let r = x.norm();
    if r < 1e-12 {
        return Err(Error::DegenerateColumn { column: basis.len(), residual: r });
    }
    x /= r;
    let leak = basis.iter().fold(0.0f64, |a, w| a.max(w.dot(&x).abs()));
    if leak > 1e-10 {
        for w in basis {
            let c = w.dot(&x);
            x.axpy(-c, w, 1.0);
        }
        x.normalize_mut();
    }
    SphereVector::new(x)
}

/// Orthogonal polar factor `U₁U₂` of `V = U₁ Σ U₂`.
pub fn nearest_orthogonal(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != v.ncols() {
        return Err(Error::NotSquare { rows: v.nrows(), cols: v.ncols() });
    }
    let f = svd(v)?;
    let smax = f.singular_values.first().copied().unwrap_or(0.0);
    let tol = smax * f64::EPSILON * v.nrows() as f64;
    let rank = f.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < v.nrows() {
        return Err(Error::RankDeficient { rank, required: v.nrows() });
    }
    Ok(&f.u * &f.vt)
}

fn solve_column(
    mats: &MatrixTuple,
    cs: &ConstraintSet,
    cfg: &VjdConfig,
    seed: u64,
) -> Result<(MinimizerTriple, SolveTrace)> {
    let v0 = sample_feasible_init(cs, seed)?;
    if cs.basis().is_empty() {
        solve_sphere(mats, &v0, &cfg.solver)
    } else {
        solve_constrained(mats, cs, &v0, &cfg.solver)
    }
}

/// Joint diagonalization of a tuple of symmetric matrices, one column at a
/// time.
pub fn run_vjd(mats: &MatrixTuple, cfg: &VjdConfig) -> Result<DiagResult> {
    cfg.solver.validate()?;
    let n = mats.dim();
    let eps = cfg.eps.resolve(mats)?;
    mats.squares();
    let start = Instant::now();

    let mut cs = ConstraintSet::unconstrained(n, eps)?;
    let mut solved: Vec<MinimizerTriple> = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut traces = Vec::new();
    let mut retries = 0;
    for j in 0..n {
        let mut attempt = 0;
        let (triple, trace, w) = loop {
            let seed = derive_seed(cfg.seed, (attempt as u64) << 32 | j as u64);
            let (triple, trace) = solve_column(mats, &cs, cfg, seed)?;
            match gram_schmidt_append(cs.basis(), &triple.v) {
                Ok(w) => break (triple, trace, w),
                Err(e @ Error::DegenerateColumn { .. }) if attempt > 0 => return Err(e),
                Err(Error::DegenerateColumn { .. }) => {
                    attempt += 1;
                    retries += 1;
                }
                Err(e) => return Err(e),
            }
        };
        status.push(trace.status);
        if cfg.keep_traces {
            traces.push(trace);
        }
        cs.push_unchecked(w.into_vec());
        solved.push(triple);
    }

    let cols: Vec<DVector<f64>> = solved.iter().map(|t| t.v.as_vec().clone()).collect();
    let v = DMatrix::from_columns(&cols);
    let u = nearest_orthogonal(&v)?;
    let lambdas: Vec<Vec<f64>> = if cfg.post_procrustes_eigs {
        mats.iter()
            .map(|a| {
                let au = a.as_matrix() * &u;
                (0..n).map(|j| u.column(j).dot(&au.column(j))).collect()
            })
            .collect()
    } else {
        (0..mats.len()).map(|k| solved.iter().map(|t| t.lambdas[k]).collect()).collect()
    };
    let wall_time = start.elapsed().as_secs_f64();

    let j_objective = objective_j(mats, &u, &lambdas, JNorm::Frobenius)?;
    let converged = status.iter().all(|s| *s == SolveStatus::Converged);
    Ok(DiagResult {
        method: Method::Vjd,
        u,
        lambdas,
        j_objective,
        column_residuals: solved.iter().map(|t| t.residual).collect(),
        column_status: status,
        column_traces: cfg.keep_traces.then_some(traces),
        raw_columns: Some(v),
        eps: Some(eps),
        retries,
        sweep_offs: Vec::new(),
        converged,
        wall_time,
    })
}

/// `(U Λ_1 Uᵀ, …, U Λ_m Uᵀ)`.
pub fn commuting_approximants(res: &DiagResult) -> Result<MatrixTuple> {
    let mats = res.lambdas.iter().map(|l| SymMatrix::from_eigen(&res.u, l)).collect::<Result<Vec<_>>>()?;
    MatrixTuple::new(mats)
}
