//! Objective values, the commutator lower bound, stability constants and
//! convergence-rate estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{commutator, op_norm, MatrixTuple};
use crate::solver::SolveTrace;
use crate::sphere::{geodesic_dist, SphereVector};
use crate::vjd::{commuting_approximants, DiagResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JNorm {
    Operator,
    Frobenius,
}

/// `Σ_k ‖Uᵀ A_k U − diag(λ_k)‖²` in the chosen norm.
pub fn objective_j(mats: &MatrixTuple, u: &DMatrix<f64>, lambdas: &[Vec<f64>], norm: JNorm) -> Result<f64> {
    let n = mats.dim();
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: u.nrows() });
    }
    if lambdas.len() != mats.len() {
        return Err(Error::DimensionMismatch { expected: mats.len(), found: lambdas.len() });
    }
    let mut total = 0.0;
    for (a, l) in mats.iter().zip(lambdas) {
        if l.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: l.len() });
        }
        let mut d = a.congruence(u).into_matrix();
        for (i, &li) in l.iter().enumerate() {
            d[(i, i)] -= li;
        }
        total += match norm {
            JNorm::Frobenius => d.norm_squared(),
            JNorm::Operator => op_norm(&d).powi(2),
        };
    }
    Ok(total)
}

pub fn objective_j_of(mats: &MatrixTuple, res: &DiagResult, norm: JNorm) -> Result<f64> {
    objective_j(mats, &res.u, &res.lambdas, norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `J` in the operator norm, after normalization.
    pub j: f64,
    pub j_frobenius: f64,
    pub comm_norm: f64,
    pub lower_bound: f64,
    pub satisfied: bool,
    /// Whether the inputs already had operator norms at most 1.
    pub normalized: bool,
}

/// Operator norms this close to 1 count as normalized.
const NORM_SLACK: f64 = 1e-12;

/// Checks `J ≥ ‖[A,B]‖²/8` on the pair rescaled by `1/max(‖A‖, ‖B‖, 1)`.
pub fn check_lower_bound(mats: &MatrixTuple, res: &DiagResult) -> Result<BoundReport> {
    bound_report(mats, &res.u, &res.lambdas)
}

/// [`check_lower_bound`] for a stored `(U, Λ)`.
pub fn bound_report(mats: &MatrixTuple, u: &DMatrix<f64>, lambdas: &[Vec<f64>]) -> Result<BoundReport> {
    if mats.len() != 2 {
        return Err(Error::Unsupported(format!("lower bound needs a pair, got {} matrices", mats.len())));
    }
    let norm = mats.max_op_norm();
    let scale = if norm <= 1.0 + NORM_SLACK { 1.0 } else { norm };
    let s2 = 1.0 / (scale * scale);
    let j = s2 * objective_j(mats, u, lambdas, JNorm::Operator)?;
    let j_frobenius = s2 * objective_j(mats, u, lambdas, JNorm::Frobenius)?;
    let comm_norm = s2 * op_norm(&commutator(mats.get(0), mats.get(1))?);
    let lower_bound = comm_norm * comm_norm / 8.0;
    Ok(BoundReport {
        j,
        j_frobenius,
        comm_norm,
        lower_bound,
        satisfied: j >= lower_bound - 1e-14,
        normalized: scale == 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub eta: f64,
    pub eps: f64,
    /// `‖ΔA‖ + ‖ΔB‖ ≤ min gap / 8`.
    pub applicable: bool,
}

/// `η = 4(‖ΔA‖+‖ΔB‖)`, `ε = (128/3)((‖ΔA‖+‖ΔB‖)/min gap)²`.
pub fn stability_constants(da_norm: f64, db_norm: f64, gap_a: f64, gap_b: f64) -> StabilityConstants {
    let d = da_norm + db_norm;
    let gap = gap_a.min(gap_b);
    let eps = if d == 0.0 { 0.0 } else { 128.0 / 3.0 * (d / gap).powi(2) };
    StabilityConstants { eta: 4.0 * d, eps, applicable: d <= gap / 8.0 }
}

/// `Σ_k ‖A_k − A_k'‖ / ‖[A,B]‖^{1/2}` with `A_k'` the commuting approximants.
pub fn lin_ratio(mats: &MatrixTuple, res: &DiagResult) -> Result<f64> {
    let comm = mats.max_commutator_norm();
    if comm == 0.0 {
        return Err(Error::ExactlyCommuting);
    }
    let approx = commuting_approximants(res)?;
    let dist: f64 = mats.iter().zip(approx.iter()).map(|(a, b)| op_norm(&(a.as_matrix() - b.as_matrix()))).sum();
    Ok(dist / comm.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Least-squares slope of `log d_{k+1}` against `log d_k`.
    pub slope: f64,
    /// Contraction `d_{k+1}/d_k` of the last step.
    pub linear_rate: f64,
    /// Geometric mean of `d_{k+1}/d_k²` over the fitted points.
    pub quadratic_coeff: f64,
    pub points_used: usize,
}

/// Distances at or below this are rounding noise.
const DIST_FLOOR: f64 = 1e-15;
/// Number of trailing distances used in the fit.
const TAIL: usize = 4;

/// Rate estimate from a sequence of distances to the limit.
pub fn rate_from_distances(d: &[f64]) -> Result<RateEstimate> {
    let kept: Vec<f64> = d.iter().copied().take_while(|&x| x > DIST_FLOOR).collect();
    if kept.len() < 3 {
        return Err(Error::InsufficientIterations { have: kept.len(), need: 3 });
    }
    let tail = &kept[kept.len().saturating_sub(TAIL)..];
    let xs: Vec<f64> = tail[..tail.len() - 1].iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = tail[1..].iter().map(|x| x.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let quad = xs.iter().zip(&ys).map(|(x, y)| y - 2.0 * x).sum::<f64>() / k;
    // A step that lands at the floor still bounds the contraction from above.
    let last = kept[kept.len() - 1];
    let linear_rate = if d.len() > kept.len() { DIST_FLOOR / last } else { last / kept[kept.len() - 2] };
    Ok(RateEstimate { slope, linear_rate, quadratic_coeff: quad.exp(), points_used: tail.len() })
}

/// Rate estimate from a solver trace recorded with `record_points`.
pub fn rate_from_trace(trace: &SolveTrace, v_final: &SphereVector) -> Result<RateEstimate> {
    const NEED: usize = 3;
    if trace.points.len() < NEED {
        return Err(Error::InsufficientIterations { have: trace.points.len(), need: NEED });
    }
    let d: Vec<f64> = trace
        .points
        .iter()
        .map(|p| {
            // Iterates are only defined up to sign.
            geodesic_dist(p, v_final).min(geodesic_dist(&p.neg(), v_final))
        })
        .collect();
    rate_from_distances(&d)
}
