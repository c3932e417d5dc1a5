//! Riemannian quasi-Newton iteration on the sphere with Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{hessian_from, HessianKind, Residuals};
use crate::error::{Error, Result};
use crate::matcore::{MatrixTuple, SymMatrix};
use crate::sphere::{project_vec, retract_raw, SphereVector, TangentVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tau: f64,
    pub beta: f64,
    /// Stop once `‖grad L̃‖ ≤ eps_stop`.
    pub eps_stop: f64,
    /// Also stop once `L̃ ≤ residual_tol` (disabled at 0).
    pub residual_tol: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub hessian_kind: HessianKind,
    pub pinv_tol: f64,
    /// Keep every iterate in the trace.
    pub record_points: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: 0.1,
            beta: 0.5,
            eps_stop: 1e-10,
            residual_tol: 0.0,
            max_iters: 500,
            max_backtracks: 60,
            hessian_kind: HessianKind::H1,
            pinv_tol: 1e-12,
            record_points: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 0.5) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1/2), got {}", self.tau)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.eps_stop > 0.0) {
            return Err(Error::InvalidConfig(format!("eps_stop must be positive, got {}", self.eps_stop)));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidConfig("residual_tol must be non-negative".into()));
        }
        if !(self.pinv_tol >= 0.0 && self.pinv_tol < 1.0) {
            return Err(Error::InvalidConfig(format!("pinv_tol must lie in [0, 1), got {}", self.pinv_tol)));
        }
        Ok(())
    }
}

/// Eigenvalue estimates, unit vector and residual `L̃(v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimizerTriple {
    pub lambdas: Vec<f64>,
    pub v: SphereVector,
    pub residual: f64,
}

impl Serialize for MinimizerTriple {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("MinimizerTriple", 3)?;
        st.serialize_field("lambdas", &self.lambdas)?;
        st.serialize_field("v", self.v.as_vec().as_slice())?;
        st.serialize_field("residual", &self.residual)?;
        st.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub grad_norm: f64,
    pub value: f64,
    /// Step size accepted when leaving this iterate.
    pub step: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// No step size passed the sufficient-decrease test.
    LineSearchStalled,
    /// The iterate stopped moving before the tolerances were met.
    Stationary,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveTrace {
    pub iterates: Vec<IterRecord>,
    #[serde(skip)]
    pub points: Vec<SphereVector>,
    pub converged: bool,
    pub status: SolveStatus,
    /// Iterations where the quasi-Newton direction was replaced by `−grad`.
    pub fallbacks: usize,
    pub minimizer: MinimizerTriple,
}

/// Quasi-Newton direction `s` solving `−H s = g` on the tangent space.
pub fn newton_direction(h: &SymMatrix, g: &TangentVector, kind: HessianKind, pinv_tol: f64) -> Result<TangentVector> {
    let p = direction_raw(h.as_matrix(), g.base.as_vec(), &g.p, kind, pinv_tol)?;
    Ok(TangentVector { base: g.base.clone(), p })
}

fn direction_raw(
    h: &DMatrix<f64>,
    v: &DVector<f64>,
    g: &DVector<f64>,
    kind: HessianKind,
    pinv_tol: f64,
) -> Result<DVector<f64>> {
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("hessian"));
    }
    if g.iter().all(|&x| x == 0.0) {
        return Ok(DVector::zeros(g.len()));
    }
    let s = if kind.is_tangent_invariant() {
        match cholesky_tangent_solve(h, v, g, pinv_tol) {
            Some(x) => x,
            None => sym_pinv_apply(h, g, pinv_tol),
        }
    } else {
        let hp = project_cols(h, v);
        let svd = hp.svd(true, true);
        let smax = svd.singular_values.max();
        let cut = pinv_tol * smax;
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let mut coef = u.transpose() * g;
        for (c, &sv) in coef.iter_mut().zip(svd.singular_values.iter()) {
            *c = if sv > cut && sv > 0.0 { *c / sv } else { 0.0 };
        }
        vt.transpose() * coef
    };
    Ok(-project_vec(v, &s))
}

/// `H (I − vvᵀ)`.
fn project_cols(h: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let hv = h * v;
    let mut out = h.clone();
    out.ger(-1.0, &hv, v, 1.0);
    out
}

/// Solves `(H + c vvᵀ) x = g`, which equals `H† g` for tangent `g` when `H`
/// annihilates `v` and is positive definite on the tangent space.
fn cholesky_tangent_solve(h: &DMatrix<f64>, v: &DVector<f64>, g: &DVector<f64>, pinv_tol: f64) -> Option<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut m = h.clone();
    m.ger(scale, v, v, 1.0);
    let chol = m.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= pinv_tol * scale {
        return None;
    }
    let x = chol.solve(g);
    // A solution this large means some eigenvalue sits below the cutoff.
    if !x.iter().all(|c| c.is_finite()) || x.norm() * pinv_tol * scale > g.norm() {
        return None;
    }
    Some(x)
}

fn sym_pinv_apply(h: &DMatrix<f64>, g: &DVector<f64>, pinv_tol: f64) -> DVector<f64> {
    let eig = h.clone().symmetric_eigen();
    let smax = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let cut = pinv_tol * smax;
    let mut coef = eig.eigenvectors.transpose() * g;
    for (c, &l) in coef.iter_mut().zip(eig.eigenvalues.iter()) {
        *c = if l.abs() > cut && l != 0.0 { *c / l } else { 0.0 };
    }
    &eig.eigenvectors * coef
}

/// Riemannian gradient of `L̃` from precomputed residuals.
fn grad_from(mats: &MatrixTuple, v: &DVector<f64>, res: &Residuals) -> DVector<f64> {
    let mut g = DVector::zeros(v.len());
    for ((a, r), &q) in mats.iter().zip(&res.r).zip(&res.q) {
        g += (a.as_matrix() * r - r * q) * 2.0;
    }
    project_vec(v, &g)
}

enum Armijo {
    Accepted { alpha: f64, v: SphereVector },
    Exhausted,
}

fn armijo(
    v: &DVector<f64>,
    s: &DVector<f64>,
    f0: f64,
    slope: f64,
    cfg: &SolverConfig,
    merit: &dyn Fn(&SphereVector) -> f64,
) -> Result<Armijo> {
    if !(slope < 0.0) {
        return Err(Error::NotDescent { slope });
    }
    let mut alpha = 1.0;
    for _ in 0..=cfg.max_backtracks {
        let w = retract_raw(v, &(s * alpha))?;
        let f = merit(&w);
        if f <= f0 + cfg.tau * alpha * slope {
            return Ok(Armijo::Accepted { alpha, v: w });
        }
        alpha *= cfg.beta;
    }
    Ok(Armijo::Exhausted)
}

/// Largest `βʲ` satisfying the sufficient-decrease condition on `L̃` along
/// the retraction of `s`.
pub fn backtrack(mats: &MatrixTuple, v: &SphereVector, s: &TangentVector, cfg: &SolverConfig) -> Result<f64> {
    let res = Residuals::new(mats, v.as_vec());
    let g = grad_from(mats, v.as_vec(), &res);
    let merit = |w: &SphereVector| Residuals::new(mats, w.as_vec()).value();
    match armijo(v.as_vec(), &s.p, res.value(), g.dot(&s.p), cfg, &merit)? {
        Armijo::Accepted { alpha, .. } => Ok(alpha),
        Armijo::Exhausted => Err(Error::BacktrackExhausted { tries: cfg.max_backtracks + 1 }),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Merit {
    /// `L̃(v)`.
    Reduced,
    /// `L(λ_k, v)` with eigenvalues frozen at the current iterate.
    Frozen,
}

/// Maps a point onto the feasible set; the flag reports whether it moved.
pub(crate) type Projector<'a> = &'a dyn Fn(SphereVector) -> (SphereVector, bool);

/// A projected step shorter than this ends the iteration.
const STATIONARY_STEP: f64 = 1e-13;

pub(crate) fn iterate(
    mats: &MatrixTuple,
    v0: &SphereVector,
    cfg: &SolverConfig,
    kind: HessianKind,
    merit_kind: Merit,
    project: Option<Projector<'_>>,
) -> Result<(MinimizerTriple, SolveTrace)> {
    cfg.validate()?;
    if v0.dim() != mats.dim() {
        return Err(Error::DimensionMismatch { expected: mats.dim(), found: v0.dim() });
    }
    let mut v = v0.clone();
    let mut iterates = Vec::new();
    let mut points = Vec::new();
    let mut fallbacks = 0;
    let mut k = 0;
    let status = loop {
        let x = v.as_vec();
        let res = Residuals::new(mats, x);
        let f = res.value();
        let g = grad_from(mats, x, &res);
        let gnorm = g.norm();
        if !f.is_finite() || !gnorm.is_finite() {
            return Err(Error::NonFinite("solver iterate"));
        }
        iterates.push(IterRecord { iter: k, grad_norm: gnorm, value: f, step: None });
        if cfg.record_points {
            points.push(v.clone());
        }
        if gnorm <= cfg.eps_stop || f <= cfg.residual_tol {
            break SolveStatus::Converged;
        }
        if k >= cfg.max_iters {
            break SolveStatus::MaxIters;
        }
        let h = hessian_from(mats, x, &res, kind);
        let mut s = direction_raw(&h, x, &g, kind, cfg.pinv_tol)?;
        let mut slope = g.dot(&s);
        let mut steepest = false;
        if !(slope < 0.0) {
            s = -&g;
            slope = -gnorm * gnorm;
            steepest = true;
            fallbacks += 1;
        }
        let frozen = res.q.clone();
        let merit = |w: &SphereVector| match merit_kind {
            Merit::Reduced => Residuals::new(mats, w.as_vec()).value(),
            Merit::Frozen => {
                let y = w.as_vec();
                mats.iter().zip(&frozen).map(|(a, &l)| (a.as_matrix() * y - y * l).norm_squared()).sum()
            }
        };
        let mut outcome = armijo(x, &s, f, slope, cfg, &merit)?;
        if matches!(outcome, Armijo::Exhausted) && !steepest {
            fallbacks += 1;
            outcome = armijo(x, &-&g, f, -gnorm * gnorm, cfg, &merit)?;
        }
        let (alpha, next) = match outcome {
            Armijo::Accepted { alpha, v: w } => (alpha, w),
            Armijo::Exhausted => break SolveStatus::LineSearchStalled,
        };
        iterates.last_mut().expect("pushed above").step = Some(alpha);
        let next = match project {
            Some(p) => {
                let (w, active) = p(next);
                if active && (w.as_vec() - x).norm() <= STATIONARY_STEP {
                    v = w;
                    k += 1;
                    let res = Residuals::new(mats, v.as_vec());
                    let g = grad_from(mats, v.as_vec(), &res);
                    iterates.push(IterRecord { iter: k, grad_norm: g.norm(), value: res.value(), step: None });
                    if cfg.record_points {
                        points.push(v.clone());
                    }
                    break SolveStatus::Stationary;
                }
                w
            }
            None => next,
        };
        if next.as_vec() == x {
            v = next;
            break SolveStatus::Stationary;
        }
        v = next;
        k += 1;
    };
    let last = iterates.last().expect("at least one iterate");
    let minimizer = MinimizerTriple { lambdas: crate::cost::optimal_eigs(mats, &v), v, residual: last.value };
    let trace = SolveTrace {
        iterates,
        points,
        converged: status == SolveStatus::Converged,
        status,
        fallbacks,
        minimizer: minimizer.clone(),
    };
    Ok((minimizer, trace))
}

/// Quasi-Newton minimization of `L̃` on the sphere from `v0`.
pub fn solve_sphere(
    mats: &MatrixTuple,
    v0: &SphereVector,
    cfg: &SolverConfig,
) -> Result<(MinimizerTriple, SolveTrace)> {
    iterate(mats, v0, cfg, cfg.hessian_kind, Merit::Reduced, None)
}

/// Alternating scheme: Newton step with the Riemannian Hessian of `L` in `v`
/// and a line search on `L` with the eigenvalues frozen, then an eigenvalue
/// update.
pub fn solve_alternating(
    mats: &MatrixTuple,
    v0: &SphereVector,
    cfg: &SolverConfig,
) -> Result<(MinimizerTriple, SolveTrace)> {
    iterate(mats, v0, cfg, HessianKind::H2, Merit::Frozen, None)
}
