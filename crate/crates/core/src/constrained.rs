//! Relaxed orthogonality constraints and the projected quasi-Newton solver.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matcore::MatrixTuple;
use crate::solver::{iterate, Merit, MinimizerTriple, SolveTrace, SolverConfig};
use crate::sphere::SphereVector;

/// Orthonormal vectors `w_1 … w_j` and a relaxation `ε`. The feasible set is
/// the set of unit vectors within distance `√ε` of `span{w}⊥ ∩ 𝕊ⁿ⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    n: usize,
    basis: Vec<DVector<f64>>,
    eps: f64,
}

impl ConstraintSet {
    pub fn new(n: usize, basis: Vec<DVector<f64>>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
        }
        for (i, w) in basis.iter().enumerate() {
            if w.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: w.len() });
            }
            for (k, u) in basis.iter().enumerate().take(i + 1) {
                let target = if k == i { 1.0 } else { 0.0 };
                if (w.dot(u) - target).abs() > 1e-10 {
                    return Err(Error::InvalidConfig(format!("constraint basis not orthonormal at ({i}, {k})")));
                }
            }
        }
        Ok(ConstraintSet { n, basis, eps })
    }

    /// Appends `w`, which the caller guarantees is a unit vector orthogonal
    /// to the current basis.
    pub(crate) fn push_unchecked(&mut self, w: DVector<f64>) {
        debug_assert_eq!(w.len(), self.n);
        self.basis.push(w);
    }

    pub fn unconstrained(n: usize, eps: f64) -> Result<Self> {
        Self::new(n, Vec::new(), eps)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Splits `v` into its component orthogonal to the basis and the rest.
    fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut perp = DVector::zeros(self.n);
        for w in &self.basis {
            perp.axpy(w.dot(v), w, 1.0);
        }
        (v - &perp, perp)
    }

    /// Deterministic unit vector orthogonal to the basis.
    fn fallback_direction(&self) -> DVector<f64> {
        let mut best = DVector::zeros(self.n);
        let mut best_norm = -1.0;
        for i in 0..self.n {
            let mut e = DVector::zeros(self.n);
            e[i] = 1.0;
            let (p, _) = self.split(&e);
            let (p, _) = self.split(&p);
            let nrm = p.norm();
            if nrm > best_norm + 1e-12 {
                best_norm = nrm;
                best = p / nrm;
            }
        }
        best
    }
}

/// Distance from `v` to `span{w}⊥ ∩ 𝕊ⁿ⁻¹`.
pub fn dist_to_s(v: &SphereVector, cs: &ConstraintSet) -> f64 {
    let (p, q) = cs.split(v.as_vec());
    let c = p.norm();
    ((1.0 - c).powi(2) + q.norm_squared()).sqrt()
}

/// Below this the in-plane component of a unit vector is rounding noise.
const ROUNDING: f64 = 1e-13;

/// Closest point of the relaxed feasible set to `v`, plus whether `v` moved.
pub(crate) fn project_flagged(v: SphereVector, cs: &ConstraintSet) -> (SphereVector, bool) {
    if cs.basis.is_empty() {
        return (v, false);
    }
    let theta = 1.0 - 0.5 * cs.eps;
    let (p, _) = cs.split(v.as_vec());
    let (p, _) = cs.split(&p);
    let c = p.norm();
    if c >= theta {
        return (v, false);
    }
    let q = v.as_vec() - &p;
    let d = q.norm();
    let dir = if c > ROUNDING { p / c } else { cs.fallback_direction() };
    if d == 0.0 {
        return (SphereVector::new(dir).expect("unit direction"), true);
    }
    let out = dir * theta + q * ((1.0 - theta * theta).sqrt() / d);
    (SphereVector::new(out).expect("nonzero combination"), true)
}

pub fn project_eps(v: &SphereVector, cs: &ConstraintSet) -> SphereVector {
    project_flagged(v.clone(), cs).0
}

/// Random unit vector orthogonal to every basis vector.
pub fn sample_feasible_init(cs: &ConstraintSet, seed: u64) -> Result<SphereVector> {
    if cs.basis.len() >= cs.n {
        return Err(Error::Infeasible { constraints: cs.basis.len(), n: cs.n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = DVector::from_fn(cs.n, |_, _| StandardNormal.sample(&mut rng));
        let (p, _) = cs.split(&x);
        let (p, _) = cs.split(&p);
        let nrm = p.norm();
        if nrm > 1e-8 {
            return SphereVector::new(p / nrm);
        }
    }
}

/// Projected quasi-Newton minimization of `L̃` over the relaxed feasible set,
/// started from `v0`.
pub fn solve_constrained(
    mats: &MatrixTuple,
    cs: &ConstraintSet,
    v0: &SphereVector,
    cfg: &SolverConfig,
) -> Result<(MinimizerTriple, SolveTrace)> {
    if cs.n != mats.dim() {
        return Err(Error::DimensionMismatch { expected: mats.dim(), found: cs.n });
    }
    if cs.basis.is_empty() {
        return iterate(mats, v0, cfg, cfg.hessian_kind, Merit::Reduced, None);
    }
    let project = |w: SphereVector| project_flagged(w, cs);
    iterate(mats, v0, cfg, cfg.hessian_kind, Merit::Reduced, Some(&project))
}
