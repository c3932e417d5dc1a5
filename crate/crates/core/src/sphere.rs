//! Geometry of the unit sphere: tangent projection, retraction, distances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matcore::SymMatrix;

/// Unit vector in ℝⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereVector {
    v: DVector<f64>,
}

impl SphereVector {
    /// Normalizes `v`; fails on a zero or non-finite input.
    pub fn new(v: DVector<f64>) -> Result<Self> {
        let nrm = v.norm();
        if !nrm.is_finite() {
            return Err(Error::NonFinite("sphere vector"));
        }
        if nrm == 0.0 {
            return Err(Error::Empty("zero vector cannot be normalized"));
        }
        Ok(SphereVector { v: v / nrm })
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(x))
    }

    /// Standard basis vector `e_i`.
    pub fn basis(n: usize, i: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        SphereVector { v }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn as_vec(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn into_vec(self) -> DVector<f64> {
        self.v
    }

    pub fn neg(&self) -> Self {
        SphereVector { v: -&self.v }
    }

    pub fn dot(&self, w: &SphereVector) -> f64 {
        self.v.dot(&w.v)
    }
}

/// Tangent vector `p` at `base`, with `⟨p, base⟩ = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: SphereVector,
    pub p: DVector<f64>,
}

impl TangentVector {
    pub fn zero(base: &SphereVector) -> Self {
        TangentVector { base: base.clone(), p: DVector::zeros(base.dim()) }
    }

    pub fn norm(&self) -> f64 {
        self.p.norm()
    }

    pub fn scaled(&self, t: f64) -> Self {
        TangentVector { base: self.base.clone(), p: &self.p * t }
    }

    pub fn dot(&self, other: &TangentVector) -> f64 {
        self.p.dot(&other.p)
    }
}

/// `(I − vvᵀ)x`.
pub fn project_vec(v: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    assert_eq!(v.len(), x.len(), "dimension mismatch");
    x - v * v.dot(x)
}

/// `(I − vvᵀ) M (I − vvᵀ)` for symmetric `M`, returned exactly symmetric.
pub fn project_sym(v: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let w = m * v;
    let a = v.dot(&w);
    let mut out = m.clone();
    out.ger(-1.0, v, &w, 1.0);
    out.ger(-1.0, &w, v, 1.0);
    out.ger(a, v, v, 1.0);
    SymMatrix::symmetrize(out).into_matrix()
}

pub fn tangent_project(v: &SphereVector, x: &DVector<f64>) -> TangentVector {
    TangentVector { base: v.clone(), p: project_vec(&v.v, x) }
}

/// `R_v(p) = (v + p)/‖v + p‖`.
pub fn retract(v: &SphereVector, p: &TangentVector) -> Result<SphereVector> {
    retract_raw(&v.v, &p.p)
}

pub(crate) fn retract_raw(v: &DVector<f64>, p: &DVector<f64>) -> Result<SphereVector> {
    let x = v + p;
    let nrm = x.norm();
    if !nrm.is_finite() {
        return Err(Error::NonFinite("retraction"));
    }
    if nrm < 1e-14 {
        return Err(Error::DegenerateStep { norm: nrm });
    }
    Ok(SphereVector { v: x / nrm })
}

/// Great-circle distance in `[0, π]`.
pub fn geodesic_dist(v: &SphereVector, w: &SphereVector) -> f64 {
    // Same value as arccos⟨v, w⟩, without the loss of accuracy near 0 and π.
    let chord = (&v.v - &w.v).norm();
    2.0 * (0.5 * chord).clamp(0.0, 1.0).asin()
}

pub fn riemannian_grad(v: &SphereVector, egrad: &DVector<f64>) -> TangentVector {
    tangent_project(v, egrad)
}

/// Riemannian Hessian `(I − vvᵀ)(∇²f − ⟨∇f, v⟩I)` restricted to the tangent
/// space, returned in the symmetric form `P(∇²f − ⟨∇f, v⟩I)P`.
pub fn riemannian_hess(v: &SphereVector, egrad: &DVector<f64>, ehess: &SymMatrix) -> SymMatrix {
    let c = egrad.dot(&v.v);
    let mut h = ehess.as_matrix().clone();
    for i in 0..h.nrows() {
        h[(i, i)] -= c;
    }
    SymMatrix::symmetrize(project_sym(&v.v, &h))
}
