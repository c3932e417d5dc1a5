//! Objective functions on the sphere, their gradients and approximate Hessians.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::matcore::{MatrixTuple, SymMatrix};
use crate::sphere::{project_sym, project_vec, SphereVector, TangentVector};

/// Eigenvalue estimates (one per matrix) together with a unit vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub lambdas: Vec<f64>,
    pub v: SphereVector,
}

/// Approximate Hessian used to compute the quasi-Newton direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HessianKind {
    /// Euclidean Hessian of `L` in `v`.
    H0,
    /// `H0` projected onto the tangent space.
    #[default]
    H1,
    /// Riemannian Hessian of `L` in `v`.
    H2,
    /// Euclidean Hessian of `L̃`.
    H3,
    /// Riemannian Hessian of `L̃`.
    H4,
}

impl HessianKind {
    pub const ALL: [HessianKind; 5] =
        [HessianKind::H0, HessianKind::H1, HessianKind::H2, HessianKind::H3, HessianKind::H4];

    /// Whether the operator maps the tangent space into itself.
    pub fn is_tangent_invariant(self) -> bool {
        matches!(self, HessianKind::H1 | HessianKind::H2 | HessianKind::H4)
    }
}

impl fmt::Display for HessianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for HessianKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().as_str() {
            "H0" => Ok(HessianKind::H0),
            "H1" => Ok(HessianKind::H1),
            "H2" => Ok(HessianKind::H2),
            "H3" => Ok(HessianKind::H3),
            "H4" => Ok(HessianKind::H4),
            _ => Err(Error::InvalidConfig(format!("unknown hessian kind {s:?}"))),
        }
    }
}

/// Per-matrix quantities at a unit vector: `A_k v`, `q_k = ⟨v, A_k v⟩`,
/// `r_k = A_k v − q_k v`.
pub(crate) struct Residuals {
    pub q: Vec<f64>,
    pub r: Vec<DVector<f64>>,
}

impl Residuals {
    pub fn new(mats: &MatrixTuple, v: &DVector<f64>) -> Self {
        let mut q = Vec::with_capacity(mats.len());
        let mut r = Vec::with_capacity(mats.len());
        for a in mats.iter() {
            let av = a.as_matrix() * v;
            let qk = v.dot(&av);
            q.push(qk);
            r.push(av - v * qk);
        }
        Residuals { q, r }
    }

    pub fn value(&self) -> f64 {
        self.r.iter().map(|r| r.norm_squared()).sum()
    }
}

pub fn eval_l(mats: &MatrixTuple, pt: &EvalPoint) -> f64 {
    assert_eq!(pt.lambdas.len(), mats.len(), "one eigenvalue per matrix");
    let v = pt.v.as_vec();
    mats.iter().zip(&pt.lambdas).map(|(a, &l)| (a.as_matrix() * v - v * l).norm_squared()).sum()
}

/// Rayleigh quotients `⟨v, A_k v⟩`.
pub fn optimal_eigs(mats: &MatrixTuple, v: &SphereVector) -> Vec<f64> {
    let v = v.as_vec();
    mats.iter().map(|a| v.dot(&(a.as_matrix() * v))).collect()
}

/// `L̃(v) = Σ ‖A_k v − ⟨v, A_k v⟩ v‖²`.
pub fn eval_ltilde(mats: &MatrixTuple, v: &SphereVector) -> f64 {
    Residuals::new(mats, v.as_vec()).value()
}

/// Riemannian gradient of `L` on `ℝᵐ × 𝕊ⁿ⁻¹`: eigenvalue components and the
/// sphere component `2P Σ (A_k − λ_k)² v`.
pub fn grad_full(mats: &MatrixTuple, pt: &EvalPoint) -> (Vec<f64>, TangentVector) {
    assert_eq!(pt.lambdas.len(), mats.len(), "one eigenvalue per matrix");
    let v = pt.v.as_vec();
    let mut dl = Vec::with_capacity(mats.len());
    let mut g = DVector::zeros(v.len());
    for (a, &l) in mats.iter().zip(&pt.lambdas) {
        let av = a.as_matrix() * v;
        dl.push(2.0 * l - 2.0 * v.dot(&av));
        let s = av - v * l;
        let t = a.as_matrix() * &s - &s * l;
        g += t * 2.0;
    }
    (dl, TangentVector { base: pt.v.clone(), p: project_vec(v, &g) })
}

/// Riemannian gradient of `L̃`.
pub fn grad_ltilde(mats: &MatrixTuple, v: &SphereVector) -> TangentVector {
    let pt = EvalPoint { lambdas: optimal_eigs(mats, v), v: v.clone() };
    grad_full(mats, &pt).1
}

/// Euclidean gradient of `x ↦ Σ ‖A_k x − ⟨x, A_k x⟩ x‖²` at an arbitrary `x`.
pub fn euclidean_grad_ltilde(mats: &MatrixTuple, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for a in mats.iter() {
        let ax = a.as_matrix() * x;
        let q = x.dot(&ax);
        let r = &ax - x * q;
        let ar = a.as_matrix() * &r;
        g += (ar - &r * q) * 2.0 - ax * (4.0 * r.dot(x));
    }
    g
}

/// `Σ (A_k − q_k)²` from cached squares.
fn shifted_square_sum(mats: &MatrixTuple, q: &[f64]) -> DMatrix<f64> {
    let n = mats.dim();
    let mut h = DMatrix::zeros(n, n);
    for ((a, a2), &qk) in mats.iter().zip(mats.squares()).zip(q) {
        h += a2;
        h -= a.as_matrix() * (2.0 * qk);
        for i in 0..n {
            h[(i, i)] += qk * qk;
        }
    }
    h
}

pub(crate) fn hessian_from(mats: &MatrixTuple, v: &DVector<f64>, res: &Residuals, kind: HessianKind) -> DMatrix<f64> {
    let mut h0 = shifted_square_sum(mats, &res.q);
    h0 *= 2.0;
    match kind {
        HessianKind::H0 => SymMatrix::symmetrize(h0).into_matrix(),
        HessianKind::H1 => project_sym(v, &h0),
        HessianKind::H2 | HessianKind::H4 => {
            let c = 2.0 * res.value();
            let mut h = h0;
            for i in 0..h.nrows() {
                h[(i, i)] -= c;
            }
            if kind == HessianKind::H4 {
                for r in &res.r {
                    h.ger(-8.0, r, r, 1.0);
                }
            }
            project_sym(v, &h)
        }
        HessianKind::H3 => {
            let mut h = h0;
            let qq: f64 = res.q.iter().map(|q| q * q).sum();
            for r in &res.r {
                h.ger(-8.0, r, r, 1.0);
            }
            h.ger(8.0 * qq, v, v, 1.0);
            SymMatrix::symmetrize(h).into_matrix()
        }
    }
}

/// Approximate Hessian of the given kind at `v`, with eigenvalues set to the
/// Rayleigh quotients of `v`.
pub fn build_hessian(mats: &MatrixTuple, v: &SphereVector, kind: HessianKind) -> SymMatrix {
    let res = Residuals::new(mats, v.as_vec());
    SymMatrix::symmetrize(hessian_from(mats, v.as_vec(), &res, kind))
}

/// `n × m` matrix with columns `−4(A_k − ⟨v, A_k v⟩)v`.
pub fn w_matrix(mats: &MatrixTuple, v: &SphereVector) -> DMatrix<f64> {
    let res = Residuals::new(mats, v.as_vec());
    let cols: Vec<DVector<f64>> = res.r.iter().map(|r| r * -4.0).collect();
    DMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{retract_raw, tangent_project};

    fn pair(a: &[f64], b: &[f64]) -> MatrixTuple {
        MatrixTuple::pair(SymMatrix::from_diagonal(a), SymMatrix::from_diagonal(b)).unwrap()
    }

    fn dense(n: usize, seed: u64) -> SymMatrix {
        // Small deterministic pseudo-random symmetric matrix.
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        SymMatrix::new(DMatrix::from_fn(n, n, |_, _| next())).unwrap()
    }

    fn random_unit(n: usize, seed: u64) -> SphereVector {
        let m = dense(n, seed);
        SphereVector::new(m.as_matrix().column(0).into_owned()).unwrap()
    }

    #[test]
    fn eval_examples() {
        let t = pair(&[1.0, 2.0], &[3.0, 4.0]);
        let e1 = SphereVector::basis(2, 0);
        assert_eq!(eval_l(&t, &EvalPoint { lambdas: vec![1.0, 3.0], v: e1.clone() }), 0.0);
        assert_eq!(eval_l(&t, &EvalPoint { lambdas: vec![0.0, 0.0], v: e1.clone() }), 10.0);
        let e2 = SphereVector::basis(2, 1);
        assert_eq!(optimal_eigs(&t, &e2)[0], 2.0);
        let v = SphereVector::from_slice(&[1.0, 1.0]).unwrap();
        assert!((optimal_eigs(&t, &v)[0] - 1.5).abs() < 1e-15);
        assert_eq!(eval_ltilde(&t, &e1), 0.0);

        let x = SymMatrix::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let t2 = MatrixTuple::pair(x, SymMatrix::zeros(2)).unwrap();
        assert_eq!(eval_ltilde(&t2, &e1), 1.0);
    }

    #[test]
    fn ltilde_is_min_over_eigs() {
        let t = MatrixTuple::pair(dense(5, 1), dense(5, 2)).unwrap();
        let v = random_unit(5, 3);
        let lt = eval_ltilde(&t, &v);
        assert!((lt - eval_ltilde(&t, &v.neg())).abs() < 1e-14);
        let opt = optimal_eigs(&t, &v);
        for i in -10..=10 {
            for j in -10..=10 {
                let lambdas = vec![opt[0] + 0.05 * i as f64, opt[1] + 0.05 * j as f64];
                assert!(eval_l(&t, &EvalPoint { lambdas, v: v.clone() }) >= lt - 1e-14);
            }
        }
    }

    #[test]
    fn gradient_consistency() {
        let t = MatrixTuple::pair(dense(6, 4), dense(6, 5)).unwrap();
        let v = random_unit(6, 6);
        let pt = EvalPoint { lambdas: optimal_eigs(&t, &v), v: v.clone() };
        let (dl, gv) = grad_full(&t, &pt);
        assert!(dl.iter().all(|x| x.abs() < 1e-14));
        assert_eq!(gv, grad_ltilde(&t, &v));
        assert!(gv.p.dot(v.as_vec()).abs() < 1e-14);
        let eg = euclidean_grad_ltilde(&t, v.as_vec());
        assert!((project_vec(v.as_vec(), &eg) - &gv.p).norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = MatrixTuple::pair(dense(7, 7), dense(7, 8)).unwrap();
        let v = random_unit(7, 9);
        let g = grad_ltilde(&t, &v);
        let p = tangent_project(&v, random_unit(7, 10).as_vec()).p;
        let h = 1e-5;
        let fp = eval_ltilde(&t, &retract_raw(v.as_vec(), &(&p * h)).unwrap());
        let fm = eval_ltilde(&t, &retract_raw(v.as_vec(), &(&p * -h)).unwrap());
        let fd = (fp - fm) / (2.0 * h);
        assert!((fd - g.p.dot(&p)).abs() <= 1e-6 * fd.abs().max(1e-3));
    }

    #[test]
    fn hessians_symmetric_and_schur() {
        let t = MatrixTuple::pair(dense(6, 11), dense(6, 12)).unwrap();
        let v = random_unit(6, 13);
        for kind in HessianKind::ALL {
            let h = build_hessian(&t, &v, kind);
            assert_eq!(h.as_matrix(), &h.as_matrix().transpose());
            if kind.is_tangent_invariant() {
                assert!((h.as_matrix() * v.as_vec()).norm() < 1e-12);
            }
        }
        let h0 = build_hessian(&t, &v, HessianKind::H0);
        assert!(h0.as_matrix().symmetric_eigenvalues().iter().all(|&x| x >= -1e-10));
        let h2 = build_hessian(&t, &v, HessianKind::H2);
        let h4 = build_hessian(&t, &v, HessianKind::H4);
        let w = w_matrix(&t, &v);
        let schur = h2.as_matrix() - &w * w.transpose() * 0.5;
        let p = tangent_project(&v, random_unit(6, 14).as_vec()).p;
        let q = tangent_project(&v, random_unit(6, 15).as_vec()).p;
        assert!((q.dot(&(&schur * &p)) - q.dot(&(h4.as_matrix() * &p))).abs() < 1e-12);
        for c in w.column_iter() {
            assert!(c.dot(v.as_vec()).abs() < 1e-12);
        }
    }

    #[test]
    fn commuting_hessians_coincide() {
        let t = pair(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        let v = SphereVector::basis(3, 1);
        let h1 = build_hessian(&t, &v, HessianKind::H1);
        let h2 = build_hessian(&t, &v, HessianKind::H2);
        let h4 = build_hessian(&t, &v, HessianKind::H4);
        assert!((h2.as_matrix() - h4.as_matrix()).norm() < 1e-12);
        assert!((h1.as_matrix() - h4.as_matrix()).norm() < 1e-12);
        assert_eq!(w_matrix(&t, &v).norm(), 0.0);
    }

    #[test]
    fn w_matrix_example() {
        let x = SymMatrix::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let t = MatrixTuple::pair(x, SymMatrix::zeros(2)).unwrap();
        let w = w_matrix(&t, &SphereVector::basis(2, 0));
        assert_eq!(w.column(0).as_slice(), &[0.0, -4.0]);
        assert_eq!(w.column(1).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("h3".parse::<HessianKind>().unwrap(), HessianKind::H3);
        assert!("H9".parse::<HessianKind>().is_err());
        assert_eq!(HessianKind::default(), HessianKind::H1);
    }
}
