//! Dense symmetric matrices, norms, commutators and factorization wrappers.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real symmetric matrix. Entries are exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from `m` by averaging with its transpose.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::Empty("matrix"));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self::symmetrize(m))
    }

    pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let a = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = a;
                m[(j, i)] = a;
            }
        }
        SymMatrix { m }
    }

    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: entries.len() });
        }
        Self::new(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix { m: DMatrix::from_diagonal(&DVector::from_column_slice(d)) }
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { m: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix { m: DMatrix::zeros(n, n) }
    }

    /// `U diag(d) Uᵀ`, symmetrized.
    pub fn from_eigen(u: &DMatrix<f64>, d: &[f64]) -> Result<Self> {
        if u.nrows() != u.ncols() || u.ncols() != d.len() {
            return Err(Error::DimensionMismatch { expected: u.ncols(), found: d.len() });
        }
        let mut ud = u.clone();
        for (j, &dj) in d.iter().enumerate() {
            ud.column_mut(j).scale_mut(dj);
        }
        Self::new(ud * u.transpose())
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMatrix { m: &self.m * s }
    }

    /// `Uᵀ M U`, symmetrized.
    pub fn congruence(&self, u: &DMatrix<f64>) -> Self {
        Self::symmetrize(u.transpose() * &self.m * u)
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.m.transpose().as_slice().to_vec()
    }
}

/// Ordered list of symmetric matrices sharing one dimension.
#[derive(Clone, Debug)]
pub struct MatrixTuple {
    mats: Vec<SymMatrix>,
    squares: OnceLock<Vec<DMatrix<f64>>>,
}

impl PartialEq for MatrixTuple {
    fn eq(&self, other: &Self) -> bool {
        self.mats == other.mats
    }
}

impl MatrixTuple {
    pub fn new(mats: Vec<SymMatrix>) -> Result<Self> {
        let first = mats.first().ok_or(Error::Empty("matrix tuple"))?;
        let n = first.dim();
        for a in &mats {
            if a.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: a.dim() });
            }
        }
        Ok(MatrixTuple { mats, squares: OnceLock::new() })
    }

    pub fn pair(a: SymMatrix, b: SymMatrix) -> Result<Self> {
        Self::new(vec![a, b])
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].dim()
    }

    pub fn mats(&self) -> &[SymMatrix] {
        &self.mats
    }

    pub fn get(&self, k: usize) -> &SymMatrix {
        &self.mats[k]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SymMatrix> {
        self.mats.iter()
    }

    pub fn into_mats(self) -> Vec<SymMatrix> {
        self.mats
    }

    /// Cached `A_k²` for every member.
    pub fn squares(&self) -> &[DMatrix<f64>] {
        self.squares.get_or_init(|| self.mats.iter().map(|a| a.as_matrix() * a.as_matrix()).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        MatrixTuple { mats: self.mats.iter().map(|a| a.scaled(s)).collect(), squares: OnceLock::new() }
    }

    /// Largest operator norm among the members.
    pub fn max_op_norm(&self) -> f64 {
        self.mats.iter().map(sym_op_norm).fold(0.0, f64::max)
    }

    /// Sum of squared Frobenius norms.
    pub fn frob_sq_sum(&self) -> f64 {
        self.mats.iter().map(|a| a.as_matrix().norm_squared()).sum()
    }

    /// Largest commutator operator norm over all pairs.
    pub fn max_commutator_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for k in 0..self.len() {
            for l in (k + 1)..self.len() {
                let c = commutator_unchecked(self.get(k), self.get(l));
                best = best.max(op_norm(&c));
            }
        }
        best
    }
}

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut vd = self.eigenvectors.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            vd.column_mut(j).scale_mut(l);
        }
        vd * self.eigenvectors.transpose()
    }
}

/// Thin SVD factors with `M = u · diag(singular_values) · vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub vt: DMatrix<f64>,
}

pub fn commutator(a: &SymMatrix, b: &SymMatrix) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(commutator_unchecked(a, b))
}

fn commutator_unchecked(a: &SymMatrix, b: &SymMatrix) -> DMatrix<f64> {
    // For symmetric A, B: BA = (AB)ᵀ.
    let ab = a.as_matrix() * b.as_matrix();
    let t = ab.transpose();
    ab - t
}

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let g = if m.nrows() >= m.ncols() { m.transpose() * m } else { m * m.transpose() };
    let g = SymMatrix::symmetrize(g);
    let top = g.m.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
    top.max(0.0).sqrt()
}

/// Operator norm of a symmetric matrix, `max |λ|`.
pub fn sym_op_norm(a: &SymMatrix) -> f64 {
    a.m.symmetric_eigenvalues().iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

pub fn frob_norm(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Sum of squared off-diagonal entries.
pub fn off_diag(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s
}

/// Minimum distance between numerically distinct eigenvalues, `+inf` when
/// there is only one.
pub fn spectral_gap(x: &SymMatrix) -> f64 {
    let mut ev: Vec<f64> = x.m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    gap_of_sorted(&ev)
}

pub(crate) fn gap_of_sorted(ev: &[f64]) -> f64 {
    let scale = ev.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()));
    let tol = 1e-9 * scale.max(1.0);
    let mut gap = f64::INFINITY;
    let mut rep = match ev.first() {
        Some(&x) => x,
        None => return gap,
    };
    for &x in &ev[1..] {
        let d = x - rep;
        if d > tol {
            gap = gap.min(d);
            rep = x;
        }
    }
    gap
}

pub fn eig_sym(a: &SymMatrix) -> Result<Spectrum> {
    if a.m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eig_sym input"));
    }
    let eig = a.m.clone().symmetric_eigen();
    let n = a.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// Thin SVD with singular values in non-increasing order.
pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("svd input"));
    }
    let s = m.clone().svd(true, true);
    let u0 = s.u.expect("u requested");
    let vt0 = s.v_t.expect("v_t requested");
    let k = s.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s.singular_values[j].total_cmp(&s.singular_values[i]));
    let u = DMatrix::from_fn(u0.nrows(), k, |r, c| u0[(r, order[c])]);
    let vt = DMatrix::from_fn(k, vt0.ncols(), |r, c| vt0[(order[r], c)]);
    let singular_values = order.iter().map(|&i| s.singular_values[i]).collect();
    Ok(Svd { u, singular_values, vt })
}

/// Parses the square-matrix CSV format: a line holding `n`, then `n` rows.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(Error::Empty("matrix file"))?;
    let n: usize = head.trim().parse().map_err(|e| Error::Parse { line: 1, msg: format!("bad dimension: {e}") })?;
    if n == 0 {
        return Err(Error::Empty("matrix file"));
    }
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (idx, line) in lines {
        if rows == n {
            return Err(Error::Parse { line: idx + 1, msg: "too many rows".into() });
        }
        let before = data.len();
        for tok in line.split(',') {
            let x: f64 =
                tok.trim().parse().map_err(|e| Error::Parse { line: idx + 1, msg: format!("{e}: {tok:?}") })?;
            data.push(x);
        }
        if data.len() - before != n {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected {n} values, found {}", data.len() - before),
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse { line: rows + 2, msg: format!("expected {n} rows, found {rows}") });
    }
    Ok(DMatrix::from_row_slice(n, n, &data))
}

/// Parses a symmetric matrix, rejecting asymmetry beyond `1e-8` relative.
pub fn parse_sym_csv(text: &str) -> Result<SymMatrix> {
    let m = parse_matrix_csv(text)?;
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix file"));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let diff = (m[(i, j)] - m[(j, i)]).abs();
            if diff > 1e-8 * scale {
                return Err(Error::Asymmetric { row: i, col: j, diff });
            }
        }
    }
    SymMatrix::new(m)
}

pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    writeln!(out, "{}", m.nrows()).unwrap();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{:?}", m[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_sym_csv(path: impl AsRef<Path>) -> Result<SymMatrix> {
    parse_sym_csv(&std::fs::read_to_string(path)?)
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&std::fs::read_to_string(path)?)
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_matrix_csv(m))?;
    Ok(())
}
