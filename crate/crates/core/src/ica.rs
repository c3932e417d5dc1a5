//! Blind source separation from fourth-order cumulants, with a joint
//! diagonalizer doing the rotation step.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobi::{run_jacobi, JacobiConfig};
use crate::matcore::{svd, MatrixTuple, SymMatrix};
use crate::randgen::{derive_seed, rng_from_seed};
use crate::vjd::{run_vjd, DiagResult, VjdConfig};

/// Measured signals, one channel per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalMatrix {
    x: DMatrix<f64>,
}

impl SignalMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("signal matrix"));
        }
        if x.ncols() <= x.nrows() {
            return Err(Error::InvalidConfig(format!(
                "need more samples than channels, got {} samples for {} channels",
                x.ncols(),
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal matrix"));
        }
        Ok(SignalMatrix { x })
    }

    pub fn channels(&self) -> usize {
        self.x.nrows()
    }

    pub fn samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Copy with every row shifted to zero mean.
    pub fn centered(&self) -> DMatrix<f64> {
        let mut c = self.x.clone();
        for mut row in c.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        c
    }
}

/// Parses comma-separated signals, one channel per line.
pub fn parse_signal_csv(text: &str) -> Result<SignalMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| Error::Parse { line: idx + 1, msg: format!("{e}: {tok:?}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {} samples, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("signal file"));
    }
    let t = rows[0].len();
    SignalMatrix::new(DMatrix::from_fn(rows.len(), t, |i, j| rows[i][j]))
}

pub fn format_signal_csv(x: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{:?}", x[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_signal_csv(path: impl AsRef<Path>) -> Result<SignalMatrix> {
    parse_signal_csv(&std::fs::read_to_string(path)?)
}

pub fn write_signal_csv(path: impl AsRef<Path>, x: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_signal_csv(x))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct WhitenResult {
    /// `t × n`, equal to `√t · P` for the thin SVD `X = Q Σ Pᵀ`.
    pub p_w: DMatrix<f64>,
    /// `r × n` left singular vectors.
    pub q: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub n: usize,
}

/// Centers `x` and whitens it onto its leading `n` singular directions.
pub fn center_and_whiten(x: &SignalMatrix, n: usize) -> Result<WhitenResult> {
    if n == 0 {
        return Err(Error::InvalidConfig("source count must be positive".into()));
    }
    let xc = x.centered();
    let t = x.samples();
    let s = svd(&xc)?;
    let top = s.singular_values.first().copied().unwrap_or(0.0);
    let tol = top * f64::EPSILON * t.max(x.channels()) as f64;
    let rank = s.singular_values.iter().filter(|&&v| v > tol).count();
    if n > rank {
        return Err(Error::RankDeficient { rank, required: n });
    }
    let scale = (t as f64).sqrt();
    let p_w = DMatrix::from_fn(t, n, |i, j| scale * s.vt[(j, i)]);
    Ok(WhitenResult { p_w, q: s.u.columns(0, n).into_owned(), sigma: s.singular_values[..n].to_vec(), n })
}

/// Fully symmetric 4-index array.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantTensor {
    n: usize,
    data: Vec<f64>,
}

impl CumulantTensor {
    pub fn zeros(n: usize) -> Self {
        CumulantTensor { n, data: vec![0.0; n * n * n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.n + j) * self.n + k) * self.n + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.idx(i, j, k, l)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a: f64, x| a.max(x.abs()))
    }

    fn set_all(&mut self, q: [usize; 4], value: f64) {
        for p in PERMS_4 {
            let idx = self.idx(q[p[0]], q[p[1]], q[p[2]], q[p[3]]);
            self.data[idx] = value;
        }
    }
}

const PERMS_4: [[usize; 4]; 24] = [
    [0, 1, 2, 3],
    [0, 1, 3, 2],
    [0, 2, 1, 3],
    [0, 2, 3, 1],
    [0, 3, 1, 2],
    [0, 3, 2, 1],
    [1, 0, 2, 3],
    [1, 0, 3, 2],
    [1, 2, 0, 3],
    [1, 2, 3, 0],
    [1, 3, 0, 2],
    [1, 3, 2, 0],
    [2, 0, 1, 3],
    [2, 0, 3, 1],
    [2, 1, 0, 3],
    [2, 1, 3, 0],
    [2, 3, 0, 1],
    [2, 3, 1, 0],
    [3, 0, 1, 2],
    [3, 0, 2, 1],
    [3, 1, 0, 2],
    [3, 1, 2, 0],
    [3, 2, 0, 1],
    [3, 2, 1, 0],
];

/// Fourth-order cumulants of the columns of `p_w` with `1/t` moments.
pub fn cumulant_tensor(p_w: &DMatrix<f64>) -> CumulantTensor {
    let n = p_w.ncols();
    let t = p_w.nrows() as f64;
    let cols: Vec<Vec<f64>> = (0..n).map(|i| p_w.column(i).iter().copied().collect()).collect();
    let mean = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / t;
    let second = DMatrix::from_fn(n, n, |i, j| mean(&cols[i], &cols[j]));

    let mut quads = Vec::new();
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                for l in k..n {
                    quads.push([i, j, k, l]);
                }
            }
        }
    }
    let values: Vec<f64> = quads
        .par_iter()
        .map(|&[i, j, k, l]| {
            let (a, b, c, d) = (&cols[i], &cols[j], &cols[k], &cols[l]);
            let m4 = (0..a.len()).map(|s| a[s] * b[s] * c[s] * d[s]).sum::<f64>() / t;
            m4 - second[(i, j)] * second[(k, l)] - second[(i, k)] * second[(j, l)] - second[(i, l)] * second[(j, k)]
        })
        .collect();
    let mut out = CumulantTensor::zeros(n);
    for (q, v) in quads.into_iter().zip(values) {
        out.set_all(q, v);
    }
    out
}

/// `n` diagonal units followed by the `(i, j)`, `i < j`, symmetric pairs
/// with entries `√0.5`.
pub fn eigenmatrix_set(n: usize) -> Vec<SymMatrix> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        let mut m = DMatrix::zeros(n, n);
        m[(i, i)] = 1.0;
        out.push(SymMatrix::new(m).expect("valid"));
    }
    let h = 0.5f64.sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut m = DMatrix::zeros(n, n);
            m[(i, j)] = h;
            m[(j, i)] = h;
            out.push(SymMatrix::new(m).expect("valid"));
        }
    }
    out
}

/// `(N_a)_{ij} = Σ_{kl} K_{ijkl} (M_a)_{kl}`.
pub fn project_cumulant(k: &CumulantTensor, eigenmatrices: &[SymMatrix]) -> Result<MatrixTuple> {
    let n = k.dim();
    let mut out = Vec::with_capacity(eigenmatrices.len());
    for m in eigenmatrices {
        if m.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: m.dim() });
        }
        let mm = m.as_matrix();
        let nz: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| mm[(a, b)] != 0.0)
            .map(|(a, b)| (a, b, mm[(a, b)]))
            .collect();
        let proj = DMatrix::from_fn(n, n, |i, j| nz.iter().map(|&(a, b, w)| k.get(i, j, a, b) * w).sum());
        out.push(SymMatrix::new(proj)?);
    }
    MatrixTuple::new(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcaConfig {
    pub backend: Backend,
    pub vjd: VjdConfig,
    pub jacobi: JacobiConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Vjd,
    Jacobi,
}

#[derive(Clone, Debug)]
pub struct IcaResult {
    /// `n × t` reconstructed sources.
    pub sources: DMatrix<f64>,
    /// `r × n` mixing estimate.
    pub mixing: DMatrix<f64>,
    pub diag: DiagResult,
}

pub fn ica_separate(x: &SignalMatrix, n: usize, cfg: &IcaConfig) -> Result<IcaResult> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 sources, got {n}")));
    }
    let w = center_and_whiten(x, n)?;
    let k = cumulant_tensor(&w.p_w);
    let tuple = project_cumulant(&k, &eigenmatrix_set(n))?;
    let diag = match cfg.backend {
        Backend::Vjd => run_vjd(&tuple, &cfg.vjd)?,
        Backend::Jacobi => run_jacobi(&tuple, &cfg.jacobi)?,
    };
    let xc = x.centered();
    let t = x.samples() as f64;
    let inv_sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, w.sigma.iter().map(|s| t.sqrt() / s)));
    let sources = diag.u.transpose() * inv_sigma * w.q.transpose() * &xc;
    let gram = &sources * sources.transpose();
    let inv = gram.clone().try_inverse().ok_or(Error::RankDeficient { rank: 0, required: n })?;
    let mixing = &xc * sources.transpose() * inv;
    Ok(IcaResult { sources, mixing, diag })
}

/// Three-source test problem with known ground truth.
#[derive(Clone, Debug)]
pub struct Benchmark {
    /// `3 × t`, each row zero mean and unit variance.
    pub sources: DMatrix<f64>,
    pub mixing: DMatrix<f64>,
    /// `mixing · sources` plus noise.
    pub observed: DMatrix<f64>,
}

/// Sinusoid, square wave and sawtooth mixed by a random `3 × 3` matrix with
/// additive Gaussian noise at `snr_db`.
pub fn benchmark_signals(t: usize, snr_db: f64, seed: u64) -> Result<Benchmark> {
    if t < 4 {
        return Err(Error::InvalidConfig(format!("need at least 4 samples, got {t}")));
    }
    let wave = |f: fn(f64) -> f64| -> Vec<f64> {
        let raw: Vec<f64> = (0..t).map(|s| f(8.0 * s as f64 / t as f64)).collect();
        standardize(&raw)
    };
    let rows = [
        wave(|x| (2.0 * PI * 1.3 * x).sin()),
        wave(|x| if (2.0 * PI * 0.7 * x).sin() >= 0.0 { 1.0 } else { -1.0 }),
        wave(|x| 2.0 * (1.9 * x).fract() - 1.0),
    ];
    let sources = DMatrix::from_fn(3, t, |i, j| rows[i][j]);

    let mut rng = rng_from_seed(derive_seed(seed, 10));
    let mixing = loop {
        let a = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
        let sv = a.singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() < 20.0 {
            break a;
        }
    };
    let clean = &mixing * &sources;
    let mut rng = rng_from_seed(derive_seed(seed, 11));
    let mut observed = clean.clone();
    for i in 0..3 {
        let power = clean.row(i).iter().map(|v| v * v).sum::<f64>() / t as f64;
        let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for j in 0..t {
            let z: f64 = rng.sample(StandardNormal);
            observed[(i, j)] += sd * z;
        }
    }
    Ok(Benchmark { sources, mixing, observed })
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Pearson correlation of two equal-length series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `perm[i]` is the estimated row matched to true source `i`.
    pub perm: Vec<usize>,
    /// Absolute correlation per true source.
    pub correlations: Vec<f64>,
    pub signs: Vec<f64>,
}

impl Matching {
    pub fn min_correlation(&self) -> f64 {
        self.correlations.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

const MAX_MATCH: usize = 8;

/// Assignment of estimated rows to true rows maximizing the summed absolute
/// correlation, by exhaustive search.
pub fn matched_correlation(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<Matching> {
    let n = truth.nrows();
    if estimate.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: estimate.nrows() });
    }
    if estimate.ncols() != truth.ncols() {
        return Err(Error::DimensionMismatch { expected: truth.ncols(), found: estimate.ncols() });
    }
    if n > MAX_MATCH {
        return Err(Error::Unsupported(format!("matching is exhaustive and limited to {MAX_MATCH} sources")));
    }
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..n).map(|i| m.row(i).iter().copied().collect()).collect() };
    let (tr, er) = (rows(truth), rows(estimate));
    let c = DMatrix::from_fn(n, n, |i, j| correlation(&tr[i], &er[j]));

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_score = f64::NEG_INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let score: f64 = p.iter().enumerate().map(|(i, &j)| c[(i, j)].abs()).sum();
        if score > best_score {
            best_score = score;
            best = p.to_vec();
        }
    });
    let correlations = best.iter().enumerate().map(|(i, &j)| c[(i, j)].abs()).collect();
    let signs = best.iter().enumerate().map(|(i, &j)| if c[(i, j)] < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok(Matching { perm: best, correlations, signs })
}

fn permute(p: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenmatrices_n2() {
        let set = eigenmatrix_set(2);
        let h = 0.5f64.sqrt();
        assert_eq!(set[0].to_row_major(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(set[1].to_row_major(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(set[2].to_row_major(), vec![0.0, h, h, 0.0]);
        for n in [2, 3, 10] {
            let set = eigenmatrix_set(n);
            assert_eq!(set.len(), n * (n + 1) / 2);
            for (a, x) in set.iter().enumerate() {
                for (b, y) in set.iter().enumerate() {
                    let ip = x.as_matrix().dot(y.as_matrix());
                    assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn kurtosis_identity() {
        let p = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 2.0f64.sqrt(), 0.0]);
        let k = cumulant_tensor(&p);
        let m2: f64 = p.iter().map(|x| x * x).sum::<f64>() / 4.0;
        let m4: f64 = p.iter().map(|x| x.powi(4)).sum::<f64>() / 4.0;
        assert!((m2 - 1.0).abs() < 1e-15);
        assert!((k.get(0, 0, 0, 0) - (m4 - 3.0 * m2 * m2)).abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.5, -3.0, 0.1, 0.2, 1e-17]);
        let s = parse_signal_csv(&format_signal_csv(&x)).unwrap();
        assert_eq!(s.as_matrix(), &x);
        assert!(parse_signal_csv("1,2\n3\n").is_err());
        assert!(parse_signal_csv("1,2\n3,4\n").is_err());
    }

    #[test]
    fn matching_finds_permutation() {
        let s = DMatrix::from_row_slice(
            3,
            5,
            &[1.0, 2.0, 0.0, -1.0, 3.0, 0.0, 1.0, 0.0, 1.0, 0.0, 5.0, -2.0, 1.0, 1.0, 0.0],
        );
        let mut e = DMatrix::zeros(3, 5);
        e.set_row(0, &(-s.row(2)));
        e.set_row(1, &s.row(0));
        e.set_row(2, &(s.row(1) * 2.0));
        let m = matched_correlation(&s, &e).unwrap();
        assert_eq!(m.perm, vec![1, 2, 0]);
        assert_eq!(m.signs, vec![1.0, 1.0, -1.0]);
        assert!(m.min_correlation() > 1.0 - 1e-12);
    }
}
