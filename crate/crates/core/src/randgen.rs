//! Random commuting tuples and their Gaussian perturbations.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{MatrixTuple, SymMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    #[serde(default = "two")]
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub normalize: bool,
}

fn two() -> usize {
    2
}

impl GenConfig {
    pub fn new(n: usize, sigma: f64, seed: u64) -> Self {
        GenConfig { n, m: 2, sigma, seed, normalize: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be at least 2, got {}", self.n)));
        }
        if self.m < 1 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row by row so the stream order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

pub fn haar_orthogonal_with<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Haar-distributed orthogonal matrix.
pub fn sample_haar_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    haar_orthogonal_with(&mut rng_from_seed(seed), n)
}

/// `(G + Gᵀ)/2` with `G` standard Gaussian; density `∝ exp(−tr H²/2)`.
pub fn goe_matrix_with<R: Rng>(rng: &mut R, n: usize) -> SymMatrix {
    let g = gaussian_matrix(rng, n, n);
    let h = (&g + g.transpose()) * 0.5;
    SymMatrix::symmetrize(h)
}

pub fn goe_eigenvalues_with<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let h = goe_matrix_with(rng, n);
    let mut ev: Vec<f64> = h.as_matrix().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Ascending eigenvalues with joint density `∝ exp(−Σx²/2) ∏|x_j − x_i|`.
pub fn sample_goe_eigenvalues(n: usize, seed: u64) -> Vec<f64> {
    goe_eigenvalues_with(&mut rng_from_seed(seed), n)
}

/// `(U Λ_1 Uᵀ, …, U Λ_m Uᵀ)` with one Haar `U` and independent eigenvalue
/// draws. With `normalize`, each `Λ_k` is scaled to unit operator norm.
pub fn sample_commuting_pair(cfg: &GenConfig) -> Result<MatrixTuple> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let u = haar_orthogonal_with(&mut rng, cfg.n);
    let mut mats = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let mut ev = goe_eigenvalues_with(&mut rng, cfg.n);
        if cfg.normalize {
            let s = ev.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if s > 0.0 {
                ev.iter_mut().for_each(|x| *x /= s);
            }
        }
        mats.push(SymMatrix::from_eigen(&u, &ev)?);
    }
    MatrixTuple::new(mats)
}

/// Unit-operator-norm symmetric Gaussian directions, one per matrix.
fn perturbation_directions(n: usize, m: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..m)
        .map(|_| {
            let g = gaussian_matrix(&mut rng, n, n);
            let d = SymMatrix::symmetrize((&g + g.transpose()) * 0.5);
            let s = crate::matcore::sym_op_norm(&d);
            d.into_matrix() / s
        })
        .collect()
}

fn add_scaled(t: &MatrixTuple, dirs: &[DMatrix<f64>], sigma: f64) -> MatrixTuple {
    let mats = t.iter().zip(dirs).map(|(a, d)| SymMatrix::symmetrize(a.as_matrix() + d * sigma)).collect();
    MatrixTuple::new(mats).expect("shapes preserved")
}

/// Adds independent symmetric Gaussian matrices of operator norm `sigma`.
pub fn perturb(t: &MatrixTuple, sigma: f64, seed: u64) -> Result<MatrixTuple> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let dirs = perturbation_directions(t.dim(), t.len(), seed);
    Ok(add_scaled(t, &dirs, sigma))
}

/// Scales the tuple by `1/max(1, max_k ‖A_k‖)`; returns the factor applied.
pub fn normalize_tuple(t: &MatrixTuple) -> (MatrixTuple, f64) {
    let s = t.max_op_norm();
    if s > 1.0 {
        (t.scaled(1.0 / s), 1.0 / s)
    } else {
        (t.clone(), 1.0)
    }
}

/// A commuting tuple and its perturbation.
#[derive(Clone, Debug)]
pub struct Sample {
    pub commuting: MatrixTuple,
    pub perturbed: MatrixTuple,
    pub sigma: f64,
    pub comm_norm: f64,
}

/// Draws a commuting tuple, perturbs it with `cfg.sigma` and, with
/// `cfg.normalize`, rescales the result to operator norms at most 1.
pub fn generate(cfg: &GenConfig) -> Result<Sample> {
    let commuting = sample_commuting_pair(cfg)?;
    let mut perturbed = perturb(&commuting, cfg.sigma, derive_seed(cfg.seed, 2))?;
    if cfg.normalize {
        perturbed = normalize_tuple(&perturbed).0;
    }
    let comm_norm = perturbed.max_commutator_norm();
    Ok(Sample { commuting, perturbed, sigma: cfg.sigma, comm_norm })
}

/// Like [`generate`], but picks the perturbation size so that the normalized
/// result has commutator norm `target` (to about 1% relative).
pub fn generate_with_commutator(cfg: &GenConfig, target: f64) -> Result<Sample> {
    if !(target > 0.0) {
        return Err(Error::InvalidConfig(format!("target commutator must be positive, got {target}")));
    }
    let commuting = sample_commuting_pair(cfg)?;
    let dirs = perturbation_directions(cfg.n, cfg.m, derive_seed(cfg.seed, 2));
    let build = |sigma: f64| {
        let p = add_scaled(&commuting, &dirs, sigma);
        let p = if cfg.normalize { normalize_tuple(&p).0 } else { p };
        let c = p.max_commutator_norm();
        (p, c)
    };
    // The commutator grows linearly in sigma for small sigma; secant steps on
    // log-log scale converge in a handful of evaluations.
    let base = build(0.0).1;
    let mut s0 = 1e-3;
    let (_, mut c0) = build(s0);
    let slope1 = (c0 - base).max(f64::MIN_POSITIVE) / s0;
    let mut s1 = (target / slope1).max(1e-300);
    let (mut p1, mut c1) = build(s1);
    for _ in 0..30 {
        if ((c1 - target) / target).abs() < 1e-3 {
            break;
        }
        let (l0, l1) = (c0.ln(), c1.ln());
        let k = if (l1 - l0).abs() > 1e-12 { (s1.ln() - s0.ln()) / (l1 - l0) } else { 1.0 };
        let k = k.clamp(0.1, 2.0);
        let s2 = (s1.ln() + k * (target.ln() - l1)).exp();
        s0 = s1;
        c0 = c1;
        s1 = s2;
        let next = build(s1);
        p1 = next.0;
        c1 = next.1;
    }
    Ok(Sample { commuting, perturbed: p1, sigma: s1, comm_norm: c1 })
}
