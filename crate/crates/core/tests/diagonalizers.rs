use jointdiag::jacobi::{givens, optimal_angle, run_jacobi, JacobiConfig};
use jointdiag::matcore::{commutator, eig_sym, off_diag, op_norm};
use jointdiag::metrics::{check_lower_bound, lin_ratio, objective_j, objective_j_of, stability_constants, JNorm};
use jointdiag::randgen::{generate, generate_with_commutator, rng_from_seed, sample_haar_orthogonal, GenConfig};
use jointdiag::sphere::SphereVector;
use jointdiag::vjd::{commuting_approximants, gram_schmidt_append, nearest_orthogonal, run_vjd, VjdConfig};
use jointdiag::{Error, MatrixTuple, SymMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn commuting(n: usize, seed: u64) -> MatrixTuple {
    generate(&GenConfig::new(n, 0.0, seed)).unwrap().commuting
}

fn near(n: usize, comm: f64, seed: u64) -> MatrixTuple {
    generate_with_commutator(&GenConfig::new(n, 0.0, seed), comm).unwrap().perturbed
}

fn scale(t: &MatrixTuple) -> f64 {
    t.frob_sq_sum()
}

/// Joint eigenpairs of a commuting pair: diagonalize `A`, read `B`'s
/// diagonal in that basis.
fn joint_pairs(t: &MatrixTuple) -> Vec<(f64, f64)> {
    let sp = eig_sym(t.get(0)).unwrap();
    let b = t.get(1).congruence(&sp.eigenvectors);
    sp.eigenvalues.iter().zip(b.diagonal()).map(|(&x, y)| (x, y)).collect()
}

#[test]
fn vjd_commuting_examples() {
    for seed in 0..10 {
        let t = commuting(20, seed);
        let res = run_vjd(&t, &VjdConfig::default()).unwrap();
        assert!(res.j_objective <= 1e-16 * scale(&t), "seed {seed}: {}", res.j_objective);
        let n = 20;
        assert!((res.u.transpose() * &res.u - DMatrix::<f64>::identity(n, n)).norm() <= 1e-10);
        assert_eq!(res.column_residuals.len(), n);

        let mut ours: Vec<(f64, f64)> = (0..n).map(|j| (res.lambdas[0][j], res.lambdas[1][j])).collect();
        let mut oracle = joint_pairs(&t);
        ours.sort_by(|a, b| a.0.total_cmp(&b.0));
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a.0 - b.0).abs() <= 1e-8 && (a.1 - b.1).abs() <= 1e-8);
        }

        let approx = commuting_approximants(&res).unwrap();
        for k in 0..2 {
            assert!((approx.get(k).as_matrix() - t.get(k).as_matrix()).norm() <= 1e-8);
        }
    }
}

#[test]
fn approximants_commute() {
    for seed in 0..5 {
        let t = near(15, 1e-3, seed);
        let res = run_vjd(&t, &VjdConfig::default()).unwrap();
        let a = commuting_approximants(&res).unwrap();
        let c = op_norm(&commutator(a.get(0), a.get(1)).unwrap());
        let (na, nb) = (op_norm(a.get(0).as_matrix()), op_norm(a.get(1).as_matrix()));
        assert!(c <= 1e-12 * na * nb, "{c}");
        // J is the Frobenius distance to the approximants.
        let d: f64 = t.iter().zip(a.iter()).map(|(x, y)| (x.as_matrix() - y.as_matrix()).norm_squared()).sum();
        assert!((d - res.j_objective).abs() <= 1e-10 * (1.0 + d));
    }
}

#[test]
fn vjd_respects_lower_bound_at_n50() {
    for seed in 0..3 {
        let t = near(50, 1e-4, 300 + seed);
        let res = run_vjd(&t, &VjdConfig::default()).unwrap();
        let rep = check_lower_bound(&t, &res).unwrap();
        assert!(rep.satisfied, "{rep:?}");
        assert!(rep.normalized);
        assert!(res.j_objective >= (1e-4f64).powi(2) / 8.0 * 0.99);
    }
}

#[test]
fn lin_ratio_sweep() {
    let mut big = Vec::new();
    let mut small = Vec::new();
    for seed in 0..5 {
        let r2 =
            lin_ratio(&near(20, 1e-2, seed), &run_vjd(&near(20, 1e-2, seed), &VjdConfig::default()).unwrap()).unwrap();
        let t = near(20, 1e-6, seed);
        let r6 = lin_ratio(&t, &run_vjd(&t, &VjdConfig::default()).unwrap()).unwrap();
        big.push(r2);
        small.push(r6);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&small) < mean(&big), "{small:?} vs {big:?}");

    for seed in 0..30 {
        let t = near(50, 1e-4, 600 + seed);
        let r = lin_ratio(&t, &run_vjd(&t, &VjdConfig::default()).unwrap()).unwrap();
        assert!(r.is_finite() && r < 10.0, "seed {seed}: {r}");
    }

    let t = MatrixTuple::pair(SymMatrix::from_diagonal(&[1.0, 2.0]), SymMatrix::from_diagonal(&[3.0, 4.0])).unwrap();
    let res = run_vjd(&t, &VjdConfig::default()).unwrap();
    assert!(matches!(lin_ratio(&t, &res), Err(Error::ExactlyCommuting)));
}

#[test]
fn orthogonality_defect_shrinks_with_commutator() {
    let defect = |comm: f64| {
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let t = near(12, comm, 40 + seed);
            let v = run_vjd(&t, &VjdConfig::default()).unwrap().raw_columns.unwrap();
            let g = v.transpose() * &v;
            for i in 0..12 {
                for j in 0..12 {
                    if i != j {
                        worst = worst.max(g[(i, j)].abs());
                    }
                }
            }
        }
        worst
    };
    let (hi, lo) = (defect(1e-2), defect(1e-6));
    assert!(lo < hi, "{lo} vs {hi}");
}

#[test]
fn gram_schmidt_output_orthogonal() {
    let u = sample_haar_orthogonal(10, 3);
    let basis: Vec<DVector<f64>> = (0..6).map(|k| u.column(k).into_owned()).collect();
    let mut rng = rng_from_seed(4);
    for _ in 0..100 {
        let v = SphereVector::new(DVector::from_fn(10, |_, _| rng.sample(StandardNormal))).unwrap();
        let w = gram_schmidt_append(&basis, &v).unwrap();
        for b in &basis {
            assert!(w.as_vec().dot(b).abs() <= 1e-12);
        }
    }
}

#[test]
fn nearest_orthogonal_is_optimal() {
    let mut rng = rng_from_seed(11);
    let v = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = nearest_orthogonal(&v).unwrap();
    let du = (&u - &v).norm();
    for s in 0..1000 {
        let q = sample_haar_orthogonal(4, 10_000 + s);
        assert!(du <= (&q - &v).norm() + 1e-12);
    }
    // First-order optimality: UᵀV symmetric positive semidefinite.
    let m = u.transpose() * &v;
    assert!((&m - m.transpose()).norm() <= 1e-10);
    let sym = SymMatrix::new(m).unwrap();
    assert!(eig_sym(&sym).unwrap().eigenvalues[0] >= -1e-10);
}

#[test]
fn givens_spec_sign_convention() {
    // R = I + (c−1)eᵢeᵢᵀ − s eᵢeⱼᵀ + s eⱼeᵢᵀ + (c−1)eⱼeⱼᵀ.
    let r = givens(0, 1, 0.0, 1.0, 2).unwrap();
    assert_eq!(r[(0, 1)], -1.0);
    assert_eq!(r[(1, 0)], 1.0);
    let mut rng = rng_from_seed(2);
    for _ in 0..20 {
        let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = givens(2, 5, t.cos(), t.sin(), 7).unwrap();
        assert!((r.transpose() * &r - DMatrix::<f64>::identity(7, 7)).norm() <= 1e-14);
    }
}

#[test]
fn optimal_angle_beats_random_angles() {
    let t = near(6, 1e-1, 5);
    for (i, j) in [(0, 1), (2, 4), (1, 5)] {
        let (c, s) = optimal_angle(&t, i, j).unwrap();
        let off = |c: f64, s: f64| {
            let r = givens(i, j, c, s, 6).unwrap();
            t.iter().map(|a| off_diag(a.congruence(&r).as_matrix())).sum::<f64>()
        };
        let best = off(c, s);
        let mut rng = rng_from_seed(i as u64 * 10 + j as u64);
        for _ in 0..1000 {
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            assert!(best <= off(th.cos(), th.sin()) + 1e-12);
        }
    }
}

#[test]
fn jacobi_commuting_contract() {
    let cfg = JacobiConfig::default();
    for seed in 0..5 {
        let t = commuting(20, seed);
        let res = run_jacobi(&t, &cfg).unwrap();
        let off: f64 = t.iter().map(|a| off_diag(a.congruence(&res.u).as_matrix())).sum();
        let tol: f64 = t.iter().map(|a| a.as_matrix().norm()).sum::<f64>() * cfg.eps;
        assert!(off <= tol);
        assert!(res.converged);
        assert!((res.u.transpose() * &res.u - DMatrix::<f64>::identity(20, 20)).norm() <= 1e-10);
        for w in res.sweep_offs.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // Rotations preserve Frobenius norms.
        for a in t.iter() {
            let b = a.congruence(&res.u);
            assert!((b.as_matrix().norm() - a.as_matrix().norm()).abs() <= 1e-12 * a.as_matrix().norm().max(1.0));
        }
    }
}

#[test]
fn jacobi_and_vjd_agree_on_commuting_inputs() {
    // Both methods run to the rounding floor: VJD with an unreachable
    // gradient tolerance, Jacobi until no rotation is left.
    let mut vcfg = VjdConfig::default();
    vcfg.solver.eps_stop = 1e-300;
    let jcfg = JacobiConfig { eps: 1e-300, ..JacobiConfig::default() };
    for seed in 0..5 {
        let n = 30;
        let t = commuting(n, 50 + seed);
        let jv = run_vjd(&t, &vcfg).unwrap().j_objective;
        let jj = run_jacobi(&t, &jcfg).unwrap().j_objective;
        let floor = (n as f64 * f64::EPSILON).powi(2) * scale(&t);
        assert!(jv.max(floor) <= 10.0 * jj.max(floor) && jj.max(floor) <= 10.0 * jv.max(floor), "{jv} vs {jj}");
    }
}

#[test]
fn objective_identities() {
    let t = near(8, 1e-2, 1);
    let eye = DMatrix::<f64>::identity(8, 8);
    let diag: Vec<Vec<f64>> = t.iter().map(|a| a.diagonal()).collect();
    let jf = objective_j(&t, &eye, &diag, JNorm::Frobenius).unwrap();
    let off: f64 = t.iter().map(|a| off_diag(a.as_matrix())).sum();
    assert!((jf - off).abs() <= 1e-14 * (1.0 + off));
    assert!(objective_j(&t, &eye, &diag, JNorm::Operator).unwrap() <= jf);

    let u = sample_haar_orthogonal(8, 2);
    let l: Vec<Vec<f64>> = t.iter().map(|a| a.congruence(&u).diagonal()).collect();
    let jf = objective_j(&t, &u, &l, JNorm::Frobenius).unwrap();
    let off: f64 = t.iter().map(|a| off_diag(a.congruence(&u).as_matrix())).sum();
    assert!((jf - off).abs() <= 1e-12 * (1.0 + off));

    let res = run_vjd(&t, &VjdConfig::default()).unwrap();
    assert_eq!(objective_j_of(&t, &res, JNorm::Frobenius).unwrap(), res.j_objective);
}

#[test]
fn lower_bound_reports() {
    let t = MatrixTuple::pair(SymMatrix::from_diagonal(&[0.5, -0.2]), SymMatrix::from_diagonal(&[0.1, 0.3])).unwrap();
    let rep = check_lower_bound(&t, &run_vjd(&t, &VjdConfig::default()).unwrap()).unwrap();
    assert_eq!(rep.comm_norm, 0.0);
    assert!(rep.satisfied);

    let mut ratios = Vec::new();
    for seed in 0..200 {
        let t = near(10, 1e-3, 10_000 + seed);
        let res = run_vjd(&t, &VjdConfig::default()).unwrap();
        let rep = check_lower_bound(&t, &res).unwrap();
        assert!(rep.satisfied, "seed {seed}: {rep:?}");
        assert!((rep.lower_bound / (rep.comm_norm * rep.comm_norm / 8.0) - 1.0).abs() < 1e-12);
        assert!((rep.comm_norm - 1e-3).abs() < 2e-5);
        ratios.push(rep.j_frobenius / rep.comm_norm.powi(2));
    }
    assert!(ratios.iter().all(|r| r.is_finite()));

    let big = MatrixTuple::pair(
        SymMatrix::from_row_major(2, &[3.0, 1.0, 1.0, 0.0]).unwrap(),
        SymMatrix::from_diagonal(&[1.0, -1.0]),
    )
    .unwrap();
    let rep = check_lower_bound(&big, &run_jacobi(&big, &JacobiConfig::default()).unwrap()).unwrap();
    assert!(!rep.normalized);
    assert!(rep.satisfied);
}

#[test]
fn stability_constant_examples() {
    let z = stability_constants(0.0, 0.0, 1.0, 2.0);
    assert_eq!((z.eta, z.eps), (0.0, 0.0));
    let s = stability_constants(0.004, 0.006, 1.0, 3.0);
    assert!((s.eta - 0.04).abs() < 1e-15);
    assert!((s.eps - 128.0 / 3.0 * 1e-4).abs() < 1e-15);
    assert!(s.applicable);
    assert!(!stability_constants(0.1, 0.1, 1.0, 1.0).applicable);
    let t = 7.5;
    let h = stability_constants(0.004 * t, 0.006 * t, t, 3.0 * t);
    assert!((h.eps - s.eps).abs() <= 1e-15 && (h.eta - t * s.eta).abs() <= 1e-15);
}
