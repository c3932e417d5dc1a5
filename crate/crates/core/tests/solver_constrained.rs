use jointdiag::constrained::{dist_to_s, project_eps, sample_feasible_init, solve_constrained, ConstraintSet};
use jointdiag::cost::{build_hessian, eval_ltilde, grad_ltilde, HessianKind};
use jointdiag::randgen::{generate, rng_from_seed, sample_haar_orthogonal, GenConfig};
use jointdiag::solver::{backtrack, newton_direction, solve_alternating, solve_sphere, SolverConfig};
use jointdiag::sphere::{retract, tangent_project, SphereVector, TangentVector};
use jointdiag::{MatrixTuple, SymMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gauss_vec(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng_from_seed(seed);
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn unit(n: usize, seed: u64) -> SphereVector {
    SphereVector::new(gauss_vec(n, seed)).unwrap()
}

fn diag_pair() -> MatrixTuple {
    MatrixTuple::pair(SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]), SymMatrix::from_diagonal(&[4.0, 5.0, 6.0])).unwrap()
}

/// First `j` columns of a Haar matrix.
fn random_basis(n: usize, j: usize, seed: u64) -> Vec<DVector<f64>> {
    let u = sample_haar_orthogonal(n, seed);
    (0..j).map(|k| u.column(k).into_owned()).collect()
}

/// Random point of the relaxed feasible set: a tilt of at most
/// `acos(1 − ε/2)` away from a random feasible unit vector.
fn random_feasible(cs: &ConstraintSet, seed: u64) -> SphereVector {
    let n = cs.dim();
    let u = sample_feasible_init(cs, seed).unwrap();
    let z = tangent_project(&u, &gauss_vec(n, seed ^ 0xabc)).p;
    let z = &z / z.norm();
    let mut rng = rng_from_seed(seed ^ 0xdef);
    let phi = rng.random_range(0.0..1.0) * (1.0 - cs.eps() / 2.0).acos();
    SphereVector::new(u.as_vec() * phi.cos() + z * phi.sin()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_idempotent_and_feasible(n in 3usize..10, j in 1usize..3, eps in 1e-4f64..0.5, seed in any::<u64>()) {
        let cs = ConstraintSet::new(n, random_basis(n, j, seed), eps).unwrap();
        let v = unit(n, seed ^ 1);
        let p = project_eps(&v, &cs);
        let pp = project_eps(&p, &cs);
        prop_assert!((p.as_vec() - pp.as_vec()).norm() <= 1e-12);
        prop_assert!(dist_to_s(&p, &cs) <= eps.sqrt() + 1e-12);
    }

    #[test]
    fn larger_eps_is_closer(n in 3usize..10, j in 1usize..3, e1 in 1e-4f64..0.5, e2 in 1e-4f64..0.5, seed in any::<u64>()) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let basis = random_basis(n, j, seed);
        let v = unit(n, seed ^ 2);
        let d = |e: f64| {
            let cs = ConstraintSet::new(n, basis.clone(), e).unwrap();
            (v.as_vec() - project_eps(&v, &cs).as_vec()).norm()
        };
        prop_assert!(d(lo) >= d(hi) - 1e-14);
    }

    #[test]
    fn iterates_stay_on_sphere(n in 3usize..12, seed in any::<u64>()) {
        let t = generate(&GenConfig::new(n, 1e-3, seed)).unwrap().perturbed;
        let cfg = SolverConfig { record_points: true, ..SolverConfig::default() };
        let (_, trace) = solve_sphere(&t, &unit(n, seed ^ 3), &cfg).unwrap();
        for p in &trace.points {
            prop_assert!((p.as_vec().norm() - 1.0).abs() <= 1e-14);
        }
        for w in trace.iterates.windows(2) {
            prop_assert!(w[1].value <= w[0].value);
        }
    }
}

#[test]
fn newton_direction_examples() {
    let v = unit(5, 1);
    let zero = TangentVector::zero(&v);
    let t = generate(&GenConfig::new(5, 0.1, 1)).unwrap().perturbed;
    let h = build_hessian(&t, &v, HessianKind::H1);
    assert_eq!(newton_direction(&h, &zero, HessianKind::H1, 1e-12).unwrap().p.norm(), 0.0);

    let id = SymMatrix::new(DMatrix::identity(5, 5) - v.as_vec() * v.as_vec().transpose()).unwrap();
    let g = tangent_project(&v, &gauss_vec(5, 2));
    let s = newton_direction(&id, &g, HessianKind::H1, 1e-12).unwrap();
    assert!((s.p + &g.p).norm() <= 1e-13);
}

#[test]
fn newton_direction_is_tangent_least_squares() {
    for seed in 0..20 {
        let n = 5;
        let t = generate(&GenConfig::new(n, 0.2, seed)).unwrap().perturbed;
        let v = unit(n, seed + 50);
        let g = grad_ltilde(&t, &v);
        // Orthonormal basis of the tangent space: Haar columns projected and
        // re-orthonormalized via QR.
        let b = {
            let raw = DMatrix::from_columns(
                &random_basis(n, n - 1, seed).iter().map(|c| tangent_project(&v, c).p).collect::<Vec<_>>(),
            );
            raw.qr().q()
        };
        for kind in HessianKind::ALL {
            let h = build_hessian(&t, &v, kind);
            let s = newton_direction(&h, &g, kind, 1e-12).unwrap();
            assert!(s.p.dot(v.as_vec()).abs() <= 1e-12);
            // Oracle: minimize ‖H B y + g‖ over y via normal equations, with
            // the residual projected for the kinds that preserve the tangent
            // space.
            let proj = if kind.is_tangent_invariant() {
                DMatrix::identity(n, n) - v.as_vec() * v.as_vec().transpose()
            } else {
                DMatrix::identity(n, n)
            };
            let m = &proj * h.as_matrix() * &b;
            let y = (m.transpose() * &m).lu().solve(&(-m.transpose() * &g.p)).unwrap();
            let oracle = &b * y;
            let r_ours = (&proj * h.as_matrix() * &s.p + &g.p).norm();
            let r_oracle = (&proj * h.as_matrix() * &oracle + &g.p).norm();
            assert!(r_ours <= r_oracle + 1e-10 * (1.0 + g.p.norm()), "{kind:?}: {r_ours} vs {r_oracle}");
        }
    }
}

#[test]
fn backtrack_contracts() {
    let cfg = SolverConfig::default();
    let t = generate(&GenConfig::new(10, 1e-2, 3)).unwrap().perturbed;
    for seed in 0..20 {
        let v = unit(10, seed);
        let g = grad_ltilde(&t, &v);
        let h = build_hessian(&t, &v, HessianKind::H1);
        let s = newton_direction(&h, &g, HessianKind::H1, cfg.pinv_tol).unwrap();
        if g.dot(&s) >= 0.0 {
            continue;
        }
        let alpha = backtrack(&t, &v, &s, &cfg).unwrap();
        let w = retract(&v, &s.scaled(alpha)).unwrap();
        assert!(eval_ltilde(&t, &w) <= eval_ltilde(&t, &v) + cfg.tau * alpha * g.dot(&s));
        let huge = s.scaled(1e6 / s.norm());
        assert!(backtrack(&t, &v, &huge, &cfg).unwrap() < 1.0);
    }
    let g = grad_ltilde(&t, &unit(10, 0));
    assert!(backtrack(&t, &g.base, &g, &cfg).is_err());
}

#[test]
fn full_step_near_common_eigenvector() {
    let t = generate(&GenConfig::new(12, 0.0, 8)).unwrap().commuting;
    let u = jointdiag::matcore::eig_sym(t.get(0)).unwrap().eigenvectors;
    let cfg = SolverConfig::default();
    let target = u.column(4).into_owned();
    let v = SphereVector::new(&target + gauss_vec(12, 9) * 1e-4).unwrap();
    let g = grad_ltilde(&t, &v);
    let h = build_hessian(&t, &v, cfg.hessian_kind);
    let s = newton_direction(&h, &g, cfg.hessian_kind, cfg.pinv_tol).unwrap();
    assert_eq!(backtrack(&t, &v, &s, &cfg).unwrap(), 1.0);
}

#[test]
fn solve_sphere_diagonal_example() {
    let t = diag_pair();
    let v0 = SphereVector::from_slice(&[0.05, 1.0, -0.03]).unwrap();
    let (m, trace) = solve_sphere(&t, &v0, &SolverConfig::default()).unwrap();
    assert!(trace.converged);
    assert!((m.v.as_vec()[1].abs() - 1.0).abs() < 1e-10);
    assert!((m.lambdas[0] - 2.0).abs() < 1e-10 && (m.lambdas[1] - 5.0).abs() < 1e-10);
    assert!(m.residual <= 1e-20);
}

#[test]
fn solvers_converge_on_commuting_pairs() {
    let mut good = 0;
    for seed in 0..100 {
        let t = generate(&GenConfig::new(50, 0.0, seed)).unwrap().commuting;
        let (m, trace) = solve_sphere(&t, &unit(50, seed + 1000), &SolverConfig::default()).unwrap();
        if trace.converged && m.residual <= 1e-16 {
            good += 1;
        }
    }
    assert!(good >= 99, "{good}/100");
}

#[test]
fn alternating_variant() {
    let t = diag_pair();
    let v0 = SphereVector::from_slice(&[0.05, 1.0, -0.03]).unwrap();
    let (a, _) = solve_alternating(&t, &v0, &SolverConfig::default()).unwrap();
    let (b, _) = solve_sphere(&t, &v0, &SolverConfig::default()).unwrap();
    assert!((a.v.dot(&b.v).abs() - 1.0).abs() < 1e-10);

    for seed in 0..10 {
        let t = generate(&GenConfig::new(50, 0.0, seed)).unwrap().commuting;
        let (m, trace) = solve_alternating(&t, &unit(50, seed + 7), &SolverConfig::default()).unwrap();
        assert!(m.residual <= 1e-16, "seed {seed}: {}", m.residual);
        for w in trace.iterates.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }
}

#[test]
fn minimizer_eigs_are_rayleigh_quotients() {
    let t = generate(&GenConfig::new(15, 1e-2, 4)).unwrap().perturbed;
    let (m, _) = solve_sphere(&t, &unit(15, 4), &SolverConfig::default()).unwrap();
    assert_eq!(m.lambdas, jointdiag::cost::optimal_eigs(&t, &m.v));
}

#[test]
fn feasible_init_contracts() {
    let cs = ConstraintSet::unconstrained(4, 0.1).unwrap();
    assert!((sample_feasible_init(&cs, 1).unwrap().as_vec().norm() - 1.0).abs() < 1e-15);
    let n = 5;
    let basis: Vec<DVector<f64>> = (0..n - 1).map(|i| SphereVector::basis(n, i).into_vec()).collect();
    let cs = ConstraintSet::new(n, basis, 0.1).unwrap();
    for s in 0..20 {
        let v = sample_feasible_init(&cs, s).unwrap();
        assert!((v.as_vec()[n - 1].abs() - 1.0).abs() < 1e-15);
    }
    let full: Vec<DVector<f64>> = (0..n).map(|i| SphereVector::basis(n, i).into_vec()).collect();
    assert!(sample_feasible_init(&ConstraintSet::new(n, full, 0.1).unwrap(), 0).is_err());

    let cs = ConstraintSet::new(8, random_basis(8, 3, 77), 0.1).unwrap();
    for s in 0..1000 {
        let v = sample_feasible_init(&cs, s).unwrap();
        for w in cs.basis() {
            assert!(v.as_vec().dot(w).abs() <= 1e-12);
        }
    }
}

#[test]
fn projection_beats_random_feasible_points() {
    for case in 0..5 {
        let cs = ConstraintSet::new(6, random_basis(6, 2, case), 0.05 + 0.05 * case as f64).unwrap();
        let v = unit(6, case + 100);
        let p = project_eps(&v, &cs);
        let dp = (v.as_vec() - p.as_vec()).norm();
        for s in 0..1000 {
            let w = random_feasible(&cs, case * 10_000 + s);
            assert!(dist_to_s(&w, &cs) <= cs.eps().sqrt() + 1e-12);
            assert!(dp <= (v.as_vec() - w.as_vec()).norm() + 1e-12);
        }
    }
}

#[test]
fn constrained_examples() {
    let t = diag_pair();
    let cs = ConstraintSet::new(3, vec![SphereVector::basis(3, 1).into_vec()], 1e-4).unwrap();
    for seed in 0..10 {
        let v0 = sample_feasible_init(&cs, seed).unwrap();
        let (m, trace) = solve_constrained(&t, &cs, &v0, &SolverConfig::default()).unwrap();
        let x = m.v.as_vec();
        assert!(x[0].abs() > 1.0 - 1e-9 || x[2].abs() > 1.0 - 1e-9, "{x:?}");
        assert!(m.residual <= 1e-18);
        assert!(dist_to_s(&m.v, &cs) <= 1e-2 + 1e-12);
        assert!(!trace.iterates.is_empty());
    }

    let t = generate(&GenConfig::new(10, 1e-3, 5)).unwrap().perturbed;
    let v0 = unit(10, 6);
    let cfg = SolverConfig { record_points: true, ..SolverConfig::default() };
    let (a, ta) = solve_constrained(&t, &ConstraintSet::unconstrained(10, 0.1).unwrap(), &v0, &cfg).unwrap();
    let (b, tb) = solve_sphere(&t, &v0, &cfg).unwrap();
    assert_eq!(a.v, b.v);
    assert_eq!(ta.points, tb.points);

    let cs = ConstraintSet::new(10, random_basis(10, 4, 3), 1e-3).unwrap();
    for seed in 0..10 {
        let v0 = sample_feasible_init(&cs, seed).unwrap();
        let (m, _) = solve_constrained(&t, &cs, &v0, &SolverConfig::default()).unwrap();
        assert!(dist_to_s(&m.v, &cs) <= cs.eps().sqrt() + 1e-12);
    }
}

#[test]
fn projection_spec_example() {
    let basis = vec![SphereVector::basis(3, 1).into_vec(), SphereVector::basis(3, 2).into_vec()];
    let cs = ConstraintSet::new(3, basis, 0.2).unwrap();
    let p = project_eps(&SphereVector::from_slice(&[0.6, 0.8, 0.0]).unwrap(), &cs);
    assert!((p.as_vec()[0] - 0.9).abs() < 1e-12);
    assert!((p.as_vec()[1] - 0.43589).abs() < 1e-5);
}
