use std::f64::consts::PI;

use icpm::dynamics::{equation_residual, forward_accel, partition_mass, symmetry_defect, wrap_angle};
use icpm::hybrid::apply_impulse_jump;
use icpm::lqr::{certify, dare_residual, dare_solve, stabilizability_check, DEFAULT_TOL_RANK};
use icpm::models::{CartPendulum, Tiptoebot};
use icpm::quadrature;
use icpm::MechanicalSystem;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn models() -> [Box<dyn MechanicalSystem>; 2] {
    [Box::new(CartPendulum::default()), Box::new(Tiptoebot::default())]
}

fn vec3(lim: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-lim..lim, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn forward_dynamics_satisfies_equations_of_motion(q in vec3(PI), qd in vec3(5.0), u in vec3(10.0)) {
        for sys in models() {
            let n = sys.dof();
            let q = DVector::from_column_slice(&q[..n]);
            let qd = DVector::from_column_slice(&qd[..n]);
            let u = DVector::from_column_slice(&u[..n - 1]);
            let qdd = forward_accel(sys.as_ref(), &q, &qd, &u).unwrap();
            prop_assert!(equation_residual(sys.as_ref(), &q, &qd, &qdd, &u).amax() < 1e-9);
        }
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(q in vec3(PI)) {
        for sys in models() {
            let m = sys.mass_matrix(&DVector::from_column_slice(&q[..sys.dof()]));
            prop_assert!((&m - m.transpose()).amax() < 1e-14);
            prop_assert!(m.cholesky().is_some());
        }
    }

    #[test]
    fn models_are_even_about_their_center(dq in vec3(PI)) {
        for sys in models() {
            prop_assert!(symmetry_defect(sys.as_ref(), &DVector::from_column_slice(&dq[..sys.dof()])) < 1e-10);
        }
    }

    #[test]
    fn impulse_stays_on_impulse_manifold(q in vec3(PI), qd in vec3(5.0), imp in vec3(5.0)) {
        for sys in models() {
            let n = sys.dof();
            let q = DVector::from_column_slice(&q[..n]);
            let qd = DVector::from_column_slice(&qd[..n]);
            let imp = DVector::from_column_slice(&imp[..n - 1]);
            let plus = apply_impulse_jump(sys.as_ref(), &q, &qd, &imp).unwrap();
            let dv = &plus - &qd;
            let part = partition_mass(sys.as_ref(), &q).unwrap();
            prop_assert!((part.m12.dot(&dv.rows(0, n - 1)) + part.m22 * dv[n - 1]).abs() < 1e-10);
            let momentum = sys.mass_matrix(&q) * dv;
            prop_assert!((momentum.rows(0, n - 1) - &imp).amax() < 1e-10);
        }
    }

    #[test]
    fn wrap_angle_is_a_representative(theta in -50.0f64..50.0) {
        let w = wrap_angle(theta);
        prop_assert!(w > -PI && w <= PI);
        let turns = (theta - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn quadrature_is_exact_on_low_degree_polynomials(c in proptest::collection::vec(-3.0f64..3.0, 8), b in 0.1f64..4.0) {
        let f = |x: f64| c.iter().rev().fold(0.0, |acc, ci| acc * x + ci);
        let exact: f64 = c.iter().enumerate().map(|(i, ci)| ci * b.powi(i as i32 + 1) / (i + 1) as f64).sum();
        let v = quadrature::integrate(|x| Ok(f(x)), 0.0, b, 1e-12).unwrap();
        prop_assert!((v - exact).abs() <= 1e-11 * exact.abs().max(1.0));
    }
}

fn random_system(seed: Vec<f64>, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_fn(n, n, |i, j| seed[i * n + j]);
    let b = DMatrix::from_fn(n, m, |i, j| seed[n * n + i * m + j] / 1.2);
    (a, b)
}

/// Smallest singular value of `[ℬ, 𝒜ℬ, …]`, scaled by its largest.
fn controllability_margin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut blocks = vec![b.clone()];
    for i in 1..n {
        blocks.push(a * &blocks[i - 1]);
    }
    let c = DMatrix::from_fn(n, n * b.ncols(), |i, j| blocks[j / b.ncols()][(i, j % b.ncols())]);
    let s = c.singular_values();
    s.min() / s.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lqr_stabilizes_well_controllable_pairs(n in 2usize..6, m in 1usize..3, seed in proptest::collection::vec(-1.2f64..1.2, 48)) {
        let (a, b) = random_system(seed, n, m);
        prop_assume!(stabilizability_check(&a, &b, DEFAULT_TOL_RANK).unwrap().stabilizable);
        prop_assume!(controllability_margin(&a, &b) > 0.05);
        let (q, r) = (DMatrix::identity(n, n), DMatrix::identity(m, m));
        let sol = dare_solve(&a, &b, &q, &r).unwrap();
        prop_assert!(sol.residual < 1e-9);
        prop_assert!((&sol.p - sol.p.transpose()).amax() < 1e-9 * sol.p.amax().max(1.0));
        prop_assert!(sol.p.clone().cholesky().is_some());
        prop_assert!(certify(&a, &b, &sol.k).unwrap().stable);
    }

    #[test]
    fn costlier_input_raises_cost_to_go(n in 2usize..5, seed in proptest::collection::vec(-1.2f64..1.2, 48)) {
        let (a, b) = random_system(seed, n, 1);
        prop_assume!(controllability_margin(&a, &b) > 0.05);
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(1, 1);
        let p1 = dare_solve(&a, &b, &q, &r).unwrap().p;
        let p10 = dare_solve(&a, &b, &q, &(10.0 * &r)).unwrap();
        prop_assert!(dare_residual(&a, &b, &q, &(10.0 * &r), &p10.p) < 1e-9);
        let diff = &p10.p - &p1;
        let lmin = diff.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(lmin > -1e-8 * p10.p.amax().max(1.0), "P(10R) - P(R) has eigenvalue {lmin}");
    }
}
