use icpm::dynamics::{forward_accel, join_state, mechanical_energy, split_state};
use icpm::hybrid::{closed_loop_rhs, high_gain_burst, integrate_to_section, section_state, HighGain, SectionSpec, SimOptions};
use icpm::models::{CartPendulum, Tiptoebot};
use icpm::ode::{integrate, Tolerances};
use icpm::poincare::{find_fixed_point, linearize, Differencing, MapContext};
use icpm::reduction::{orbit_from_anchor, ReducedSystem};
use icpm::MechanicalSystem;
use nalgebra::{dvector, DVector};

fn tight() -> Tolerances {
    Tolerances::default()
}

#[test]
fn unforced_model_conserves_energy() {
    let sys = Tiptoebot::default();
    let x0 = dvector![0.3, -0.2, 0.1, 0.5, -0.4, 0.8];
    let rhs = |_t: f64, x: &DVector<f64>| {
        let (q, qd) = split_state(x);
        let qdd = forward_accel(&sys, &q, &qd, &DVector::zeros(2))?;
        Ok(join_state(&qd, &qdd))
    };
    let x1 = integrate(rhs, 0.0, x0.clone(), 5.0, tight()).unwrap();
    let e = |x: &DVector<f64>| {
        let (q, qd) = split_state(x);
        mechanical_energy(&sys, &q, &qd)
    };
    assert!((e(&x1) - e(&x0)).abs() < 1e-8, "drift {:.3e}", e(&x1) - e(&x0));
}

#[test]
fn constraint_manifold_is_invariant() {
    let sys = Tiptoebot::default();
    let vhc = sys.default_vhc();
    let (q, qd) = vhc.lift(0.2, 1.5);
    let x1 = integrate(closed_loop_rhs(&sys, &vhc), 0.0, join_state(&q, &qd), 5.0, tight()).unwrap();
    let (q1, qd1) = split_state(&x1);
    assert!(vhc.rho(&q1).amax() < 1e-6);
    assert!(vhc.rho_dot(&q1, &qd1).amax() < 1e-6);
}

#[test]
fn constraint_error_follows_its_linear_dynamics() {
    let sys = CartPendulum::default();
    let vhc = sys.default_vhc();
    let rho0 = 0.05;
    let (mut q, qd) = vhc.lift(0.1, 0.3);
    q[0] += rho0;
    let t = 3.0;
    let x1 = integrate(closed_loop_rhs(&sys, &vhc), 0.0, join_state(&q, &qd), t, tight()).unwrap();
    let (q1, _) = split_state(&x1);
    let w = 7f64.sqrt() / 2.0;
    let expected = (-t / 2.0f64).exp() * rho0 * ((w * t).cos() + (w * t).sin() / (2.0 * w));
    assert!((vhc.rho(&q1)[0] - expected).abs() < 1e-7, "{} vs {expected}", vhc.rho(&q1)[0]);
}

#[test]
fn reduced_energy_is_constant_on_the_constraint() {
    let sys = Tiptoebot::default();
    let vhc = sys.default_vhc();
    let red = ReducedSystem::build(&sys, &vhc, 1e-10, None).unwrap();
    let (q, qd) = vhc.lift(0.0, 2.0);
    let e0 = red.energy(0.0, 2.0).unwrap();
    let mut x = join_state(&q, &qd);
    for _ in 0..10 {
        x = integrate(closed_loop_rhs(&sys, &vhc), 0.0, x, 0.7, tight()).unwrap();
        let e = red.energy(x[2], x[5]).unwrap();
        assert!((e - e0).abs() < 1e-7 * e0.abs().max(1.0), "{e} vs {e0}");
    }
}

#[test]
fn reduction_converges_with_quadrature_tolerance() {
    let sys = Tiptoebot::default();
    let vhc = sys.default_vhc();
    let coarse = ReducedSystem::build(&sys, &vhc, 1e-6, None).unwrap();
    let fine = ReducedSystem::build(&sys, &vhc, 1e-12, None).unwrap();
    for s in [-2.5, -1.0, 0.3, 1.7, 3.0] {
        assert!((coarse.reduced_potential(s).unwrap() - fine.reduced_potential(s).unwrap()).abs() < 1e-5);
        assert!((coarse.reduced_mass(s).unwrap() - fine.reduced_mass(s).unwrap()).abs() < 1e-5);
    }
}

fn cart_map_setup() -> (CartPendulum, icpm::Vhc, ReducedSystem) {
    let sys = CartPendulum::default();
    let vhc = sys.default_vhc();
    let red = ReducedSystem::build(&sys, &vhc, 1e-10, None).unwrap();
    (sys, vhc, red)
}

#[test]
fn fixed_point_returns_to_itself_and_map_is_locally_linear() {
    let (sys, vhc, red) = cart_map_setup();
    let ctx = MapContext::new(&sys, &vhc, SectionSpec::new(0.0));
    let orbit = orbit_from_anchor(&red, 0.0, 0.45).unwrap();
    let fp = find_fixed_point(&ctx, &red, &orbit).unwrap();
    assert!(fp.residual < 1e-8);
    let zero = DVector::zeros(1);
    assert!((ctx.map(&fp.z, &zero).unwrap() - &fp.z).norm() < 1e-8);

    let lin = linearize(&ctx, &fp.z, 1e-5, 1e-5, Differencing::Forward).unwrap();
    let rho = lin.floquet.iter().map(|l| l.norm()).fold(0.0, f64::max);
    assert!(rho >= 1.0 - 1e-3, "open-loop spectral radius {rho}");

    let delta = dvector![0.6, -0.5, 0.3].normalize() * 1e-3;
    let pred = &lin.image + &lin.a * &delta;
    let actual = ctx.map(&(&fp.z + &delta), &zero).unwrap();
    assert!((actual - pred).norm() <= 5e-5);

    let imp = dvector![1e-3];
    let pred = &lin.image + &lin.b * &imp;
    assert!((ctx.map(&fp.z, &imp).unwrap() - pred).norm() <= 5e-5);
}

#[test]
fn arcs_reintegrate_to_the_same_crossing() {
    let (sys, vhc, red) = cart_map_setup();
    let section = SectionSpec::new(0.0);
    let orbit = orbit_from_anchor(&red, 0.0, 0.45).unwrap();
    let x0 = orbit.state_at(&red, &vhc, std::f64::consts::FRAC_PI_2).unwrap();
    let opts = SimOptions::default();
    let c = integrate_to_section(&sys, &vhc, &section, &x0, 0.0, 60.0, &opts, None).unwrap();
    let direct = integrate(closed_loop_rhs(&sys, &vhc), 0.0, x0.clone(), c.t, tight()).unwrap();
    assert!((&direct - &c.x).amax() < 1e-7);
    assert!((section_state(&c.x) - section_state(&x0)).norm() < 1e-7);
}

#[test]
fn burst_length_scales_with_time_constant() {
    let sys = CartPendulum::default();
    let vhc = sys.default_vhc();
    let (q, qd) = vhc.lift(0.0, 0.45);
    let x0 = join_state(&q, &qd);
    let target = dvector![qd[0] + 0.2];
    let run = |mu: f64| {
        let hg = HighGain::new(vec![1.0], mu);
        let (x, dt) = high_gain_burst(&sys, &vhc, &x0, 0.0, &target, &hg, tight(), None).unwrap();
        assert!((x[2] - target[0]).abs() <= hg.eps3 * (1.0 + 1e-6));
        dt
    };
    let (d1, d2) = (run(1e-3), run(2e-3));
    assert!(d1 > 0.0);
    assert!((d2 / d1 - 2.0).abs() < 0.02, "burst lengths {d1} and {d2}");
    let expected = 1e-3 * (0.2f64 / 1e-4).ln();
    assert!((d1 - expected).abs() < 0.02 * expected, "{d1} vs {expected}");
}

#[test]
fn state_dimensions_follow_the_model() {
    let models: [Box<dyn MechanicalSystem>; 2] = [Box::new(CartPendulum::default()), Box::new(Tiptoebot::default())];
    for sys in models {
        let n = sys.dof();
        let x = DVector::from_fn(2 * n, |i, _| i as f64);
        assert_eq!(section_state(&x).len(), 2 * n - 1);
    }
}
