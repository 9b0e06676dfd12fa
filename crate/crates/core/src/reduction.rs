//! Zero dynamics on the constraint manifold and its integral of motion.
//!
//! On `q1 = Φ(q2)` the passive coordinate obeys `q2'' = α1(q2) + α2(q2) q2'²`,
//! which conserves `E = ½ 𝓜(q2) q2'² + 𝓟(q2)` with
//! `𝓜 = exp(-2 ∫₀ α2)` and `𝓟 = -∫₀ α1 𝓜`.

use nalgebra::DVector;
use std::f64::consts::PI;

use crate::dynamics::{join_state, partition_mass, wrap_angle, MechanicalSystem};
use crate::error::{IcpmError, Result};
use crate::quadrature;
use crate::vhc::{regularity, Vhc};

/// Grid nodes per `2π` of passive angle.
pub const NODES_PER_TURN: usize = 2000;

/// Offset kept from a singular point of the constraint when the range is chosen automatically.
pub const SINGULAR_MARGIN: f64 = 1e-3;

const GL7_X: [f64; 7] = [
    -0.949_107_912_342_758_5,
    -0.741_531_185_599_394_4,
    -0.405_845_151_377_397_2,
    0.0,
    0.405_845_151_377_397_2,
    0.741_531_185_599_394_4,
    0.949_107_912_342_758_5,
];
const GL7_W: [f64; 7] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_9,
    0.279_705_391_489_276_7,
    0.129_484_966_168_869_7,
];

/// `(α1, α2)` of the zero dynamics at passive angle `q2`.
///
/// The passive row of the equations of motion on the constraint is affine in
/// `q2'²`, so two evaluations at `q2' ∈ {0, 1}` determine both coefficients.
pub fn zero_dynamics_coeffs(sys: &dyn MechanicalSystem, vhc: &Vhc, q2: f64) -> Result<(f64, f64)> {
    let k = vhc.dim();
    let (q, qd0) = vhc.lift(q2, 0.0);
    let (_, qd1) = vhc.lift(q2, 1.0);
    let part = partition_mass(sys, &q)?;
    let dphi = vhc.dphi(q2);
    let reg = part.m12.dot(&dphi) + part.m22;
    if reg.abs() < vhc.tol_reg() || !reg.is_finite() {
        return Err(IcpmError::SingularVhc { q2, value: reg });
    }
    let h20 = sys.bias(&q, &qd0)[k];
    let h21 = sys.bias(&q, &qd1)[k];
    let alpha1 = -h20 / reg;
    let alpha2 = -(part.m12.dot(&vhc.d2phi(q2)) + h21 - h20) / reg;
    Ok((alpha1, alpha2))
}

/// Tabulated reduced mass and potential with cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    nodes: Vec<f64>,
    mass: Vec<f64>,
    pot: Vec<f64>,
    alpha1: Vec<f64>,
    alpha2: Vec<f64>,
    pmin: (f64, f64),
    pmax: (f64, f64),
    full_turn: bool,
    quad_tol: f64,
}

impl ReducedSystem {
    /// Builds the tables on `range`, or on the regular interval around 0 when `range` is `None`.
    ///
    /// The automatic range is the full turn `[-π, π]` when the constraint is
    /// regular everywhere, and otherwise stops `SINGULAR_MARGIN` short of the
    /// nearest singular angles on either side of 0.
    pub fn build(sys: &dyn MechanicalSystem, vhc: &Vhc, quad_tol: f64, range: Option<(f64, f64)>) -> Result<Self> {
        if !(quad_tol > 0.0 && quad_tol.is_finite()) {
            return Err(IcpmError::InvalidInput(format!("quad_tol must be positive, got {quad_tol}")));
        }
        let (lo, hi, full_turn) = match range {
            Some((lo, hi)) => {
                if !(lo <= 0.0 && hi >= 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) {
                    return Err(IcpmError::InvalidInput(format!("reduction range [{lo}, {hi}] must contain 0")));
                }
                (lo, hi, hi - lo >= 2.0 * PI - 1e-12)
            }
            None => auto_range(sys, vhc)?,
        };
        let h_target = 2.0 * PI / NODES_PER_TURN as f64;
        let n_lo = ((-lo) / h_target).ceil().max(1.0) as usize;
        let n_hi = (hi / h_target).ceil().max(1.0) as usize;
        let mut nodes = Vec::with_capacity(n_lo + n_hi + 1);
        for i in (1..=n_lo).rev() {
            nodes.push(lo * i as f64 / n_lo as f64);
        }
        nodes.push(0.0);
        for i in 1..=n_hi {
            nodes.push(hi * i as f64 / n_hi as f64);
        }
        let zero = n_lo;

        let coeffs = |x: f64| zero_dynamics_coeffs(sys, vhc, x);
        let a2 = |x: f64| coeffs(x).map(|c| c.1);
        let width = hi - lo;
        let mut mass = vec![0.0; nodes.len()];
        let mut pot = vec![0.0; nodes.len()];
        mass[zero] = 1.0;
        let mut fill = |i_from: usize, i_to: usize| -> Result<()> {
            let (a, b) = (nodes[i_from], nodes[i_to]);
            let tol = quad_tol * (b - a).abs() / width;
            let int_a2 = quadrature::integrate(a2, a, b, tol)?;
            let m_a = mass[i_from];
            mass[i_to] = m_a * (-2.0 * int_a2).exp();
            let inner = |tau: f64| -> Result<f64> {
                let (alpha1, _) = coeffs(tau)?;
                let half = 0.5 * (tau - a);
                let mut s = 0.0;
                for (x, w) in GL7_X.iter().zip(GL7_W) {
                    s += w * a2(a + half * (1.0 + x))?;
                }
                Ok(alpha1 * m_a * (-2.0 * half * s).exp())
            };
            pot[i_to] = pot[i_from] - quadrature::integrate(inner, a, b, tol)?;
            Ok(())
        };
        for i in zero + 1..nodes.len() {
            fill(i - 1, i)?;
        }
        for i in (0..zero).rev() {
            fill(i + 1, i)?;
        }
        let mut alpha1 = Vec::with_capacity(nodes.len());
        let mut alpha2 = Vec::with_capacity(nodes.len());
        for &x in &nodes {
            let (c1, c2) = coeffs(x)?;
            alpha1.push(c1);
            alpha2.push(c2);
        }
        let mut red = Self {
            nodes,
            mass,
            pot,
            alpha1,
            alpha2,
            pmin: (0.0, 0.0),
            pmax: (0.0, 0.0),
            full_turn,
            quad_tol,
        };
        red.pmin = red.extremum(1.0);
        red.pmax = red.extremum(-1.0);
        Ok(red)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().expect("non-empty grid"))
    }

    /// Whether the tables cover a full turn of the passive joint.
    pub fn is_full_turn(&self) -> bool {
        self.full_turn
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    /// `(q2, 𝓜, 𝓟)` at the grid nodes.
    pub fn table(&self) -> Vec<(f64, f64, f64)> {
        (0..self.nodes.len()).map(|i| (self.nodes[i], self.mass[i], self.pot[i])).collect()
    }

    fn locate(&self, q2: f64) -> Result<(usize, f64, f64)> {
        let (lo, hi) = self.range();
        if !(q2 >= lo - 1e-12 && q2 <= hi + 1e-12) {
            return Err(IcpmError::InvalidInput(format!(
                "q2 = {q2:.6} outside the reduced range [{lo:.6}, {hi:.6}]"
            )));
        }
        let i = match self.nodes.binary_search_by(|x| x.total_cmp(&q2)) {
            Ok(i) => i.min(self.nodes.len() - 2),
            Err(i) => i.clamp(1, self.nodes.len() - 1) - 1,
        };
        let h = self.nodes[i + 1] - self.nodes[i];
        Ok((i, h, (q2 - self.nodes[i]) / h))
    }

    fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * d1
    }

    pub fn reduced_mass(&self, q2: f64) -> Result<f64> {
        let (i, h, t) = self.locate(q2)?;
        let d0 = -2.0 * self.alpha2[i] * self.mass[i];
        let d1 = -2.0 * self.alpha2[i + 1] * self.mass[i + 1];
        Ok(Self::hermite(self.mass[i], self.mass[i + 1], d0, d1, h, t))
    }

    pub fn reduced_potential(&self, q2: f64) -> Result<f64> {
        let (i, h, t) = self.locate(q2)?;
        Ok(self.potential_in(i, h, t))
    }

    fn potential_in(&self, i: usize, h: f64, t: f64) -> f64 {
        let d0 = -self.alpha1[i] * self.mass[i];
        let d1 = -self.alpha1[i + 1] * self.mass[i + 1];
        Self::hermite(self.pot[i], self.pot[i + 1], d0, d1, h, t)
    }

    fn potential_clamped(&self, q2: f64) -> f64 {
        let (lo, hi) = self.range();
        self.reduced_potential(q2.clamp(lo, hi)).expect("clamped into range")
    }

    /// `E = ½ 𝓜 q2'² + 𝓟`.
    pub fn energy(&self, q2: f64, q2_dot: f64) -> Result<f64> {
        Ok(0.5 * self.reduced_mass(q2)? * q2_dot * q2_dot + self.reduced_potential(q2)?)
    }

    /// `(q2, 𝓟)` at the minimum of the reduced potential.
    pub fn pmin(&self) -> (f64, f64) {
        self.pmin
    }

    pub fn pmax(&self) -> (f64, f64) {
        self.pmax
    }

    /// Global extremum of `sign · 𝓟` (minimum for `sign = 1`) by a dense scan and golden-section polish.
    fn extremum(&self, sign: f64) -> (f64, f64) {
        let (lo, hi) = self.range();
        let n = 10_000;
        let f = |x: f64| sign * self.potential_clamped(x);
        let mut best = (lo, f(lo));
        for i in 1..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
        }
        let step = (hi - lo) / n as f64;
        let x = golden_min(f, (best.0 - step).max(lo), (best.0 + step).min(hi), 1e-12);
        let v = f(x);
        let (x, v) = if v <= best.1 { (x, v) } else { best };
        (x, sign * v)
    }
}

fn auto_range(sys: &dyn MechanicalSystem, vhc: &Vhc) -> Result<(f64, f64, bool)> {
    let reg = |x: f64| regularity(sys, vhc, x);
    let r0 = reg(0.0)?;
    if r0.abs() < vhc.tol_reg() {
        return Err(IcpmError::SingularVhc { q2: 0.0, value: r0 });
    }
    let n = 4000;
    let mut bounds = [-PI, PI];
    let mut full = true;
    for (side, dir) in [-1.0f64, 1.0].into_iter().enumerate() {
        let mut prev = (0.0, r0);
        for i in 1..=n / 2 {
            let x = dir * PI * i as f64 / (n / 2) as f64;
            let r = reg(x)?;
            if r.signum() != r0.signum() || r.abs() < vhc.tol_reg() {
                let root = crate::ode::bracketed_root(|s| reg(s).unwrap_or(0.0), prev.0, x, 1e-14);
                bounds[side] = root - dir * SINGULAR_MARGIN;
                full = false;
                break;
            }
            prev = (x, r);
        }
    }
    Ok((bounds[0], bounds[1], full))
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitKind {
    /// `q2'` changes sign twice per period.
    Oscillation,
    /// `q2'` keeps its sign and `q2` advances by a full turn per period.
    Rotation,
}

/// A desired orbit `E = c_d` of the zero dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSpec {
    pub c_d: f64,
    pub anchor: Option<(f64, f64)>,
    pub kind: OrbitKind,
    /// Turning points of an oscillation, or the covered range of a rotation.
    pub q2_bounds: (f64, f64),
}

/// The orbit through `(q2⁰, q2'⁰)`.
pub fn orbit_from_anchor(red: &ReducedSystem, q2: f64, q2_dot: f64) -> Result<OrbitSpec> {
    let c_d = red.energy(q2, q2_dot)?;
    let mut orbit = classify(red, c_d, q2)?;
    orbit.anchor = Some((q2, q2_dot));
    Ok(orbit)
}

/// The orbit at energy level `c_d`, centered on the minimum of `𝓟`.
pub fn orbit_from_level(red: &ReducedSystem, c_d: f64) -> Result<OrbitSpec> {
    classify(red, c_d, red.pmin().0)
}

fn classify(red: &ReducedSystem, c_d: f64, start: f64) -> Result<OrbitSpec> {
    let (pmin_at, pmin) = red.pmin();
    let tol = 1e-9 * pmin.abs().max(1.0);
    if !(c_d.is_finite() && c_d > pmin + tol) {
        return Err(IcpmError::InvalidOrbit(format!(
            "energy level {c_d:.9} does not exceed the potential minimum {pmin:.9} at q2 = {pmin_at:.6}"
        )));
    }
    let (lo, hi) = red.range();
    if c_d > red.pmax().1 {
        if red.is_full_turn() {
            return Ok(OrbitSpec { c_d, anchor: None, kind: OrbitKind::Rotation, q2_bounds: (lo, hi) });
        }
        return Err(IcpmError::InvalidOrbit(format!(
            "level {c_d:.6} reaches the singular boundary of the regular range [{lo:.4}, {hi:.4}]"
        )));
    }
    let p = |x: f64| red.potential_clamped(x) - c_d;
    if p(start) > 0.0 {
        return Err(IcpmError::InvalidOrbit(format!("anchor q2 = {start:.6} is not inside the level set")));
    }
    let step = 2.0 * PI / NODES_PER_TURN as f64;
    let turning = |dir: f64| -> Result<f64> {
        let mut x = start;
        loop {
            let next = x + dir * step;
            let edge = if dir > 0.0 { next >= hi } else { next <= lo };
            let next = next.clamp(lo, hi);
            if p(next) > 0.0 {
                return Ok(crate::ode::bracketed_root(&p, x, next, 1e-14));
            }
            if edge {
                return Err(IcpmError::InvalidOrbit(format!(
                    "level {c_d:.6} does not close inside the regular range [{lo:.4}, {hi:.4}]"
                )));
            }
            x = next;
        }
    };
    let ql = turning(-1.0)?;
    let qr = turning(1.0)?;
    Ok(OrbitSpec { c_d, anchor: None, kind: OrbitKind::Oscillation, q2_bounds: (ql, qr) })
}

impl OrbitSpec {
    /// `|q2'|` on the orbit at `q2`, or zero outside the level set.
    pub fn speed(&self, red: &ReducedSystem, q2: f64) -> Result<f64> {
        let m = red.reduced_mass(q2)?;
        let p = red.reduced_potential(q2)?;
        Ok((2.0 * (self.c_d - p) / m).max(0.0).sqrt())
    }

    /// Full state on the orbit at phase `s ∈ [0, 2π)`.
    ///
    /// Oscillations use `q2 = mid - amp cos s`, so `q2' > 0` on `(0, π)`;
    /// rotations advance `q2` linearly in `s` with `q2' > 0`.
    pub fn state_at(&self, red: &ReducedSystem, vhc: &Vhc, s: f64) -> Result<DVector<f64>> {
        let (a, b) = self.q2_bounds;
        let (q2, q2_dot) = match self.kind {
            OrbitKind::Oscillation => {
                let mid = 0.5 * (a + b);
                let amp = 0.5 * (b - a);
                let q2 = (mid - amp * s.cos()).clamp(a, b);
                let sign = if s.rem_euclid(2.0 * PI) < PI { 1.0 } else { -1.0 };
                (q2, sign * self.speed(red, q2)?)
            }
            OrbitKind::Rotation => {
                let q2 = a + (b - a) * s.rem_euclid(2.0 * PI) / (2.0 * PI);
                (q2, self.speed(red, q2)?)
            }
        };
        let (q, qd) = vhc.lift(q2, q2_dot);
        Ok(join_state(&q, &qd))
    }
}

fn state_gap(x: &DVector<f64>, y: &DVector<f64>, k: usize) -> f64 {
    let mut d2 = 0.0;
    for i in 0..x.len() {
        let d = if i == k { wrap_angle(x[i] - y[i]) } else { x[i] - y[i] };
        d2 += d * d;
    }
    d2.sqrt()
}

/// A densely sampled orbit for repeated distance queries.
#[derive(Debug, Clone)]
pub struct OrbitCurve<'a> {
    red: &'a ReducedSystem,
    vhc: &'a Vhc,
    orbit: &'a OrbitSpec,
    points: Vec<DVector<f64>>,
}

impl<'a> OrbitCurve<'a> {
    pub fn new(red: &'a ReducedSystem, vhc: &'a Vhc, orbit: &'a OrbitSpec, samples: usize) -> Result<Self> {
        let n = samples.max(8);
        let points = (0..n)
            .map(|i| orbit.state_at(red, vhc, 2.0 * PI * i as f64 / n as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { red, vhc, orbit, points })
    }

    /// Euclidean distance from the full state `x`, with the passive angle compared modulo `2π`.
    pub fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        let k = self.vhc.dim();
        if x.len() != 2 * (k + 1) {
            return Err(IcpmError::InvalidInput(format!("expected state of length {}, got {}", 2 * (k + 1), x.len())));
        }
        let n = self.points.len();
        let ds = 2.0 * PI / n as f64;
        let mut best = (0, f64::INFINITY);
        for (i, y) in self.points.iter().enumerate() {
            let d = state_gap(x, y, k);
            if d < best.1 {
                best = (i, d);
            }
        }
        let gap = |s: f64| -> f64 {
            self.orbit.state_at(self.red, self.vhc, s).map(|y| state_gap(x, &y, k)).unwrap_or(f64::INFINITY)
        };
        let s0 = best.0 as f64 * ds;
        let s = golden_min(gap, s0 - ds, s0 + ds, 1e-10);
        Ok(gap(s).min(best.1))
    }
}

/// Euclidean distance from the full state `x` to the orbit, by dense sampling and local refinement.
///
/// The passive-angle component is compared modulo `2π`.
pub fn orbit_distance(
    red: &ReducedSystem,
    vhc: &Vhc,
    orbit: &OrbitSpec,
    x: &DVector<f64>,
    samples: usize,
) -> Result<f64> {
    OrbitCurve::new(red, vhc, orbit, samples)?.distance(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CartPendulum, Tiptoebot};
    use crate::vhc::closed_loop_accel;
    use approx::assert_relative_eq;

    #[test]
    fn coefficients_match_closed_loop() {
        let tb = Tiptoebot::default();
        let vhc = tb.default_vhc();
        for &(q2, v) in &[(0.3, 1.7), (-0.8, -2.2), (1.4, 0.4)] {
            let (a1, a2) = zero_dynamics_coeffs(&tb, &vhc, q2).unwrap();
            let (q, qd) = vhc.lift(q2, v);
            let acc = closed_loop_accel(&tb, &vhc, &q, &qd).unwrap();
            assert_relative_eq!(acc[2], a1 + a2 * v * v, epsilon = 1e-9);
        }
    }

    #[test]
    fn alpha1_vanishes_at_symmetric_point() {
        let cp = CartPendulum::default();
        let (a1, _) = zero_dynamics_coeffs(&cp, &cp.default_vhc(), 0.0).unwrap();
        assert!(a1.abs() < 1e-15);
    }

    #[test]
    fn cart_range_stops_at_singularity() {
        let cp = CartPendulum::default();
        let red = ReducedSystem::build(&cp, &cp.default_vhc(), 1e-10, None).unwrap();
        let (lo, hi) = red.range();
        let root = (1.0f64 / 1.5).sqrt().acos();
        assert_relative_eq!(hi, root - SINGULAR_MARGIN, epsilon = 1e-9);
        assert_relative_eq!(lo, -hi, epsilon = 1e-9);
        assert!(!red.is_full_turn());
        assert_eq!(red.reduced_mass(0.0).unwrap(), 1.0);
        assert_eq!(red.reduced_potential(0.0).unwrap(), 0.0);
        assert!(red.reduced_mass(0.7).is_err());
    }

    #[test]
    fn degenerate_anchor_rejected() {
        let tb = Tiptoebot::default();
        let vhc = tb.default_vhc();
        let red = ReducedSystem::build(&tb, &vhc, 1e-10, Some((-1.0, 1.0))).unwrap();
        let (q, _) = red.pmin();
        assert!(matches!(orbit_from_anchor(&red, q, 0.0), Err(IcpmError::InvalidOrbit(_))));
    }

    #[test]
    fn on_orbit_points_have_zero_distance() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        let red = ReducedSystem::build(&cp, &vhc, 1e-10, None).unwrap();
        let orbit = orbit_from_anchor(&red, 0.0, 0.45).unwrap();
        assert_eq!(orbit.kind, OrbitKind::Oscillation);
        for s in [0.3, 2.0, 4.4] {
            let x = orbit.state_at(&red, &vhc, s).unwrap();
            assert!(orbit_distance(&red, &vhc, &orbit, &x, 2000).unwrap() < 1e-3);
        }
        let (q, qd) = vhc.lift(0.0, 0.45);
        let x = join_state(&q, &qd);
        assert!(orbit_distance(&red, &vhc, &orbit, &x, 2000).unwrap() < 1e-6);
    }
}
