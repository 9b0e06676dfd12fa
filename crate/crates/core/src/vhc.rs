//! Virtual holonomic constraints `ρ(q) = q1 - Φ(q2)` and the feedback that
//! renders the constraint manifold attractive and invariant.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

use crate::dynamics::{partition_mass, terms_from_parts, DynamicsTerms, MechanicalSystem};
use crate::error::{IcpmError, Result};

/// Default guard band on `M12ᵀ Φ' + M22`.
pub const DEFAULT_TOL_REG: f64 = 1e-6;

/// The constraint map `Φ : S → R^(n-1)` and its first two derivatives.
pub trait ConstraintShape: Send + Sync {
    fn dim(&self) -> usize;
    fn phi(&self, q2: f64) -> DVector<f64>;
    fn dphi(&self, q2: f64) -> DVector<f64>;
    fn d2phi(&self, q2: f64) -> DVector<f64>;
}

/// `Φ(q2) = slopes · q2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearShape {
    pub slopes: DVector<f64>,
}

impl ConstraintShape for LinearShape {
    fn dim(&self) -> usize {
        self.slopes.len()
    }
    fn phi(&self, q2: f64) -> DVector<f64> {
        &self.slopes * q2
    }
    fn dphi(&self, _q2: f64) -> DVector<f64> {
        self.slopes.clone()
    }
    fn d2phi(&self, _q2: f64) -> DVector<f64> {
        DVector::zeros(self.slopes.len())
    }
}

/// `Φ(q2) = amplitudes · sin(q2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineShape {
    pub amplitudes: DVector<f64>,
}

impl ConstraintShape for SineShape {
    fn dim(&self) -> usize {
        self.amplitudes.len()
    }
    fn phi(&self, q2: f64) -> DVector<f64> {
        &self.amplitudes * q2.sin()
    }
    fn dphi(&self, q2: f64) -> DVector<f64> {
        &self.amplitudes * q2.cos()
    }
    fn d2phi(&self, q2: f64) -> DVector<f64> {
        &self.amplitudes * -q2.sin()
    }
}

/// A virtual holonomic constraint together with the gains of its stabilizing feedback.
#[derive(Clone)]
pub struct Vhc {
    shape: Arc<dyn ConstraintShape>,
    kp: DMatrix<f64>,
    kd: DMatrix<f64>,
    tol_reg: f64,
}

impl fmt::Debug for Vhc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vhc")
            .field("dim", &self.shape.dim())
            .field("kp", &self.kp)
            .field("kd", &self.kd)
            .field("tol_reg", &self.tol_reg)
            .finish()
    }
}

impl Vhc {
    pub fn new(shape: Arc<dyn ConstraintShape>, kp: DMatrix<f64>, kd: DMatrix<f64>) -> Result<Self> {
        let k = shape.dim();
        for (name, g) in [("kp", &kp), ("kd", &kd)] {
            if g.nrows() != k || g.ncols() != k {
                return Err(IcpmError::InvalidInput(format!("{name} must be {k}x{k}")));
            }
            let sym = (g - g.transpose()).abs().max();
            if sym > 1e-12 || g.clone().cholesky().is_none() {
                return Err(IcpmError::InvalidInput(format!("{name} must be symmetric positive definite")));
            }
        }
        Ok(Self { shape, kp, kd, tol_reg: DEFAULT_TOL_REG })
    }

    pub fn with_tol_reg(mut self, tol_reg: f64) -> Self {
        self.tol_reg = tol_reg;
        self
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }
    pub fn kp(&self) -> &DMatrix<f64> {
        &self.kp
    }
    pub fn kd(&self) -> &DMatrix<f64> {
        &self.kd
    }
    pub fn tol_reg(&self) -> f64 {
        self.tol_reg
    }
    pub fn phi(&self, q2: f64) -> DVector<f64> {
        self.shape.phi(q2)
    }
    pub fn dphi(&self, q2: f64) -> DVector<f64> {
        self.shape.dphi(q2)
    }
    pub fn d2phi(&self, q2: f64) -> DVector<f64> {
        self.shape.d2phi(q2)
    }

    /// `ρ = q1 - Φ(q2)`.
    pub fn rho(&self, q: &DVector<f64>) -> DVector<f64> {
        let k = self.dim();
        q.rows(0, k) - self.phi(q[k])
    }

    /// `ρ' = q1' - Φ'(q2) q2'`.
    pub fn rho_dot(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let k = self.dim();
        qd.rows(0, k) - self.dphi(q[k]) * qd[k]
    }

    /// The state on the constraint manifold above `(q2, q2')`.
    pub fn lift(&self, q2: f64, q2_dot: f64) -> (DVector<f64>, DVector<f64>) {
        let k = self.dim();
        let mut q = DVector::zeros(k + 1);
        let mut qd = DVector::zeros(k + 1);
        q.rows_mut(0, k).copy_from(&self.phi(q2));
        q[k] = q2;
        qd.rows_mut(0, k).copy_from(&(self.dphi(q2) * q2_dot));
        qd[k] = q2_dot;
        (q, qd)
    }

    /// Largest deviation from oddness `Φ(c + s) = -Φ(c - s)` at offset `s`.
    pub fn oddness_defect(&self, center: f64, s: f64) -> f64 {
        (self.phi(center + s) + self.phi(center - s)).amax()
    }
}

/// `M12ᵀ Φ'(q2) + M22` at configuration `q` (not necessarily on the constraint).
pub fn regularity_at(sys: &dyn MechanicalSystem, vhc: &Vhc, q: &DVector<f64>) -> Result<f64> {
    let part = partition_mass(sys, q)?;
    let k = vhc.dim();
    Ok(part.m12.dot(&vhc.dphi(q[k])) + part.m22)
}

/// `M12ᵀ Φ' + M22` evaluated on the constraint at passive angle `q2`.
pub fn regularity(sys: &dyn MechanicalSystem, vhc: &Vhc, q2: f64) -> Result<f64> {
    let (q, _) = vhc.lift(q2, 0.0);
    regularity_at(sys, vhc, &q)
}

/// The linearizing feedback `u_c` that enforces `ρ'' + kd ρ' + kp ρ = 0`.
pub fn vhc_controller(sys: &dyn MechanicalSystem, vhc: &Vhc, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
    let part = partition_mass(sys, q)?;
    let h = sys.bias(q, qd);
    let terms = terms_from_parts(&part, &h)?;
    controller_from_terms(vhc, &part.m12, part.m22, &terms, q, qd)
}

pub(crate) fn controller_from_terms(
    vhc: &Vhc,
    m12: &DVector<f64>,
    m22: f64,
    t: &DynamicsTerms,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = vhc.dim();
    let q2 = q[k];
    let q2d = qd[k];
    let dphi = vhc.dphi(q2);
    let reg = m12.dot(&dphi) + m22;
    if reg.abs() < vhc.tol_reg || !reg.is_finite() {
        return Err(IcpmError::SingularVhc { q2, value: reg });
    }
    let op = &t.b - &dphi * t.d.transpose();
    let rho = vhc.rho(q);
    let rho_dot = vhc.rho_dot(q, qd);
    let rhs = -&t.a + vhc.d2phi(q2) * (q2d * q2d) + &dphi * t.c - &vhc.kp * rho - &vhc.kd * rho_dot;
    op.lu().solve(&rhs).ok_or(IcpmError::SingularVhc { q2, value: reg })
}

/// `ρ''` for the given accelerations.
pub fn rho_ddot(vhc: &Vhc, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> DVector<f64> {
    let k = vhc.dim();
    let q2 = q[k];
    qdd.rows(0, k) - vhc.dphi(q2) * qdd[k] - vhc.d2phi(q2) * (qd[k] * qd[k])
}

/// Closed-loop accelerations under `u = u_c`.
pub fn closed_loop_accel(
    sys: &dyn MechanicalSystem,
    vhc: &Vhc,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<DVector<f64>> {
    let part = partition_mass(sys, q)?;
    let h = sys.bias(q, qd);
    let t = terms_from_parts(&part, &h)?;
    let u = controller_from_terms(vhc, &part.m12, part.m22, &t, q, qd)?;
    Ok(crate::dynamics::accel_from_terms(&t, &u))
}

/// Dynamics terms plus the VHC control at one state; used by the high-gain realization.
pub(crate) fn terms_and_control(
    sys: &dyn MechanicalSystem,
    vhc: &Vhc,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<(DynamicsTerms, DVector<f64>)> {
    let part = partition_mass(sys, q)?;
    let h = sys.bias(q, qd);
    let t = terms_from_parts(&part, &h)?;
    let u = controller_from_terms(vhc, &part.m12, part.m22, &t, q, qd)?;
    Ok((t, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CartPendulum, Tiptoebot};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn cart_pendulum_rho() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        let rho = vhc.rho(&dvector![0.1, 0.4]);
        assert_relative_eq!(rho[0], 0.1 + 1.5 * 0.4f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(rho[0], 0.68413, epsilon = 1e-5);
    }

    #[test]
    fn tiptoebot_rho_on_constraint() {
        let tb = Tiptoebot::default();
        let vhc = tb.default_vhc();
        // q = [θ2, θ3, θ1] for (θ1, θ2, θ3) = (0.5, -1.0, 0.05)
        let rho = vhc.rho(&dvector![-1.0, 0.05, 0.5]);
        assert!(rho.amax() < 1e-15);
    }

    #[test]
    fn lifted_state_has_zero_rho() {
        let vhc = CartPendulum::default().default_vhc();
        let (q, qd) = vhc.lift(0.37, -1.2);
        assert!(vhc.rho(&q).amax() < 1e-15);
        assert!(vhc.rho_dot(&q, &qd).amax() < 1e-15);
    }

    #[test]
    fn cart_pendulum_regularity_profile() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        assert_relative_eq!(regularity(&cp, &vhc, 0.0).unwrap(), -0.5, epsilon = 1e-14);
        for th in [-0.5f64, 0.2, 1.3, 2.9] {
            let expected = 1.0 - 1.5 * th.cos().powi(2);
            assert_relative_eq!(regularity(&cp, &vhc, th).unwrap(), expected, epsilon = 1e-14);
        }
        let root = (1.0f64 / 1.5).sqrt().acos();
        assert_relative_eq!(root, 0.61, epsilon = 0.01);
        assert!(regularity(&cp, &vhc, root).unwrap().abs() < 1e-14);
    }

    #[test]
    fn controller_refuses_singular_configuration() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        let root = (1.0f64 / 1.5).sqrt().acos();
        let (q, qd) = vhc.lift(root, 0.1);
        match vhc_controller(&cp, &vhc, &q, &qd) {
            Err(IcpmError::SingularVhc { q2, .. }) => assert_relative_eq!(q2, root),
            other => panic!("expected singular-vhc, got {other:?}"),
        }
    }

    #[test]
    fn closed_loop_enforces_linear_error_dynamics() {
        let tb = Tiptoebot::default();
        let vhc = tb.default_vhc();
        let q = dvector![0.3, -0.1, 0.2];
        let qd = dvector![-0.5, 0.7, 1.4];
        let qdd = closed_loop_accel(&tb, &vhc, &q, &qd).unwrap();
        let resid = rho_ddot(&vhc, &q, &qd, &qdd) + vhc.kd() * vhc.rho_dot(&q, &qd) + vhc.kp() * vhc.rho(&q);
        assert!(resid.amax() < 1e-10, "{resid}");
    }

    #[test]
    fn gains_must_be_spd() {
        let shape = Arc::new(LinearShape { slopes: dvector![1.0] });
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(Vhc::new(shape, bad, DMatrix::identity(1, 1)).is_err());
    }
}
