//! Euler-Lagrange dynamics of an n-DOF system with one passive revolute joint.
//!
//! Coordinates are ordered `q = [q1; q2]` with the `n - 1` actuated
//! coordinates first and the passive angle `q2` last. The equations of motion
//! are
//!
//! ```text
//! M11 q1'' + M12 q2'' + h1 = u
//! M12ᵀ q1'' + M22 q2'' + h2 = 0
//! ```
//!
//! and `potential` is the physical potential energy, so the unforced system
//! conserves `½ q'ᵀ M q' + F(q)`.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{IcpmError, Result};

/// A mechanical model with exactly one passive joint, stored last.
///
/// Implementations must be immutable after construction.
pub trait MechanicalSystem: Send + Sync {
    /// Total number of degrees of freedom (at least 2).
    fn dof(&self) -> usize;

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Coriolis, centrifugal and gravity generalized forces `[h1; h2]`.
    fn bias(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64>;

    /// Potential energy `F(q)`.
    fn potential(&self, q: &DVector<f64>) -> f64;

    /// Point about which `M` and `F` are even.
    fn symmetry_center(&self) -> DVector<f64>;

    fn name(&self) -> &str {
        "custom"
    }

    /// Human-readable labels for `q`, in storage order.
    fn coordinate_labels(&self) -> Vec<String> {
        (0..self.dof()).map(|i| format!("q{i}")).collect()
    }
}

/// Blocks of the mass matrix split along the active/passive partition.
#[derive(Debug, Clone, PartialEq)]
pub struct MassPartition {
    pub m11: DMatrix<f64>,
    pub m12: DVector<f64>,
    pub m22: f64,
}

/// The terms of `q1'' = A + B u`, `q2'' = C + D u`.
///
/// `d` holds the transpose of the row vector `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    pub c: f64,
    pub d: DVector<f64>,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub(crate) fn ensure_finite(label: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(IcpmError::InvalidInput(format!("{label} contains non-finite values")))
    }
}

fn ensure_dims(sys: &dyn MechanicalSystem, q: &DVector<f64>) -> Result<()> {
    if q.len() != sys.dof() {
        return Err(IcpmError::InvalidInput(format!(
            "expected {} coordinates, got {}",
            sys.dof(),
            q.len()
        )));
    }
    Ok(())
}

/// Splits `M(q)` into `(M11, M12, M22)` after checking it is symmetric positive definite.
pub fn partition_mass(sys: &dyn MechanicalSystem, q: &DVector<f64>) -> Result<MassPartition> {
    ensure_dims(sys, q)?;
    ensure_finite("q", q.as_slice())?;
    let m = sys.mass_matrix(q);
    partition_matrix(&m)
}

pub(crate) fn partition_matrix(m: &DMatrix<f64>) -> Result<MassPartition> {
    let n = m.nrows();
    if n < 2 || m.ncols() != n {
        return Err(IcpmError::Model(format!("mass matrix must be square with n >= 2, got {}x{}", n, m.ncols())));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(IcpmError::Model(format!("mass matrix is not symmetric (|M - Mᵀ| = {asym:.3e})")));
    }
    if m.clone().cholesky().is_none() {
        return Err(IcpmError::Model("mass matrix is not positive definite".into()));
    }
    let k = n - 1;
    Ok(MassPartition {
        m11: m.view((0, 0), (k, k)).into_owned(),
        m12: m.view((0, k), (k, 1)).column(0).into_owned(),
        m22: m[(k, k)],
    })
}

/// Evaluates `A, B, C, D` of the partitioned dynamics.
pub fn dynamics_terms(sys: &dyn MechanicalSystem, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DynamicsTerms> {
    let part = partition_mass(sys, q)?;
    ensure_finite("q_dot", qd.as_slice())?;
    let h = sys.bias(q, qd);
    terms_from_parts(&part, &h)
}

pub(crate) fn terms_from_parts(part: &MassPartition, h: &DVector<f64>) -> Result<DynamicsTerms> {
    let k = part.m12.len();
    let m22 = part.m22;
    if m22 <= 0.0 {
        return Err(IcpmError::Model(format!("M22 must be positive, got {m22}")));
    }
    let h1 = h.rows(0, k).into_owned();
    let h2 = h[k];
    let schur = &part.m11 - (&part.m12 * part.m12.transpose()) / m22;
    let b = schur
        .try_inverse()
        .ok_or_else(|| IcpmError::Model("singular Schur complement M11 - M12 M12ᵀ / M22".into()))?;
    let a = &b * (&part.m12 * h2 - &h1 * m22) / m22;
    let d = -(b.transpose() * &part.m12) / m22;
    let c = -(part.m12.dot(&a) + h2) / m22;
    Ok(DynamicsTerms { a, b, c, d })
}

/// Generalized accelerations for input `u` on the active joints.
pub fn forward_accel(
    sys: &dyn MechanicalSystem,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let t = dynamics_terms(sys, q, qd)?;
    if u.len() != t.a.len() {
        return Err(IcpmError::InvalidInput(format!("expected {} inputs, got {}", t.a.len(), u.len())));
    }
    Ok(accel_from_terms(&t, u))
}

pub(crate) fn accel_from_terms(t: &DynamicsTerms, u: &DVector<f64>) -> DVector<f64> {
    let k = t.a.len();
    let mut qdd = DVector::zeros(k + 1);
    qdd.rows_mut(0, k).copy_from(&(&t.a + &t.b * u));
    qdd[k] = t.c + t.d.dot(u);
    qdd
}

/// Residual `M q'' + h - [u; 0]` of the equations of motion.
pub fn equation_residual(
    sys: &dyn MechanicalSystem,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let n = sys.dof();
    let mut tau = DVector::zeros(n);
    tau.rows_mut(0, n - 1).copy_from(u);
    sys.mass_matrix(q) * qdd + sys.bias(q, qd) - tau
}

/// Total mechanical energy `½ q'ᵀ M q' + F(q)`.
pub fn mechanical_energy(sys: &dyn MechanicalSystem, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    0.5 * qd.dot(&(sys.mass_matrix(q) * qd)) + sys.potential(q)
}

/// Largest deviation from evenness of `M` and `F` about the symmetry center at offset `dq`.
pub fn symmetry_defect(sys: &dyn MechanicalSystem, dq: &DVector<f64>) -> f64 {
    let c = sys.symmetry_center();
    let plus = &c + dq;
    let minus = &c - dq;
    let dm = (sys.mass_matrix(&plus) - sys.mass_matrix(&minus)).abs().max();
    let df = (sys.potential(&plus) - sys.potential(&minus)).abs();
    dm.max(df)
}

/// Splits a full state `[q; q']` into its halves.
pub fn split_state(x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.len() / 2;
    (x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
}

pub fn join_state(q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
    let n = q.len();
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, n).copy_from(q);
    x.rows_mut(n, n).copy_from(qd);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CartPendulum, Tiptoebot};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.3 - 4.0 * PI), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn cart_pendulum_partition() {
        let cp = CartPendulum::default();
        let p = partition_mass(&cp, &dvector![0.0, 0.0]).unwrap();
        assert_relative_eq!(p.m11[(0, 0)], 2.0);
        assert_relative_eq!(p.m12[0], 1.0);
        assert_relative_eq!(p.m22, 1.0);
        let p = partition_mass(&cp, &dvector![0.0, PI / 2.0]).unwrap();
        assert!(p.m12[0].abs() < 1e-15);
    }

    #[test]
    fn tiptoebot_m22_at_origin() {
        let tb = Tiptoebot::default();
        let p = partition_mass(&tb, &DVector::zeros(3)).unwrap();
        assert_relative_eq!(p.m22, 1.296, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_configuration_rejected() {
        let cp = CartPendulum::default();
        let err = partition_mass(&cp, &dvector![f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, IcpmError::InvalidInput(_)));
    }

    #[test]
    fn non_spd_mass_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(partition_matrix(&m), Err(IcpmError::Model(_))));
    }

    #[test]
    fn cart_pendulum_terms_at_upright() {
        let cp = CartPendulum::default();
        let t = dynamics_terms(&cp, &dvector![0.0, 0.0], &dvector![0.0, 0.0]).unwrap();
        assert_relative_eq!(t.a[0], 0.0);
        assert_relative_eq!(t.c, 0.0);
        assert_relative_eq!(t.b[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(t.d[0], -1.0, epsilon = 1e-14);

        let qdd = forward_accel(&cp, &dvector![0.0, 0.0], &dvector![0.0, 0.0], &dvector![1.0]).unwrap();
        assert_relative_eq!(qdd[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(qdd[1], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn forward_accel_matches_direct_solve() {
        let tb = Tiptoebot::default();
        let q = dvector![0.3, -0.7, 0.2];
        let qd = dvector![1.1, -0.4, 2.0];
        let u = dvector![0.5, -1.5];
        let qdd = forward_accel(&tb, &q, &qd, &u).unwrap();
        let rhs = dvector![u[0], u[1], 0.0] - tb.bias(&q, &qd);
        let direct = tb.mass_matrix(&q).lu().solve(&rhs).unwrap();
        assert_relative_eq!(qdd, direct, epsilon = 1e-11);
        assert!(equation_residual(&tb, &q, &qd, &qdd, &u).amax() < 1e-9);
    }
}
