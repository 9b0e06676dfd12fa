use nalgebra::{dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::christoffel_bias;
use crate::dynamics::MechanicalSystem;
use crate::error::{IcpmError, Result};
use crate::vhc::{LinearShape, Vhc};

/// Lumped parameters of the tiptoebot and its linear constraint
/// `θ2 = slope_knee · θ1`, `θ3 = slope_hip · θ1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiptoebotParams {
    pub alpha: [f64; 6],
    pub beta: [f64; 3],
    pub slope_knee: f64,
    pub slope_hip: f64,
    pub kp: [[f64; 2]; 2],
    pub kd: [[f64; 2]; 2],
}

impl Default for TiptoebotParams {
    fn default() -> Self {
        Self {
            alpha: [0.386, 0.217, 0.247, 0.065, 0.054, 0.104],
            beta: [4.307, 1.102, 1.764],
            slope_knee: -2.0,
            slope_hip: 0.1,
            kp: [[1.0, 0.0], [0.0, 1.0]],
            kd: [[0.1, 0.0], [0.0, 0.1]],
        }
    }
}

/// Three-link robot balancing on a passive toe joint.
///
/// Stored as `q = [θ2, θ3, θ1]`: knee and hip (actuated) first, toe last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tiptoebot {
    params: TiptoebotParams,
}

impl Tiptoebot {
    pub fn new(params: TiptoebotParams) -> Result<Self> {
        if params.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(IcpmError::InvalidInput("tiptoebot alpha parameters must be positive".into()));
        }
        if params.beta.iter().chain([&params.slope_knee, &params.slope_hip]).any(|b| !b.is_finite()) {
            return Err(IcpmError::InvalidInput("tiptoebot parameters must be finite".into()));
        }
        let sys = Self { params };
        sys.try_vhc()?;
        Ok(sys)
    }

    pub fn params(&self) -> &TiptoebotParams {
        &self.params
    }

    fn try_vhc(&self) -> Result<Vhc> {
        let p = &self.params;
        let kp = DMatrix::from_row_slice(2, 2, &[p.kp[0][0], p.kp[0][1], p.kp[1][0], p.kp[1][1]]);
        let kd = DMatrix::from_row_slice(2, 2, &[p.kd[0][0], p.kd[0][1], p.kd[1][0], p.kd[1][1]]);
        Vhc::new(Arc::new(LinearShape { slopes: dvector![p.slope_knee, p.slope_hip] }), kp, kd)
    }

    pub fn default_vhc(&self) -> Vhc {
        self.try_vhc().expect("validated at construction")
    }

    /// Maps physical `(θ1, θ2, θ3)` to storage order.
    pub fn from_joint_order(theta: [f64; 3]) -> DVector<f64> {
        dvector![theta[1], theta[2], theta[0]]
    }

    /// `∂M/∂q_k` for `q = [θ2, θ3, θ1]`; `M` does not depend on `θ1`.
    fn mass_partials(&self, q: &DVector<f64>) -> [DMatrix<f64>; 3] {
        let a = &self.params.alpha;
        let (t2, t3) = (q[0], q[1]);
        let (s2, s3, s23) = (t2.sin(), t3.sin(), (t2 + t3).sin());

        let mut d2 = DMatrix::zeros(3, 3);
        let m12_0 = -a[3] * s2 - a[5] * s23;
        let m12_1 = -a[5] * s23;
        d2[(0, 2)] = m12_0;
        d2[(2, 0)] = m12_0;
        d2[(1, 2)] = m12_1;
        d2[(2, 1)] = m12_1;
        d2[(2, 2)] = 2.0 * (-a[3] * s2 - a[5] * s23);

        let mut d3 = DMatrix::zeros(3, 3);
        d3[(0, 0)] = -2.0 * a[4] * s3;
        d3[(0, 1)] = -a[4] * s3;
        d3[(1, 0)] = -a[4] * s3;
        let m12_0 = -2.0 * a[4] * s3 - a[5] * s23;
        let m12_1 = -a[4] * s3 - a[5] * s23;
        d3[(0, 2)] = m12_0;
        d3[(2, 0)] = m12_0;
        d3[(1, 2)] = m12_1;
        d3[(2, 1)] = m12_1;
        d3[(2, 2)] = 2.0 * (-a[4] * s3 - a[5] * s23);

        [d2, d3, DMatrix::zeros(3, 3)]
    }

    fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        let b = &self.params.beta;
        let (t2, t3, t1) = (q[0], q[1], q[2]);
        let s1 = t1.sin();
        let s12 = (t1 + t2).sin();
        let s123 = (t1 + t2 + t3).sin();
        dvector![
            -b[1] * s12 - b[2] * s123,
            -b[2] * s123,
            -b[0] * s1 - b[1] * s12 - b[2] * s123
        ]
    }
}

impl MechanicalSystem for Tiptoebot {
    fn dof(&self) -> usize {
        3
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let a = &self.params.alpha;
        let (t2, t3) = (q[0], q[1]);
        let (c2, c3, c23) = (t2.cos(), t3.cos(), (t2 + t3).cos());
        let m11_00 = a[1] + a[2] + 2.0 * a[4] * c3;
        let m11_01 = a[2] + a[4] * c3;
        let m11_11 = a[2];
        let m12_0 = a[1] + a[2] + a[3] * c2 + 2.0 * a[4] * c3 + a[5] * c23;
        let m12_1 = a[2] + a[4] * c3 + a[5] * c23;
        let m22 = a[0] + a[1] + a[2] + 2.0 * (a[3] * c2 + a[4] * c3 + a[5] * c23);
        DMatrix::from_row_slice(
            3,
            3,
            &[m11_00, m11_01, m12_0, m11_01, m11_11, m12_1, m12_0, m12_1, m22],
        )
    }

    fn bias(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        christoffel_bias(&self.mass_partials(q), qd, &self.potential_gradient(q))
    }

    fn potential(&self, q: &DVector<f64>) -> f64 {
        let b = &self.params.beta;
        let (t2, t3, t1) = (q[0], q[1], q[2]);
        b[0] * t1.cos() + b[1] * (t1 + t2).cos() + b[2] * (t1 + t2 + t3).cos()
    }

    fn symmetry_center(&self) -> DVector<f64> {
        DVector::zeros(3)
    }

    fn name(&self) -> &str {
        "tiptoebot"
    }

    fn coordinate_labels(&self) -> Vec<String> {
        vec!["theta2".into(), "theta3".into(), "theta1".into()]
    }
}

pub fn tiptoebot(params: TiptoebotParams) -> Result<(Tiptoebot, Vhc)> {
    let sys = Tiptoebot::new(params)?;
    let vhc = sys.default_vhc();
    Ok((sys, vhc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::symmetry_defect;
    use approx::assert_relative_eq;

    fn numeric_partial(tb: &Tiptoebot, q: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let h = 1e-6;
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[k] += h;
        qm[k] -= h;
        (tb.mass_matrix(&qp) - tb.mass_matrix(&qm)) / (2.0 * h)
    }

    #[test]
    fn analytic_mass_partials_match_finite_differences() {
        let tb = Tiptoebot::default();
        let q = dvector![0.4, -0.9, 0.3];
        let partials = tb.mass_partials(&q);
        for (k, p) in partials.iter().enumerate() {
            assert_relative_eq!(*p, numeric_partial(&tb, &q, k), epsilon = 1e-8);
        }
    }

    #[test]
    fn potential_gradient_matches_finite_differences() {
        let tb = Tiptoebot::default();
        let q = dvector![0.4, -0.9, 0.3];
        let g = tb.potential_gradient(&q);
        for k in 0..3 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += 1e-6;
            qm[k] -= 1e-6;
            let fd = (tb.potential(&qp) - tb.potential(&qm)) / 2e-6;
            assert_relative_eq!(g[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn symmetric_about_origin() {
        let tb = Tiptoebot::default();
        let vhc = tb.default_vhc();
        for s in [0.05, 0.5, 1.7] {
            assert!(symmetry_defect(&tb, &dvector![s, -0.3 * s, 0.8 * s]) < 1e-12);
            assert!(vhc.oddness_defect(0.0, s) < 1e-12);
        }
    }

    #[test]
    fn joint_order_mapping() {
        let q = Tiptoebot::from_joint_order([0.5, -1.0, 0.05]);
        assert_eq!(q.as_slice(), &[-1.0, 0.05, 0.5]);
    }
}
