use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dynamics::MechanicalSystem;
use crate::error::{IcpmError, Result};
use crate::vhc::{SineShape, Vhc};

/// Physical parameters of the cart-pendulum plus its default constraint.
///
/// The constraint is `x + amplitude · sin θ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPendulumParams {
    pub cart_mass: f64,
    pub pendulum_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub vhc_amplitude: f64,
    pub kp: f64,
    pub kd: f64,
}

impl Default for CartPendulumParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pendulum_mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            vhc_amplitude: 1.5,
            kp: 2.0,
            kd: 1.0,
        }
    }
}

/// Inverted pendulum on a cart, `q = [x; θ]`, θ measured from the upright.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CartPendulum {
    params: CartPendulumParams,
}

impl CartPendulum {
    pub fn new(params: CartPendulumParams) -> Result<Self> {
        let p = &params;
        for (name, v) in [
            ("cart_mass", p.cart_mass),
            ("pendulum_mass", p.pendulum_mass),
            ("length", p.length),
            ("gravity", p.gravity),
            ("kp", p.kp),
            ("kd", p.kd),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(IcpmError::InvalidInput(format!("cart-pendulum {name} must be positive, got {v}")));
            }
        }
        if !p.vhc_amplitude.is_finite() {
            return Err(IcpmError::InvalidInput("vhc_amplitude must be finite".into()));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &CartPendulumParams {
        &self.params
    }

    /// The constraint `x = -a sin θ` with scalar gains.
    pub fn default_vhc(&self) -> Vhc {
        let p = &self.params;
        Vhc::new(
            Arc::new(SineShape { amplitudes: dvector![-p.vhc_amplitude] }),
            DMatrix::from_element(1, 1, p.kp),
            DMatrix::from_element(1, 1, p.kd),
        )
        .expect("validated gains")
    }
}

impl MechanicalSystem for CartPendulum {
    fn dof(&self) -> usize {
        2
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        let ml = p.pendulum_mass * p.length;
        let c = q[1].cos();
        dmatrix![p.cart_mass + p.pendulum_mass, ml * c; ml * c, p.pendulum_mass * p.length * p.length]
    }

    fn bias(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let ml = p.pendulum_mass * p.length;
        let s = q[1].sin();
        dvector![-ml * s * qd[1] * qd[1], -ml * p.gravity * s]
    }

    fn potential(&self, q: &DVector<f64>) -> f64 {
        let p = &self.params;
        p.pendulum_mass * p.gravity * p.length * q[1].cos()
    }

    fn symmetry_center(&self) -> DVector<f64> {
        DVector::zeros(2)
    }

    fn name(&self) -> &str {
        "cart-pendulum"
    }

    fn coordinate_labels(&self) -> Vec<String> {
        vec!["x".into(), "theta".into()]
    }
}

/// Builds the system and its constraint.
pub fn cart_pendulum(params: CartPendulumParams) -> Result<(CartPendulum, Vhc)> {
    let sys = CartPendulum::new(params)?;
    let vhc = sys.default_vhc();
    Ok((sys, vhc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::symmetry_defect;

    #[test]
    fn symmetric_about_origin() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        for s in [0.1, 0.7, 2.3] {
            assert!(symmetry_defect(&cp, &dvector![0.4 * s, s]) < 1e-12);
            assert!(vhc.oddness_defect(0.0, s) < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_mass() {
        let params = CartPendulumParams { cart_mass: 0.0, ..Default::default() };
        assert!(cart_pendulum(params).is_err());
    }
}
