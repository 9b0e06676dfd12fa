//! Built-in models: the cart-pendulum and the three-link tiptoebot.

mod cart_pendulum;
mod tiptoebot;

pub use cart_pendulum::{cart_pendulum, CartPendulum, CartPendulumParams};
pub use tiptoebot::{tiptoebot, Tiptoebot, TiptoebotParams};

use nalgebra::{DMatrix, DVector};

/// `h_i = Σ_jk (∂_k M_ij - ½ ∂_i M_jk) q'_j q'_k + ∂_i F`, given `∂M/∂q_k` for every `k`.
pub(crate) fn christoffel_bias(partials: &[DMatrix<f64>], qd: &DVector<f64>, grad_potential: &DVector<f64>) -> DVector<f64> {
    let n = qd.len();
    let mut mdot = DMatrix::zeros(n, n);
    for (k, dm) in partials.iter().enumerate() {
        mdot += dm * qd[k];
    }
    let mut h = &mdot * qd + grad_potential;
    for (i, dm) in partials.iter().enumerate() {
        h[i] -= 0.5 * qd.dot(&(dm * qd));
    }
    h
}
