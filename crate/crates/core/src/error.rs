use thiserror::Error;

pub type Result<T> = std::result::Result<T, IcpmError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IcpmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model error: {0}")]
    Model(String),

    /// The constraint operator `B - Φ'D` is (numerically) singular.
    #[error("virtual constraint is singular at q2 = {q2:.6} (regularity {value:.3e})")]
    SingularVhc { q2: f64, value: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid orbit: {0}")]
    InvalidOrbit(String),

    #[error("no section crossing before t = {t_max}")]
    NoCrossing { t_max: f64 },

    #[error("impulse would leave the section: post-impulse q2_dot = {q2_dot:.6e}")]
    SectionInfeasible { q2_dot: f64 },

    #[error("orbit does not reach the section at q2* = {q2_star}")]
    SectionMismatch { q2_star: f64 },

    #[error("linearization probe {probe} failed: {reason}")]
    LinearizationFailure { probe: String, reason: String },

    #[error("high-gain burst did not converge within {limit:.3e} s")]
    ConvergenceFailure { limit: f64 },

    #[error("trajectory escaped the orbit neighbourhood at crossing {k}: |e| = {norm:.3e}")]
    OrbitEscape { k: usize, norm: f64 },

    #[error("invalid LQR weights: {0}")]
    InvalidWeights(String),
}
