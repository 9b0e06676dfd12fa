//! Discrete-time LQR synthesis for `e(k+1) = 𝒜 e(k) + ℬ 𝓘(k)`.
//!
//! The gain is signed so that `𝓘 = 𝒦 e` and the closed loop is `𝒜 + ℬ𝒦`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{IcpmError, Result};
use crate::poincare::floquet;

pub const DEFAULT_TOL_RANK: f64 = 1e-8;

/// Required Frobenius norm of the Riccati residual.
pub const DARE_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizabilityReport {
    pub controllable: bool,
    pub stabilizable: bool,
    /// Rank of the controllability matrix.
    pub rank: usize,
    /// Eigenvalues of `𝒜` that fail the PBH rank test.
    pub uncontrollable_modes: Vec<Complex64>,
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || b.nrows() != a.nrows() || b.ncols() == 0 {
        return Err(IcpmError::InvalidInput(format!(
            "inconsistent dimensions: A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

fn numeric_rank(s: &DVector<f64>, tol_rank: f64) -> usize {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > tol_rank * smax).count()
}

/// Controllability by the rank of `[ℬ, 𝒜ℬ, …]` and stabilizability by the PBH test on every eigenvalue.
pub fn stabilizability_check(a: &DMatrix<f64>, b: &DMatrix<f64>, tol_rank: f64) -> Result<StabilizabilityReport> {
    check_dims(a, b)?;
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    let rank = numeric_rank(&ctrb.svd(false, false).singular_values, tol_rank);
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let bc = b.map(|x| Complex64::new(x, 0.0));
    let mut uncontrollable = Vec::new();
    for lam in floquet(a)? {
        let mut pbh = DMatrix::<Complex64>::zeros(n, n + m);
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * lam;
        pbh.view_mut((0, 0), (n, n)).copy_from(&shifted);
        pbh.view_mut((0, n), (n, m)).copy_from(&bc);
        let sv = pbh.svd(false, false).singular_values;
        let scale = sv.iter().cloned().fold(0.0, f64::max).max(1.0);
        if sv.iter().filter(|&&x| x > tol_rank * scale).count() < n {
            uncontrollable.push(lam);
        }
    }
    let stabilizable = uncontrollable.iter().all(|l| l.norm() < 1.0);
    Ok(StabilizabilityReport { controllable: rank == n, stabilizable, rank, uncontrollable_modes: uncontrollable })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn check_weights(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    check_dims(a, b)?;
    let n = a.nrows();
    let m = b.ncols();
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(IcpmError::InvalidWeights(format!("Q must be {n}x{n} and R must be {m}x{m}")));
    }
    if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) || (r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
        return Err(IcpmError::InvalidWeights("weights must be symmetric".into()));
    }
    if r.clone().cholesky().is_none() {
        return Err(IcpmError::InvalidWeights("R must be positive definite".into()));
    }
    let qmin = q.clone().symmetric_eigenvalues().min();
    if qmin < -1e-12 * q.amax().max(1.0) {
        return Err(IcpmError::InvalidWeights(format!("Q must be positive semidefinite (eigenvalue {qmin:.3e})")));
    }
    Ok(())
}

/// `P = 𝒜ᵀP𝒜 − 𝒜ᵀPℬ(R + ℬᵀPℬ)⁻¹ℬᵀP𝒜 + Q`, residual in the Frobenius norm.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    residual_matrix(a, b, q, r, p).map_or(f64::INFINITY, |m| m.norm())
}

/// Right-hand side minus `P`, or `None` if `R + ℬᵀPℬ` is not positive definite.
fn residual_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let btp = b.transpose() * p;
    let s = r + &btp * b;
    let x = s.cholesky()?.solve(&(&btp * a));
    let rhs = a.transpose() * p * a - (btp * a).transpose() * x + q;
    Some(symmetrize(&(rhs - p)))
}

fn gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let btp = b.transpose() * p;
    let s = r + &btp * b;
    let chol = s
        .cholesky()
        .ok_or_else(|| IcpmError::InvalidWeights("R + BᵀPB is not positive definite".into()))?;
    Ok(-chol.solve(&(btp * a)))
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Structure-preserving doubling; returns `None` if it breaks down or stalls.
fn doubling(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let rinv_bt = r.clone().cholesky()?.solve(&b.transpose());
    let mut ak = a.clone();
    let mut gk = b * rinv_bt;
    let mut hk = q.clone();
    for it in 1..=100 {
        let w = (&eye + &gk * &hk).lu();
        let w_ak = w.solve(&ak)?;
        let w_gk = w.solve(&gk)?;
        let a_next = &ak * &w_ak;
        let g_next = symmetrize(&(&gk + &ak * w_gk * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_ak));
        let change = (&h_next - &hk).norm();
        let done = change <= 1e-14 * h_next.norm().max(1.0);
        if !h_next.iter().all(|x| x.is_finite()) {
            return None;
        }
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if done {
            return Some((hk, it));
        }
    }
    Some((hk, 100))
}

/// One Newton step in correction form: `ΔP − 𝒜_clᵀ ΔP 𝒜_cl` equals the current residual.
fn newton_polish(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let k = gain(a, b, r, p).ok()?;
    let acl = a + b * &k;
    let res = residual_matrix(a, b, q, r, p)?;
    let kron = acl.transpose().kronecker(&acl.transpose());
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let sol = lhs.lu().solve(&DVector::from_column_slice(res.as_slice()))?;
    Some(symmetrize(&(p + DMatrix::from_column_slice(n, n, sol.as_slice()))))
}

/// Solves the DARE and returns `P`, `𝒦 = −(R + ℬᵀPℬ)⁻¹ℬᵀP𝒜` and the residual.
///
/// Convergence assumes `(𝒜, ℬ)` stabilizable and `(𝒜, Q^{1/2})` detectable.
/// Doubling is tried first, with a fixed-point iteration as fallback.
pub fn dare_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DareSolution> {
    check_weights(a, b, q, r)?;
    let (mut p, mut iterations) = match doubling(a, b, q, r) {
        Some(sol) => sol,
        None => fixed_point(a, b, q, r)?,
    };
    let mut residual = dare_residual(a, b, q, r, &p);
    for _ in 0..8 {
        if residual < 0.1 * DARE_RESIDUAL_TOL {
            break;
        }
        match newton_polish(a, b, q, r, &p) {
            Some(pn) => {
                let rn = dare_residual(a, b, q, r, &pn);
                if rn < residual {
                    p = pn;
                    residual = rn;
                    iterations += 1;
                } else {
                    break;
                }
            }
            None => break,
        }
    }
    if !(residual < DARE_RESIDUAL_TOL) {
        if let Ok((pf, it)) = fixed_point(a, b, q, r) {
            let rf = dare_residual(a, b, q, r, &pf);
            if rf < residual {
                p = pf;
                residual = rf;
                iterations += it;
            }
        }
    }
    if !(residual < DARE_RESIDUAL_TOL) {
        return Err(IcpmError::Numeric(format!("Riccati residual {residual:.3e} above {DARE_RESIDUAL_TOL:.0e}")));
    }
    let k = gain(a, b, r, &p)?;
    Ok(DareSolution { p, k, residual, iterations })
}

fn fixed_point(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let mut p = q.clone();
    for it in 1..=10_000 {
        let k = gain(a, b, r, &p)?;
        let next = symmetrize(&(a.transpose() * &p * (a + b * &k) + q));
        if !next.iter().all(|x| x.is_finite()) {
            break;
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= 1e-14 * p.norm().max(1.0) {
            return Ok((p, it));
        }
    }
    Err(IcpmError::Numeric("Riccati iteration did not converge in 10000 steps".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    /// All eigenvalues strictly inside the unit circle.
    pub stable: bool,
}

/// Spectrum of `𝒜 + ℬ𝒦` and the Schur stability verdict.
pub fn certify(a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<Certificate> {
    check_dims(a, b)?;
    if k.shape() != (b.ncols(), a.nrows()) {
        return Err(IcpmError::InvalidInput(format!("gain must be {}x{}", b.ncols(), a.nrows())));
    }
    let eigenvalues = floquet(&(a + b * k))?;
    let spectral_radius = eigenvalues.first().map_or(0.0, |l| l.norm());
    Ok(Certificate { eigenvalues, spectral_radius, stable: spectral_radius < 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_oracle() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let i1 = DMatrix::identity(1, 1);
        let sol = dare_solve(&a, &b, &i1, &i1).unwrap();
        assert_relative_eq!(sol.p[(0, 0)], 2.0 + 5f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(sol.k[(0, 0)], -(1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-9);
        let cert = certify(&a, &b, &sol.k).unwrap();
        assert_relative_eq!(cert.spectral_radius, (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_dynamics_matrix_gives_zero_gain() {
        let a = DMatrix::zeros(3, 3);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 2.0]);
        let q = DMatrix::identity(3, 3);
        let r = DMatrix::identity(1, 1);
        let sol = dare_solve(&a, &b, &q, &r).unwrap();
        assert!(sol.k.amax() < 1e-15);
        assert!((sol.p - q).amax() < 1e-15);
    }

    #[test]
    fn zero_input_matrix_is_not_stabilizable() {
        let a = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
        let b = DMatrix::zeros(2, 1);
        let rep = stabilizability_check(&a, &b, DEFAULT_TOL_RANK).unwrap();
        assert!(!rep.controllable);
        assert!(!rep.stabilizable);
        assert_eq!(rep.uncontrollable_modes.len(), 2);
    }

    #[test]
    fn stable_uncontrollable_mode_is_stabilizable() {
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let rep = stabilizability_check(&a, &b, DEFAULT_TOL_RANK).unwrap();
        assert!(!rep.controllable);
        assert!(rep.stabilizable);
    }

    #[test]
    fn indefinite_r_rejected() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::identity(2, 2);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(dare_solve(&a, &b, &a, &r), Err(IcpmError::InvalidWeights(_))));
    }

    #[test]
    fn zero_gain_certifies_open_loop() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = certify(&a, &b, &DMatrix::zeros(1, 2)).unwrap();
        assert_relative_eq!(c.spectral_radius, 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(c.stable);
    }
}
