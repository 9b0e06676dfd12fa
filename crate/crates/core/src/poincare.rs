//! The impulse-controlled Poincaré map, its fixed point and its finite-difference linearization.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{join_state, split_state, MechanicalSystem};
use crate::error::{IcpmError, Result};
use crate::hybrid::{apply_impulse_jump, integrate_to_section, lift_section_state, section_state, SectionSpec, SimOptions};
use crate::reduction::{OrbitKind, OrbitSpec, ReducedSystem};
use crate::vhc::Vhc;

/// Environment variable capping the number of parallel probe integrations.
pub const THREADS_ENV: &str = "ICPM_THREADS";

/// Everything needed to evaluate the return map.
#[derive(Clone, Copy)]
pub struct MapContext<'a> {
    pub sys: &'a dyn MechanicalSystem,
    pub vhc: &'a Vhc,
    pub section: SectionSpec,
    pub options: SimOptions,
    /// Longest flow time allowed between two crossings.
    pub t_max: f64,
}

impl<'a> MapContext<'a> {
    pub fn new(sys: &'a dyn MechanicalSystem, vhc: &'a Vhc, section: SectionSpec) -> Self {
        Self { sys, vhc, section, options: SimOptions::default(), t_max: 60.0 }
    }

    pub fn section_dim(&self) -> usize {
        2 * self.sys.dof() - 1
    }

    /// `𝕡(z, 𝓘)`: the velocity jump from `𝓘` at the section, then the flow to the next crossing.
    pub fn map(&self, z: &DVector<f64>, impulse: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.section_dim() {
            return Err(IcpmError::InvalidInput(format!(
                "expected section state of length {}, got {}",
                self.section_dim(),
                z.len()
            )));
        }
        let x = lift_section_state(z, &self.section);
        let (q, qd) = split_state(&x);
        let qd_plus = apply_impulse_jump(self.sys, &q, &qd, impulse)?;
        let q2_dot = qd_plus[self.sys.dof() - 1];
        if !(self.section.direction.sign() * q2_dot > 0.0) {
            return Err(IcpmError::SectionInfeasible { q2_dot });
        }
        let x_plus = join_state(&q, &qd_plus);
        let c = integrate_to_section(self.sys, self.vhc, &self.section, &x_plus, 0.0, self.t_max, &self.options, None)?;
        Ok(section_state(&c.x))
    }

    /// `𝕡(z, 𝓘)` together with the return time.
    pub fn map_with_time(&self, z: &DVector<f64>, impulse: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let x = lift_section_state(z, &self.section);
        let (q, qd) = split_state(&x);
        let qd_plus = apply_impulse_jump(self.sys, &q, &qd, impulse)?;
        let x_plus = join_state(&q, &qd_plus);
        let c = integrate_to_section(self.sys, self.vhc, &self.section, &x_plus, 0.0, self.t_max, &self.options, None)?;
        Ok((section_state(&c.x), c.t))
    }
}

/// `𝕡(z, 𝓘)` for a single evaluation.
pub fn poincare_map(ctx: &MapContext<'_>, z: &DVector<f64>, impulse: &DVector<f64>) -> Result<DVector<f64>> {
    ctx.map(z, impulse)
}

/// The section state where the orbit pierces the section, from the constraint lift alone.
pub fn analytic_fixed_point(
    red: &ReducedSystem,
    vhc: &Vhc,
    orbit: &OrbitSpec,
    section: &SectionSpec,
) -> Result<DVector<f64>> {
    let q2 = section.q2_star;
    let (lo, hi) = orbit.q2_bounds;
    let inside = match orbit.kind {
        OrbitKind::Oscillation => q2 > lo && q2 < hi,
        OrbitKind::Rotation => q2 >= lo && q2 <= hi,
    };
    if !inside {
        return Err(IcpmError::SectionMismatch { q2_star: q2 });
    }
    let speed = orbit.speed(red, q2)?;
    if !(speed > 0.0) {
        return Err(IcpmError::SectionMismatch { q2_star: q2 });
    }
    let (q, qd) = vhc.lift(q2, section.direction.sign() * speed);
    Ok(section_state(&join_state(&q, &qd)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub z: DVector<f64>,
    /// `|𝕡(z) - z|`.
    pub residual: f64,
    pub newton_steps: usize,
}

/// Target residual of the Newton refinement.
pub const FIXED_POINT_TOL: f64 = 1e-9;

/// The analytic fixed point, refined by at most five damped Newton steps on `𝕡(z) - z`.
///
/// The fixed points form a one-parameter family (one per energy level), so
/// `𝒜 - I` is singular along it and the Newton step uses a truncated pseudo-inverse.
pub fn find_fixed_point(ctx: &MapContext<'_>, red: &ReducedSystem, orbit: &OrbitSpec) -> Result<FixedPoint> {
    let mut z = analytic_fixed_point(red, ctx.vhc, orbit, &ctx.section)?;
    let zero = DVector::zeros(ctx.sys.dof() - 1);
    let mut r = ctx.map(&z, &zero)? - &z;
    let mut steps = 0;
    while r.norm() >= FIXED_POINT_TOL && steps < 5 {
        let lin = linearize(ctx, &z, 1e-5, 1e-5, Differencing::Forward)?;
        let j = lin.a - DMatrix::identity(z.len(), z.len());
        let jn = j.norm();
        let delta = -j.pseudo_inverse(1e-4 * jn).map_err(|e| IcpmError::Numeric(e.into()))? * &r;
        steps += 1;
        let mut accepted = false;
        let mut lambda = 1.0;
        for _ in 0..4 {
            let trial = &z + &delta * lambda;
            if let Ok(img) = ctx.map(&trial, &zero) {
                let rt = img - &trial;
                if rt.norm() < r.norm() {
                    z = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(FixedPoint { residual: r.norm(), z, newton_steps: steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Differencing {
    Forward,
    Central,
}

/// Finite-difference linearization of `𝕡` at `(z*, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedMap {
    pub z_star: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub floquet: Vec<Complex64>,
    pub eps1: f64,
    pub eps2: f64,
    pub differencing: Differencing,
    /// `𝕡(z*, 0)`, the base point the differences are taken from.
    pub image: DVector<f64>,
}

enum Probe {
    State(usize, f64),
    Impulse(usize, f64),
}

impl Probe {
    fn label(&self) -> String {
        match self {
            Probe::State(i, s) => format!("A column {i} ({})", if *s > 0.0 { "+" } else { "-" }),
            Probe::Impulse(i, s) => format!("B column {i} ({})", if *s > 0.0 { "+" } else { "-" }),
        }
    }
}

/// Number of worker threads for probe integrations, honoring `ICPM_THREADS`.
pub fn probe_threads() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(avail, |n| n.min(avail.max(1)))
}

/// Column `i` of `𝒜` is `[𝕡(z* + ε1 eᵢ) - 𝕡(z*)] / ε1`, and column `i` of `ℬ` is `[𝕡(z*, ε2 eᵢ) - 𝕡(z*)] / ε2`.
///
/// Central differencing replaces the base image by the probe at `-ε`. Probes
/// run in parallel and are assembled by column index.
pub fn linearize(
    ctx: &MapContext<'_>,
    z_star: &DVector<f64>,
    eps1: f64,
    eps2: f64,
    differencing: Differencing,
) -> Result<LinearizedMap> {
    if !(eps1 > 0.0 && eps2 > 0.0 && eps1.is_finite() && eps2.is_finite()) {
        return Err(IcpmError::InvalidInput(format!("finite-difference steps must be positive, got {eps1}, {eps2}")));
    }
    let m = ctx.section_dim();
    let k = ctx.sys.dof() - 1;
    if z_star.len() != m {
        return Err(IcpmError::InvalidInput(format!("expected section state of length {m}, got {}", z_star.len())));
    }
    let zero = DVector::zeros(k);
    let image = ctx.map(z_star, &zero).map_err(|e| IcpmError::LinearizationFailure {
        probe: "base point".into(),
        reason: e.to_string(),
    })?;
    let signs: &[f64] = match differencing {
        Differencing::Forward => &[1.0],
        Differencing::Central => &[1.0, -1.0],
    };
    let mut probes = Vec::new();
    for &s in signs {
        probes.extend((0..m).map(|i| Probe::State(i, s)));
        probes.extend((0..k).map(|i| Probe::Impulse(i, s)));
    }
    let eval = |p: &Probe| -> Result<DVector<f64>> {
        let res = match *p {
            Probe::State(i, s) => {
                let mut z = z_star.clone();
                z[i] += s * eps1;
                ctx.map(&z, &zero)
            }
            Probe::Impulse(i, s) => {
                let mut imp = zero.clone();
                imp[i] = s * eps2;
                ctx.map(z_star, &imp)
            }
        };
        res.map_err(|e| IcpmError::LinearizationFailure { probe: p.label(), reason: e.to_string() })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(probe_threads())
        .build()
        .map_err(|e| IcpmError::Numeric(format!("thread pool: {e}")))?;
    let results: Vec<Result<DVector<f64>>> = pool.install(|| probes.par_iter().map(eval).collect());
    let mut images = Vec::with_capacity(results.len());
    for r in results {
        images.push(r?);
    }
    let mut a = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, k);
    let per_sign = m + k;
    for (idx, p) in probes.iter().enumerate() {
        let (Probe::State(_, s) | Probe::Impulse(_, s)) = p;
        if *s < 0.0 {
            continue;
        }
        let plus = &images[idx];
        let (base, scale) = match differencing {
            Differencing::Forward => (&image, 1.0),
            Differencing::Central => (&images[idx + per_sign], 2.0),
        };
        match p {
            Probe::State(i, _) => a.set_column(*i, &((plus - base) / (scale * eps1))),
            Probe::Impulse(i, _) => b.set_column(*i, &((plus - base) / (scale * eps2))),
        }
    }
    let floquet = floquet(&a)?;
    Ok(LinearizedMap { z_star: z_star.clone(), a, b, floquet, eps1, eps2, differencing, image })
}

/// Eigenvalues of `a`, sorted by modulus in descending order.
pub fn floquet(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(IcpmError::InvalidInput("eigenvalues need a square matrix".into()));
    }
    let schur = nalgebra::Schur::try_new(a.clone(), 1e-14, 10_000)
        .ok_or_else(|| IcpmError::Numeric("eigenvalue iteration did not converge".into()))?;
    let mut ev: Vec<Complex64> = schur.complex_eigenvalues().iter().cloned().collect();
    ev.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.re.total_cmp(&x.re)).then(y.im.total_cmp(&x.im)));
    Ok(ev)
}

/// Permutation taking canonical section states `(q1, q1', q2')` to `(q1, q2', q1')`.
///
/// This is the layout obtained when the passive joint is listed first among
/// the velocities.
pub fn passive_rate_first(k: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    p.push(2 * k);
    p.extend(k..2 * k);
    p
}

/// `(P 𝒜 Pᵀ, P ℬ)` for the permutation `perm`, where row `i` of the result is row `perm[i]` of the input.
pub fn permute_map(a: &DMatrix<f64>, b: &DMatrix<f64>, perm: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = perm.len();
    let pa = DMatrix::from_fn(m, m, |i, j| a[(perm[i], perm[j])]);
    let pb = DMatrix::from_fn(m, b.ncols(), |i, j| b[(perm[i], j)]);
    (pa, pb)
}

/// Reorders a vector with `perm` as in [`permute_map`].
pub fn permute_vector(v: &DVector<f64>, perm: &[usize]) -> DVector<f64> {
    DVector::from_fn(perm.len(), |i, _| v[perm[i]])
}
