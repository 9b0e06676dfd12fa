//! Closed-loop simulation with Poincaré-section events and impulsive inputs.
//!
//! Full states are stacked as `x = [q; q']`. Section states drop the passive
//! angle and are ordered `z = (q1, q1', q2')`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{accel_from_terms, join_state, mechanical_energy, split_state, wrap_angle, MechanicalSystem};
use crate::error::{IcpmError, Result};
use crate::ode::{bracketed_root, DenseSegment, Step, Stepper, Tolerances};
use crate::reduction::ReducedSystem;
use crate::vhc::{closed_loop_accel, terms_and_control, Vhc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Crossings with `q2' ≥ 0`.
    Positive,
    /// Crossings with `q2' ≤ 0`.
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }
}

/// The section `q2 = q2*` crossed in the given direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionSpec {
    pub q2_star: f64,
    pub direction: Direction,
}

impl SectionSpec {
    pub fn new(q2_star: f64) -> Self {
        Self { q2_star, direction: Direction::Positive }
    }

    /// Signed offset from the section on the circle, in `(-π, π]`.
    pub fn offset(&self, q2: f64) -> f64 {
        wrap_angle(q2 - self.q2_star)
    }

    pub fn admits(&self, q2_dot: f64) -> bool {
        self.direction.sign() * q2_dot >= 0.0
    }
}

/// Integration and event settings shared by simulations and map evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub tolerances: Tolerances,
    /// Half-width of the band around the section that must be left before it re-arms.
    pub debounce: f64,
    /// Bound on `|q2 - q2*|` at a located crossing.
    pub event_tol: f64,
    /// Simulation stops when `|e(k)|` exceeds this.
    pub divergence_bound: f64,
    /// Largest integrator step.
    pub max_step: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            debounce: 1e-3,
            event_tol: 1e-10,
            divergence_bound: 10.0,
            max_step: 0.05,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        self.tolerances.validate()?;
        for (name, v) in [
            ("debounce", self.debounce),
            ("event_tol", self.event_tol),
            ("divergence_bound", self.divergence_bound),
            ("max_step", self.max_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IcpmError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `z = (q1, q1', q2')` from `x = [q; q']`.
pub fn section_state(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len() / 2;
    let k = n - 1;
    let mut z = DVector::zeros(2 * n - 1);
    z.rows_mut(0, k).copy_from(&x.rows(0, k));
    z.rows_mut(k, k).copy_from(&x.rows(n, k));
    z[2 * k] = x[n + k];
    z
}

/// The full state on the section with section coordinates `z`.
pub fn lift_section_state(z: &DVector<f64>, section: &SectionSpec) -> DVector<f64> {
    let k = (z.len() - 1) / 2;
    let n = k + 1;
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, k).copy_from(&z.rows(0, k));
    x[k] = section.q2_star;
    x.rows_mut(n, k).copy_from(&z.rows(k, k));
    x[n + k] = z[2 * k];
    x
}

/// The closed-loop vector field under the constraint controller alone.
pub fn closed_loop_rhs<'a>(
    sys: &'a dyn MechanicalSystem,
    vhc: &'a Vhc,
) -> impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>> + 'a {
    move |_t, x| {
        let (q, qd) = split_state(x);
        let qdd = closed_loop_accel(sys, vhc, &q, &qd)?;
        Ok(join_state(&qd, &qdd))
    }
}

/// Collects samples of a trajectory, either at every accepted step or on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Recorder {
    dt: Option<f64>,
    next_index: u64,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub event: bool,
}

impl Recorder {
    pub fn new(dt: Option<f64>) -> Self {
        Self { dt, next_index: 0, samples: Vec::new() }
    }

    fn last_t(&self) -> f64 {
        self.samples.last().map_or(f64::NEG_INFINITY, |s| s.t)
    }

    /// Records the part of `step` strictly before `until`, or up to and including it when `inclusive`.
    fn record_step(&mut self, step: &Step, until: f64, inclusive: bool) {
        match self.dt {
            Some(dt) => loop {
                let t = self.next_index as f64 * dt;
                let inside = if inclusive { t <= until } else { t < until };
                if !inside {
                    break;
                }
                if t >= step.t_prev && t > self.last_t() {
                    self.samples.push(Sample { t, x: step.dense.eval(t), event: false });
                }
                self.next_index += 1;
            },
            None => {
                if inclusive && until > self.last_t() {
                    let x = if until == step.t { step.y.clone() } else { step.dense.eval(until) };
                    self.samples.push(Sample { t: until, x, event: false });
                }
            }
        }
    }

    pub fn record_point(&mut self, t: f64, x: &DVector<f64>, event: bool) {
        if t > self.last_t() {
            self.samples.push(Sample { t, x: x.clone(), event });
        } else if let Some(last) = self.samples.last_mut() {
            if last.t == t {
                last.x = x.clone();
                last.event |= event;
            }
        }
        if let Some(dt) = self.dt {
            while (self.next_index as f64) * dt <= t {
                self.next_index += 1;
            }
        }
    }
}

/// A located section crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub t: f64,
    pub x: DVector<f64>,
}

/// Integrates the constraint-controlled closed loop from `(t0, x0)` to the next crossing of the section.
///
/// A start inside the de-bounce band does not count as a crossing; the
/// section arms once the state has left the band.
#[allow(clippy::too_many_arguments)]
pub fn integrate_to_section(
    sys: &dyn MechanicalSystem,
    vhc: &Vhc,
    section: &SectionSpec,
    x0: &DVector<f64>,
    t0: f64,
    t_max: f64,
    opts: &SimOptions,
    mut recorder: Option<&mut Recorder>,
) -> Result<Crossing> {
    let n = sys.dof();
    if x0.len() != 2 * n {
        return Err(IcpmError::InvalidInput(format!("expected state of length {}, got {}", 2 * n, x0.len())));
    }
    let k = n - 1;
    let t_end = t0 + t_max;
    let mut stepper = Stepper::new(closed_loop_rhs(sys, vhc), t0, x0.clone(), opts.tolerances)?.with_max_step(opts.max_step);
    let mut armed = section.offset(x0[k]).abs() > opts.debounce;
    let sgn = section.direction.sign();
    while stepper.t() < t_end {
        let step = stepper.step(t_end)?;
        let g0 = sgn * section.offset(step.y_prev[k]);
        let g1 = sgn * section.offset(step.y[k]);
        if armed && g0 < 0.0 && g1 >= 0.0 && g0 > -std::f64::consts::FRAC_PI_2 && g1 < std::f64::consts::FRAC_PI_2 {
            let crossing = refine_crossing(&mut stepper, &step, section, k, opts.event_tol)?;
            if section.admits(crossing.x[n + k]) {
                if let Some(rec) = recorder.as_deref_mut() {
                    rec.record_step(&step, crossing.t, false);
                }
                return Ok(crossing);
            }
        }
        if let Some(rec) = recorder.as_deref_mut() {
            rec.record_step(&step, step.t, true);
        }
        if !armed && section.offset(step.y[k]).abs() > opts.debounce {
            armed = true;
        }
    }
    Err(IcpmError::NoCrossing { t_max: t_end })
}

fn refine_crossing<F>(
    stepper: &mut Stepper<F>,
    step: &Step,
    section: &SectionSpec,
    k: usize,
    event_tol: f64,
) -> Result<Crossing>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let n = k + 1;
    let dense: &DenseSegment = &step.dense;
    let g = |t: f64| section.offset(dense.eval_component(t, k));
    let tc = bracketed_root(g, step.t_prev, step.t, 1e-15 * step.t.abs().max(1.0));
    let mut t = tc;
    let mut x = stepper.single_step(step.t_prev, &step.y_prev, tc - step.t_prev)?;
    for _ in 0..8 {
        let off = section.offset(x[k]);
        if off.abs() < 0.01 * event_tol {
            break;
        }
        let v = x[n + k];
        if v == 0.0 {
            break;
        }
        let dt = -off / v;
        x = stepper.single_step(t, &x, dt)?;
        t += dt;
    }
    let off = section.offset(x[k]);
    if off.abs() >= event_tol {
        return Err(IcpmError::Numeric(format!("crossing refinement stalled at |q2 - q2*| = {off:.3e}")));
    }
    Ok(Crossing { t, x })
}

/// Post-impulse velocities `q'⁺ = q'⁻ + M⁻¹ [𝓘; 0]`.
pub fn apply_impulse_jump(
    sys: &dyn MechanicalSystem,
    q: &DVector<f64>,
    qd_minus: &DVector<f64>,
    impulse: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = sys.dof();
    if q.len() != n || qd_minus.len() != n || impulse.len() != n - 1 {
        return Err(IcpmError::InvalidInput(format!(
            "impulse jump expects q, q' of length {n} and an impulse of length {}",
            n - 1
        )));
    }
    crate::dynamics::ensure_finite("impulse", impulse.as_slice())?;
    let chol = sys
        .mass_matrix(q)
        .cholesky()
        .ok_or_else(|| IcpmError::Model("mass matrix is not positive definite".into()))?;
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, n - 1).copy_from(impulse);
    Ok(qd_minus + chol.solve(&rhs))
}

/// Settings of the continuous high-gain realization of an impulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighGain {
    /// Diagonal of `Λ`.
    pub lambda: Vec<f64>,
    pub mu: f64,
    #[serde(default = "default_eps3")]
    pub eps3: f64,
}

fn default_eps3() -> f64 {
    1e-4
}

impl HighGain {
    pub fn new(lambda: Vec<f64>, mu: f64) -> Self {
        Self { lambda, mu, eps3: default_eps3() }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.lambda.len() != k {
            return Err(IcpmError::InvalidInput(format!("expected {k} entries of lambda, got {}", self.lambda.len())));
        }
        for (name, v) in self.lambda.iter().map(|&l| ("lambda", l)).chain([("mu", self.mu), ("eps3", self.eps3)]) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IcpmError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Burst time limit `100 μ max(1/λ)`.
    pub fn time_limit(&self) -> f64 {
        let lmin = self.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        100.0 * self.mu / lmin
    }
}

/// Drives `q1'` to `q1'_des` with the high-gain feedback and returns the state at the end of the burst and its duration.
///
/// The total input `u_c + u_hg` yields `q1'' = (1/μ) Λ (q1'_des - q1')`.
#[allow(clippy::too_many_arguments)]
pub fn high_gain_burst(
    sys: &dyn MechanicalSystem,
    vhc: &Vhc,
    x0: &DVector<f64>,
    t0: f64,
    q1_dot_des: &DVector<f64>,
    hg: &HighGain,
    tol: Tolerances,
    recorder: Option<&mut Recorder>,
) -> Result<(DVector<f64>, f64)> {
    let n = sys.dof();
    let k = n - 1;
    hg.validate(k)?;
    if x0.len() != 2 * n || q1_dot_des.len() != k {
        return Err(IcpmError::InvalidInput("high-gain burst dimensions do not match the model".into()));
    }
    let err_norm = |x: &DVector<f64>| (q1_dot_des - x.rows(n, k)).norm();
    if err_norm(x0) < hg.eps3 {
        return Ok((x0.clone(), 0.0));
    }
    let lambda = DVector::from_column_slice(&hg.lambda);
    let mu = hg.mu;
    let des = q1_dot_des.clone();
    let rhs = move |_t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let (q, qd) = split_state(x);
        let (terms, u_c) = terms_and_control(sys, vhc, &q, &qd)?;
        let a_bar = &terms.a + &terms.b * &u_c;
        let e = (&des - qd.rows(0, k)).component_mul(&lambda) / mu;
        let u_hg = terms
            .b
            .clone()
            .lu()
            .solve(&(e - a_bar))
            .ok_or_else(|| IcpmError::Model("singular B in high-gain feedback".into()))?;
        Ok(join_state(&qd, &accel_from_terms(&terms, &(u_c + u_hg))))
    };
    let limit = hg.time_limit();
    let lmax = hg.lambda.iter().cloned().fold(0.0, f64::max);
    let mut stepper = Stepper::new(rhs, t0, x0.clone(), tol)?.with_max_step(0.5 * mu / lmax);
    let mut recorder = recorder;
    let t_end = t0 + limit;
    while stepper.t() < t_end {
        let step = stepper.step(t_end)?;
        if err_norm(&step.y) < hg.eps3 {
            let f = |t: f64| err_norm(&step.dense.eval(t)) - hg.eps3;
            let tb = bracketed_root(f, step.t_prev, step.t, 1e-15 * step.t.abs().max(1.0));
            let x = stepper.single_step(step.t_prev, &step.y_prev, tb - step.t_prev)?;
            if let Some(rec) = recorder.as_deref_mut() {
                rec.record_step(&step, tb, false);
                rec.record_point(tb, &x, false);
            }
            return Ok((x, tb - t0));
        }
        if let Some(rec) = recorder.as_deref_mut() {
            rec.record_step(&step, step.t, true);
        }
    }
    Err(IcpmError::ConvergenceFailure { limit })
}

/// How impulses are realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ImpulseMode {
    Jump,
    HighGain(HighGain),
}

/// The discrete feedback `𝓘(k) = 𝒦 (z(k) - z*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseController {
    pub gain: DMatrix<f64>,
    pub z_star: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimInit {
    /// A full state `[q; q']`; the first detected crossing is `k = 1`.
    Full(DVector<f64>),
    /// A section state, treated as crossing `k = 0` at `t = 0`.
    Section(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub section: SectionSpec,
    /// `None` runs the constraint controller alone.
    pub controller: Option<ImpulseController>,
    pub mode: ImpulseMode,
    pub t_end: f64,
    pub options: SimOptions,
    /// Uniform output interval, or `None` to record every accepted step.
    pub sample_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseEvent {
    pub k: usize,
    pub t: f64,
    pub z_minus: DVector<f64>,
    pub z_plus: DVector<f64>,
    pub impulse: DVector<f64>,
    /// The commanded impulse was scaled down to keep the state on the section side.
    pub clamped: bool,
    /// Length of the high-gain burst; zero for jumps.
    pub burst: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingRecord {
    pub k: usize,
    pub t: f64,
    pub z: DVector<f64>,
    pub error_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HybridTrajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<ImpulseEvent>,
    pub crossings: Vec<CrossingRecord>,
}

/// A failed simulation together with everything recorded before the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{source}")]
pub struct SimulationError {
    pub partial: HybridTrajectory,
    pub source: IcpmError,
}

/// Largest fraction of `q2'⁻` that an impulse may remove before it is scaled back.
const FEASIBLE_FRACTION: f64 = 0.1;

/// Scales `impulse` by halving until `q2'⁺` keeps at least a tenth of `q2'⁻` in the section direction.
fn feasible_impulse(
    sys: &dyn MechanicalSystem,
    section: &SectionSpec,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    impulse: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, bool)> {
    let n = sys.dof();
    let sgn = section.direction.sign();
    let floor = FEASIBLE_FRACTION * sgn * qd[n - 1];
    let mut scaled = impulse.clone();
    for i in 0..60 {
        let qd_plus = apply_impulse_jump(sys, q, qd, &scaled)?;
        if sgn * qd_plus[n - 1] >= floor {
            return Ok((scaled, qd_plus, i > 0));
        }
        scaled *= 0.5;
    }
    Ok((DVector::zeros(n - 1), qd.clone(), true))
}

/// Runs the impulse-controlled closed loop until `t_end`.
pub fn simulate_closed_loop(
    sys: &dyn MechanicalSystem,
    vhc: &Vhc,
    cfg: &SimConfig,
    init: &SimInit,
) -> std::result::Result<HybridTrajectory, SimulationError> {
    let mut traj = HybridTrajectory::default();
    let mut rec = Recorder::new(cfg.sample_dt);
    match run(sys, vhc, cfg, init, &mut traj, &mut rec) {
        Ok(()) => {
            traj.samples = rec.samples;
            Ok(traj)
        }
        Err(source) => {
            traj.samples = rec.samples;
            Err(SimulationError { partial: traj, source })
        }
    }
}

fn run(
    sys: &dyn MechanicalSystem,
    vhc: &Vhc,
    cfg: &SimConfig,
    init: &SimInit,
    traj: &mut HybridTrajectory,
    rec: &mut Recorder,
) -> Result<()> {
    cfg.options.validate()?;
    let n = sys.dof();
    let k = n - 1;
    if let ImpulseMode::HighGain(hg) = &cfg.mode {
        hg.validate(k)?;
    }
    if let Some(c) = &cfg.controller {
        if c.gain.nrows() != k || c.gain.ncols() != 2 * n - 1 || c.z_star.len() != 2 * n - 1 {
            return Err(IcpmError::InvalidInput(format!(
                "impulse gain must be {k}x{} with a section state of length {}",
                2 * n - 1,
                2 * n - 1
            )));
        }
    }
    if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) {
        return Err(IcpmError::InvalidInput(format!("t_end must be positive, got {}", cfg.t_end)));
    }
    let (mut x, seeded) = match init {
        SimInit::Full(x0) => {
            if x0.len() != 2 * n {
                return Err(IcpmError::InvalidInput(format!("expected state of length {}, got {}", 2 * n, x0.len())));
            }
            (x0.clone(), false)
        }
        SimInit::Section(z) => {
            if z.len() != 2 * n - 1 {
                return Err(IcpmError::InvalidInput(format!(
                    "expected section state of length {}, got {}",
                    2 * n - 1,
                    z.len()
                )));
            }
            (lift_section_state(z, &cfg.section), true)
        }
    };
    crate::dynamics::ensure_finite("initial state", x.as_slice())?;
    let mut t = 0.0;
    let mut kk = 0usize;
    if seeded {
        x = fire(sys, vhc, cfg, kk, t, &x, traj, rec)?;
        t = rec.last_t().max(0.0);
    } else {
        rec.record_point(0.0, &x, false);
    }
    while t < cfg.t_end {
        let crossing = match integrate_to_section(sys, vhc, &cfg.section, &x, t, cfg.t_end - t, &cfg.options, Some(rec)) {
            Ok(c) => c,
            Err(IcpmError::NoCrossing { .. }) => return Ok(()),
            Err(e) => return Err(e),
        };
        kk += 1;
        t = crossing.t;
        x = fire(sys, vhc, cfg, kk, t, &crossing.x, traj, rec)?;
        t = rec.last_t().max(t);
    }
    Ok(())
}

/// Records crossing `k` and applies the commanded impulse; returns the state from which the flow resumes.
#[allow(clippy::too_many_arguments)]
fn fire(
    sys: &dyn MechanicalSystem,
    vhc: &Vhc,
    cfg: &SimConfig,
    k: usize,
    t: f64,
    x: &DVector<f64>,
    traj: &mut HybridTrajectory,
    rec: &mut Recorder,
) -> Result<DVector<f64>> {
    let n = sys.dof();
    let z = section_state(x);
    let Some(ctrl) = &cfg.controller else {
        traj.crossings.push(CrossingRecord { k, t, z, error_norm: f64::NAN });
        rec.record_point(t, x, true);
        return Ok(x.clone());
    };
    let e = &z - &ctrl.z_star;
    let error_norm = e.norm();
    traj.crossings.push(CrossingRecord { k, t, z: z.clone(), error_norm });
    if !(error_norm <= cfg.options.divergence_bound) {
        rec.record_point(t, x, true);
        return Err(IcpmError::OrbitEscape { k, norm: error_norm });
    }
    let command = &ctrl.gain * &e;
    let (q, qd) = split_state(x);
    let (impulse, qd_plus, clamped) = feasible_impulse(sys, &cfg.section, &q, &qd, &command)?;
    let (x_plus, burst) = match &cfg.mode {
        ImpulseMode::Jump => {
            let x_plus = join_state(&q, &qd_plus);
            rec.record_point(t, &x_plus, true);
            (x_plus, 0.0)
        }
        ImpulseMode::HighGain(hg) => {
            rec.record_point(t, x, true);
            let des = qd_plus.rows(0, n - 1).into_owned();
            high_gain_burst(sys, vhc, x, t, &des, hg, cfg.options.tolerances, Some(rec))?
        }
    };
    traj.events.push(ImpulseEvent {
        k,
        t,
        z_minus: z,
        z_plus: section_state(&x_plus),
        impulse,
        clamped,
        burst,
    });
    Ok(x_plus)
}

/// Constraint error `ρ` and zero-dynamics energy `E` of a full state.
///
/// `E` is `NaN` when `q2` lies outside the tabulated range.
pub fn sample_diagnostics(vhc: &Vhc, red: Option<&ReducedSystem>, x: &DVector<f64>) -> (DVector<f64>, f64) {
    let (q, qd) = split_state(x);
    let k = vhc.dim();
    let rho = vhc.rho(&q);
    let e = red.and_then(|r| r.energy(q[k], qd[k]).ok()).unwrap_or(f64::NAN);
    (rho, e)
}

/// Mechanical energy along a trajectory, for checking the unforced model.
pub fn energy_series(sys: &dyn MechanicalSystem, samples: &[Sample]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            let (q, qd) = split_state(&s.x);
            mechanical_energy(sys, &q, &qd)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CartPendulum, Tiptoebot};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn section_state_round_trip() {
        let s = SectionSpec::new(0.2);
        let z = dvector![1.0, 2.0, 3.0, 4.0, 5.0];
        let x = lift_section_state(&z, &s);
        assert_eq!(x, dvector![1.0, 2.0, 0.2, 3.0, 4.0, 5.0]);
        assert_eq!(section_state(&x), z);
    }

    #[test]
    fn zero_impulse_is_identity() {
        let cp = CartPendulum::default();
        let q = dvector![0.3, 0.1];
        let qd = dvector![-0.2, 0.5];
        assert_eq!(apply_impulse_jump(&cp, &q, &qd, &dvector![0.0]).unwrap(), qd);
    }

    #[test]
    fn cart_jump_at_upright() {
        let cp = CartPendulum::default();
        let qd = apply_impulse_jump(&cp, &dvector![0.0, 0.0], &dvector![0.0, 0.0], &dvector![0.7]).unwrap();
        assert_relative_eq!(qd[0], 0.7, epsilon = 1e-14);
        assert_relative_eq!(qd[1], -0.7, epsilon = 1e-14);
    }

    #[test]
    fn start_on_section_skips_immediate_crossing() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        let s = SectionSpec::new(0.0);
        let (q, qd) = vhc.lift(0.0, 0.45);
        let x0 = join_state(&q, &qd);
        let c = integrate_to_section(&cp, &vhc, &s, &x0, 0.0, 10.0, &SimOptions::default(), None).unwrap();
        assert!(c.t > 0.5);
        assert!(c.x[1].abs() < 1e-10);
        assert!((&c.x - &x0).amax() < 1e-8);
    }

    #[test]
    fn no_crossing_reported() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        let s = SectionSpec::new(0.0);
        let (q, qd) = vhc.lift(0.0, 0.45);
        let err = integrate_to_section(&cp, &vhc, &s, &join_state(&q, &qd), 0.0, 0.2, &SimOptions::default(), None)
            .unwrap_err();
        assert!(matches!(err, IcpmError::NoCrossing { .. }));
    }

    #[test]
    fn burst_reaches_target_velocity() {
        let tb = Tiptoebot::default();
        let vhc = tb.default_vhc();
        let (q, qd) = vhc.lift(0.0, 3.0);
        let x0 = join_state(&q, &qd);
        let des = dvector![-5.5, 0.2];
        let hg = HighGain::new(vec![1.0, 1.0], 1e-4);
        let (x, dur) = high_gain_burst(&tb, &vhc, &x0, 0.0, &des, &hg, Tolerances::default(), None).unwrap();
        assert!((x.rows(3, 2) - &des).norm() < 1.0001e-4);
        assert!(dur > 0.0 && dur < hg.time_limit());
        assert!((x.rows(0, 3) - x0.rows(0, 3)).norm() < 1e-2);
    }

    #[test]
    fn burst_with_target_reached_is_instant() {
        let cp = CartPendulum::default();
        let vhc = cp.default_vhc();
        let x0 = dvector![0.0, 0.0, -0.675, 0.45];
        let hg = HighGain::new(vec![1.0], 0.005);
        let (x, dur) = high_gain_burst(&cp, &vhc, &x0, 0.0, &dvector![-0.675], &hg, Tolerances::default(), None).unwrap();
        assert_eq!(dur, 0.0);
        assert_eq!(x, x0);
    }
}
