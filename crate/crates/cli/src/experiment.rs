//! The design, simulation and phase-portrait pipelines behind the commands.

use icpm::hybrid::{
    lift_section_state, sample_diagnostics, simulate_closed_loop, HybridTrajectory, ImpulseController, SimConfig,
    SimInit,
};
use icpm::lqr::{certify, dare_solve, stabilizability_check, Certificate, DareSolution, StabilizabilityReport};
use icpm::poincare::{find_fixed_point, linearize, FixedPoint, LinearizedMap, MapContext};
use icpm::reduction::{orbit_from_anchor, orbit_from_level, OrbitCurve, OrbitSpec, ReducedSystem};
use icpm::{IcpmError, MechanicalSystem, Vhc};
use nalgebra::{DMatrix, DVector};

use crate::config::{ExperimentConfig, InitialCondition, ModelName, OrbitChoice};
use crate::error::CliError;

/// A model instance with its constraint, ready for any pipeline.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub sys: Box<dyn MechanicalSystem>,
    pub vhc: Vhc,
}

/// Everything the design pipeline produces.
#[derive(Debug, Clone)]
pub struct Design {
    pub reduced: ReducedSystem,
    pub orbit: OrbitSpec,
    pub fixed_point: FixedPoint,
    pub map: LinearizedMap,
    pub stabilizability: StabilizabilityReport,
    pub lqr: DareSolution,
    pub closed_loop: Certificate,
}

/// A finished or interrupted closed-loop run with its diagnostics.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub trajectory: HybridTrajectory,
    pub rho: Vec<DVector<f64>>,
    pub energy: Vec<f64>,
    pub distance: Vec<f64>,
    /// Earliest time after which the distance to the orbit stays below the threshold.
    pub convergence_time: Option<f64>,
    pub failure: Option<IcpmError>,
}

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let (sys, vhc): (Box<dyn MechanicalSystem>, Vhc) = match cfg.model {
            ModelName::CartPendulum => {
                let (s, v) = icpm::models::cart_pendulum(cfg.cart_pendulum).map_err(|e| CliError::Config(e.to_string()))?;
                (Box::new(s), v)
            }
            ModelName::Tiptoebot => {
                let (s, v) = icpm::models::tiptoebot(cfg.tiptoebot).map_err(|e| CliError::Config(e.to_string()))?;
                (Box::new(s), v)
            }
        };
        let vhc = vhc.with_tol_reg(cfg.tol_reg);
        Ok(Self { cfg, sys, vhc })
    }

    pub fn map_context(&self) -> MapContext<'_> {
        let mut ctx = MapContext::new(self.sys.as_ref(), &self.vhc, self.cfg.section);
        ctx.options = self.cfg.integrator;
        ctx.t_max = self.cfg.design.map_t_max;
        ctx
    }

    pub fn reduced(&self) -> Result<ReducedSystem, CliError> {
        Ok(ReducedSystem::build(self.sys.as_ref(), &self.vhc, self.cfg.design.quad_tol, None)?)
    }

    pub fn orbit(&self, red: &ReducedSystem) -> Result<OrbitSpec, CliError> {
        Ok(match self.cfg.orbit_or_default() {
            OrbitChoice::Anchor { q2, q2_dot } => orbit_from_anchor(red, q2, q2_dot)?,
            OrbitChoice::Energy { c_d } => orbit_from_level(red, c_d)?,
        })
    }

    fn weights(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.cfg.actuated();
        let m = 2 * k + 1;
        let q = self.cfg.lqr.q.as_deref().map_or_else(|| DMatrix::identity(m, m), matrix);
        let r = self.cfg.lqr.r.as_deref().map_or_else(|| DMatrix::identity(k, k), matrix);
        (q, r)
    }

    /// Fixed point, linearization, stabilizability, LQR and certification.
    pub fn design(&self) -> Result<Design, CliError> {
        let reduced = self.reduced()?;
        let orbit = self.orbit(&reduced)?;
        let ctx = self.map_context();
        let fixed_point = find_fixed_point(&ctx, &reduced, &orbit)?;
        let d = &self.cfg.design;
        let map = linearize(&ctx, &fixed_point.z, d.eps1, d.eps2, d.differencing)?;
        let stabilizability = stabilizability_check(&map.a, &map.b, d.tol_rank)?;
        if !stabilizability.stabilizable {
            return Err(CliError::Unstable(format!(
                "linearized map is not stabilizable (rank {} of {})",
                stabilizability.rank,
                map.a.nrows()
            )));
        }
        let (q, r) = self.weights();
        let lqr = dare_solve(&map.a, &map.b, &q, &r)?;
        let closed_loop = certify(&map.a, &map.b, &lqr.k)?;
        Ok(Design { reduced, orbit, fixed_point, map, stabilizability, lqr, closed_loop })
    }

    fn initial(&self, z_star: &DVector<f64>) -> SimInit {
        match &self.cfg.initial {
            InitialCondition::FixedPoint => SimInit::Full(lift_section_state(z_star, &self.cfg.section)),
            InitialCondition::State { values } => SimInit::Full(DVector::from_column_slice(values)),
            InitialCondition::Section { values } => SimInit::Section(DVector::from_column_slice(values)),
        }
    }

    /// Runs the closed loop with gain `k` about `z_star` and evaluates the diagnostics.
    pub fn simulate(
        &self,
        reduced: &ReducedSystem,
        orbit: &OrbitSpec,
        k: &DMatrix<f64>,
        z_star: &DVector<f64>,
    ) -> Result<SimulationRun, CliError> {
        let controller = self.cfg.feedback.then(|| ImpulseController { gain: k.clone(), z_star: z_star.clone() });
        let sim = SimConfig {
            section: self.cfg.section,
            controller,
            mode: self.cfg.impulse.clone(),
            t_end: self.cfg.t_end,
            options: self.cfg.integrator,
            sample_dt: Some(self.cfg.sample_dt),
        };
        let (trajectory, failure) = match simulate_closed_loop(self.sys.as_ref(), &self.vhc, &sim, &self.initial(z_star)) {
            Ok(t) => (t, None),
            Err(e) => (e.partial, Some(e.source)),
        };
        let curve = OrbitCurve::new(reduced, &self.vhc, orbit, self.cfg.distance_samples)?;
        let mut rho = Vec::with_capacity(trajectory.samples.len());
        let mut energy = Vec::with_capacity(trajectory.samples.len());
        let mut distance = Vec::with_capacity(trajectory.samples.len());
        for s in &trajectory.samples {
            let (r, e) = sample_diagnostics(&self.vhc, Some(reduced), &s.x);
            rho.push(r);
            energy.push(e);
            distance.push(curve.distance(&s.x)?);
        }
        let convergence_time = convergence_time(
            trajectory.samples.iter().map(|s| s.t).zip(distance.iter().copied()),
            self.cfg.converge_tol,
        );
        Ok(SimulationRun { trajectory, rho, energy, distance, convergence_time, failure })
    }
}

/// First sample time from which every later distance is below `tol`.
pub fn convergence_time(series: impl Iterator<Item = (f64, f64)>, tol: f64) -> Option<f64> {
    let mut candidate = None;
    for (t, d) in series {
        if d < tol {
            candidate.get_or_insert(t);
        } else {
            candidate = None;
        }
    }
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_time_needs_a_settled_tail() {
        let s = [(0.0, 1.0), (1.0, 0.01), (2.0, 0.2), (3.0, 0.01), (4.0, 0.02)];
        assert_eq!(convergence_time(s.into_iter(), 0.05), Some(3.0));
        assert_eq!(convergence_time(s[..3].iter().copied(), 0.05), None);
        assert_eq!(convergence_time(std::iter::empty(), 0.05), None);
    }

    #[test]
    fn cart_design_is_stabilizing() {
        let exp = Experiment::new(ExperimentConfig::for_model(ModelName::CartPendulum)).unwrap();
        let d = exp.design().unwrap();
        assert!(d.closed_loop.stable);
        assert!(d.fixed_point.residual < 1e-7);
        assert_eq!(d.map.a.shape(), (3, 3));
    }
}
