//! The `design`, `simulate` and `phase-portrait` commands.
//!
//! Every command computes all of its outputs before touching the file
//! system, so a failed run leaves no partial files behind. The only
//! exception is a simulation that fails midway, which still writes the
//! trajectory up to the failure.

use std::f64::consts::PI;
use std::path::Path;

use icpm::hybrid::{ImpulseMode, SectionSpec};
use icpm::reduction::{OrbitKind, OrbitSpec, ReducedSystem};
use icpm::IcpmError;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PortraitGrid};
use crate::error::CliError;
use crate::experiment::{Design, Experiment, SimulationRun};
use crate::output::{num, render_json, write_all, CsvTable, Metadata};

pub const DESIGN_FILE: &str = "design.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PORTRAIT_FILE: &str = "phase_portrait.csv";
pub const TABLE_FILE: &str = "reduced_table.csv";
pub const ORBIT_FILE: &str = "orbit.csv";

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSummary {
    pub c_d: f64,
    pub kind: OrbitKind,
    pub anchor: Option<[f64; 2]>,
    pub q2_bounds: [f64; 2],
}

impl From<&OrbitSpec> for OrbitSummary {
    fn from(o: &OrbitSpec) -> Self {
        Self {
            c_d: o.c_d,
            kind: o.kind,
            anchor: o.anchor.map(|(a, b)| [a, b]),
            q2_bounds: [o.q2_bounds.0, o.q2_bounds.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTolerances {
    pub rtol: f64,
    pub atol: f64,
    pub event_tol: f64,
    pub quad_tol: f64,
}

/// The design report. Matrices are row-major nested arrays and complex numbers `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub model: String,
    pub section: SectionSpec,
    pub orbit: OrbitSummary,
    pub z_star: Vec<f64>,
    pub fixed_point_residual: f64,
    pub newton_steps: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub floquet_open_loop: Vec<[f64; 2]>,
    pub floquet_closed_loop: Vec<[f64; 2]>,
    pub spectral_radius_closed_loop: f64,
    pub stable: bool,
    pub controllable: bool,
    pub stabilizable: bool,
    pub controllability_rank: usize,
    pub dare_residual: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub differencing: icpm::poincare::Differencing,
    pub tolerances: ReportTolerances,
}

impl DesignReport {
    pub fn new(cfg: &ExperimentConfig, d: &Design) -> Self {
        Self {
            model: cfg.model.as_str().into(),
            section: cfg.section,
            orbit: (&d.orbit).into(),
            z_star: d.fixed_point.z.iter().copied().collect(),
            fixed_point_residual: d.fixed_point.residual,
            newton_steps: d.fixed_point.newton_steps,
            a: rows(&d.map.a),
            b: rows(&d.map.b),
            k: rows(&d.lqr.k),
            p: rows(&d.lqr.p),
            floquet_open_loop: pairs(&d.map.floquet),
            floquet_closed_loop: pairs(&d.closed_loop.eigenvalues),
            spectral_radius_closed_loop: d.closed_loop.spectral_radius,
            stable: d.closed_loop.stable,
            controllable: d.stabilizability.controllable,
            stabilizable: d.stabilizability.stabilizable,
            controllability_rank: d.stabilizability.rank,
            dare_residual: d.lqr.residual,
            eps1: d.map.eps1,
            eps2: d.map.eps2,
            differencing: d.map.differencing,
            tolerances: ReportTolerances {
                rtol: cfg.integrator.tolerances.rtol,
                atol: cfg.integrator.tolerances.atol,
                event_tol: cfg.integrator.event_tol,
                quad_tol: cfg.design.quad_tol,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read design report {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad design report {}: {e}", path.display())))
    }

    pub fn gain(&self) -> DMatrix<f64> {
        let m = self.k.first().map_or(0, Vec::len);
        DMatrix::from_fn(self.k.len(), m, |i, j| self.k[i][j])
    }
}

/// Runs the design pipeline and returns the report and its rendering.
pub fn design(cfg: &ExperimentConfig) -> Result<(DesignReport, String), CliError> {
    let exp = Experiment::new(cfg.clone())?;
    let d = exp.design()?;
    let report = DesignReport::new(cfg, &d);
    let text = render_json(&Metadata::from_config(cfg), &report)?;
    Ok((report, text))
}

/// `design`: writes the report, then fails with exit 4 if the loop is not Schur stable.
pub fn cmd_design(cfg: &ExperimentConfig) -> Result<DesignReport, CliError> {
    let (report, text) = design(cfg)?;
    write_all(&cfg.output_dir, &[(DESIGN_FILE, text)])?;
    if !report.stable {
        return Err(CliError::Unstable(format!(
            "closed-loop spectral radius {:.6} is not below 1",
            report.spectral_radius_closed_loop
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingSummary {
    pub k: usize,
    pub t: f64,
    pub error_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub model: String,
    pub mode: String,
    pub status: String,
    pub error: Option<String>,
    pub t_final: f64,
    pub z_star: Vec<f64>,
    pub crossings: Vec<CrossingSummary>,
    pub error_norms: Vec<f64>,
    pub converge_tol: f64,
    pub convergence_time: Option<f64>,
    pub final_distance: Option<f64>,
    pub max_abs_q2: f64,
    pub max_abs_rho: f64,
    pub clamped_events: Vec<usize>,
    pub distance: Vec<[f64; 2]>,
}

/// Rendered outputs of a simulation.
pub struct SimulationOutputs {
    pub run: SimulationRun,
    pub summary: SimulationSummary,
    pub files: Vec<(&'static str, String)>,
}

fn gain_for(exp: &Experiment, cfg: &ExperimentConfig) -> Result<(DMatrix<f64>, DVector<f64>), CliError> {
    if let Some(g) = &cfg.gain {
        let m = g.z_star.len();
        return Ok((DMatrix::from_fn(g.k.len(), m, |i, j| g.k[i][j]), DVector::from_column_slice(&g.z_star)));
    }
    if let Some(path) = &cfg.design_report {
        let r = DesignReport::load(path)?;
        let k = r.gain();
        let m = 2 * cfg.actuated() + 1;
        if r.model != cfg.model.as_str() || k.shape() != (cfg.actuated(), m) || r.z_star.len() != m {
            return Err(CliError::Config(format!("design report {} does not fit model {}", path.display(), r.model)));
        }
        return Ok((k, DVector::from_vec(r.z_star)));
    }
    let d = exp.design()?;
    Ok((d.lqr.k, d.fixed_point.z))
}

/// Runs the closed loop and renders the trajectory, event and summary files.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationOutputs, CliError> {
    let exp = Experiment::new(cfg.clone())?;
    let reduced = exp.reduced()?;
    let orbit = exp.orbit(&reduced)?;
    let (k, z_star) = gain_for(&exp, cfg)?;
    let run = exp.simulate(&reduced, &orbit, &k, &z_star)?;
    let meta = Metadata::from_config(cfg);
    let n = exp.sys.dof();
    let kdim = n - 1;

    let labels = exp.sys.coordinate_labels();
    let mut columns = vec!["t".to_string()];
    columns.extend(labels.iter().cloned());
    columns.extend(labels.iter().map(|l| format!("{l}_dot")));
    columns.extend((0..kdim).map(|i| format!("rho_{i}")));
    columns.extend(["E".to_string(), "event_flag".to_string()]);
    let mut traj = CsvTable::new(columns);
    traj.note("model", cfg.model.as_str());
    for ((s, rho), e) in run.trajectory.samples.iter().zip(&run.rho).zip(&run.energy) {
        let mut cells = vec![num(s.t)];
        cells.extend(s.x.iter().map(|&v| num(v)));
        cells.extend(rho.iter().map(|&v| num(v)));
        cells.push(num(*e));
        cells.push(u8::from(s.event).to_string());
        traj.push(&cells);
    }

    let m = 2 * kdim + 1;
    let mut columns = vec!["k".to_string(), "t_k".to_string()];
    columns.extend((0..m).map(|i| format!("z_minus_{i}")));
    columns.extend((0..m).map(|i| format!("z_plus_{i}")));
    columns.extend((0..kdim).map(|i| format!("impulse_{i}")));
    let mut events = CsvTable::new(columns);
    events.note("model", cfg.model.as_str());
    for ev in &run.trajectory.events {
        let mut cells = vec![ev.k.to_string(), num(ev.t)];
        cells.extend(ev.z_minus.iter().map(|&v| num(v)));
        cells.extend(ev.z_plus.iter().map(|&v| num(v)));
        cells.extend(ev.impulse.iter().map(|&v| num(v)));
        events.push(&cells);
    }

    let (status, error) = match &run.failure {
        None => ("completed", None),
        Some(IcpmError::OrbitEscape { .. }) => ("diverged", run.failure.as_ref().map(ToString::to_string)),
        Some(e) => ("failed", Some(e.to_string())),
    };
    let samples = &run.trajectory.samples;
    let summary = SimulationSummary {
        model: cfg.model.as_str().into(),
        mode: match cfg.impulse {
            ImpulseMode::Jump => "jump".into(),
            ImpulseMode::HighGain(_) => "high-gain".into(),
        },
        status: status.into(),
        error,
        t_final: samples.last().map_or(0.0, |s| s.t),
        z_star: z_star.iter().copied().collect(),
        crossings: run
            .trajectory
            .crossings
            .iter()
            .map(|c| CrossingSummary { k: c.k, t: c.t, error_norm: c.error_norm })
            .collect(),
        error_norms: run.trajectory.crossings.iter().map(|c| c.error_norm).collect(),
        converge_tol: cfg.converge_tol,
        convergence_time: run.convergence_time,
        final_distance: run.distance.last().copied(),
        max_abs_q2: samples.iter().map(|s| s.x[kdim].abs()).fold(0.0, f64::max),
        max_abs_rho: run.rho.iter().map(|r| r.amax()).fold(0.0, f64::max),
        clamped_events: run.trajectory.events.iter().filter(|e| e.clamped).map(|e| e.k).collect(),
        distance: samples.iter().zip(&run.distance).map(|(s, &d)| [s.t, d]).collect(),
    };
    let files = vec![
        (TRAJECTORY_FILE, traj.render(&meta)),
        (EVENTS_FILE, events.render(&meta)),
        (SUMMARY_FILE, render_json(&meta, &summary)?),
    ];
    Ok(SimulationOutputs { run, summary, files })
}

/// `simulate`: writes all outputs, including those of an interrupted run.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulationSummary, CliError> {
    let out = simulate(cfg)?;
    write_all(&cfg.output_dir, &out.files)?;
    match out.run.failure {
        None => Ok(out.summary),
        Some(e @ IcpmError::OrbitEscape { .. }) => Err(CliError::Divergence(e.to_string())),
        Some(e) => Err(CliError::Core(e)),
    }
}

fn grid_axis(range: [f64; 2], n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (range[0] + range[1])],
        _ => (0..n).map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn portrait_ranges(cfg: &ExperimentConfig, red: &ReducedSystem) -> ([f64; 2], [f64; 2]) {
    let PortraitGrid { q2_range, q2_dot_range, .. } = cfg.portrait;
    let (lo, hi) = red.range();
    let default_q2 = if red.is_full_turn() { [-1.0, 1.0] } else { [lo, hi] };
    let default_rate = if red.is_full_turn() { [-4.0, 4.0] } else { [-1.5, 1.5] };
    (q2_range.unwrap_or(default_q2), q2_dot_range.unwrap_or(default_rate))
}

/// Renders the energy grid, the reduced tables and the desired orbit.
pub fn phase_portrait(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, String)>, CliError> {
    let exp = Experiment::new(cfg.clone())?;
    let red = exp.reduced()?;
    let orbit = exp.orbit(&red)?;
    let meta = Metadata::from_config(cfg);
    let (r1, r2) = portrait_ranges(cfg, &red);

    let mut grid = CsvTable::new(vec!["q2".into(), "q2_dot".into(), "E".into(), "E_minus_c_d".into()]);
    grid.note("model", cfg.model.as_str());
    grid.note("c_d", num(orbit.c_d));
    for q2 in grid_axis(r1, cfg.portrait.n_q2) {
        for w in grid_axis(r2, cfg.portrait.n_q2_dot) {
            let e = red.energy(q2, w).unwrap_or(f64::NAN);
            grid.push(&[num(q2), num(w), num(e), num(e - orbit.c_d)]);
        }
    }

    let mut table = CsvTable::new(vec!["q2".into(), "M".into(), "P".into()]);
    table.note("model", cfg.model.as_str());
    for (q2, m, p) in red.table() {
        table.push(&[num(q2), num(m), num(p)]);
    }

    let mut curve = CsvTable::new(vec!["s".into(), "q2".into(), "q2_dot".into()]);
    curve.note("model", cfg.model.as_str());
    curve.note("c_d", num(orbit.c_d));
    let kdim = exp.vhc.dim();
    let n = 400;
    for i in 0..=n {
        let s = 2.0 * PI * i as f64 / n as f64;
        let x = orbit.state_at(&red, &exp.vhc, s)?;
        curve.push(&[num(s), num(x[kdim]), num(x[2 * kdim + 1])]);
    }

    Ok(vec![(PORTRAIT_FILE, grid.render(&meta)), (TABLE_FILE, table.render(&meta)), (ORBIT_FILE, curve.render(&meta))])
}

pub fn cmd_phase_portrait(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let files = phase_portrait(cfg)?;
    write_all(&cfg.output_dir, &files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_axis_edges() {
        assert!(grid_axis([0.0, 1.0], 0).is_empty());
        assert_eq!(grid_axis([0.0, 1.0], 1), vec![0.5]);
        assert_eq!(grid_axis([-1.0, 1.0], 3), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn report_roundtrips_through_json() {
        let cfg = ExperimentConfig::default();
        let (report, text) = design(&cfg).unwrap();
        let back: DesignReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.gain().shape(), (1, 3));
    }
}
