//! Experiment configuration: a single strict JSON document.

use std::path::{Path, PathBuf};

use icpm::hybrid::{ImpulseMode, SectionSpec, SimOptions};
use icpm::models::{CartPendulumParams, TiptoebotParams};
use icpm::poincare::Differencing;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    CartPendulum,
    Tiptoebot,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::CartPendulum => "cart-pendulum",
            ModelName::Tiptoebot => "tiptoebot",
        }
    }
}

/// The desired orbit, through a point of the reduced phase plane or at an energy level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum OrbitChoice {
    Anchor { q2: f64, q2_dot: f64 },
    Energy { c_d: f64 },
}

/// Where a simulation starts. State vectors are in storage order `[q; q']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum InitialCondition {
    /// The fixed point lifted to a full state.
    FixedPoint,
    State { values: Vec<f64> },
    /// A section state `(q1, q1', q2')`, counted as crossing 0.
    Section { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrWeights {
    /// State weight, identity when absent.
    pub q: Option<Vec<Vec<f64>>>,
    /// Input weight, identity when absent.
    pub r: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSettings {
    pub eps1: f64,
    pub eps2: f64,
    pub differencing: Differencing,
    /// Absolute tolerance of the reduced-dynamics quadratures.
    pub quad_tol: f64,
    /// Longest time allowed for one return to the section.
    pub map_t_max: f64,
    pub tol_rank: f64,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            eps1: 1e-5,
            eps2: 1e-5,
            differencing: Differencing::Forward,
            quad_tol: 1e-10,
            map_t_max: 60.0,
            tol_rank: icpm::lqr::DEFAULT_TOL_RANK,
        }
    }
}

/// Gains supplied directly instead of through a design report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineGain {
    pub k: Vec<Vec<f64>>,
    pub z_star: Vec<f64>,
}

/// Grid of the phase portrait. Missing bounds fall back to model defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortraitGrid {
    pub q2_range: Option<[f64; 2]>,
    pub q2_dot_range: Option<[f64; 2]>,
    pub n_q2: usize,
    pub n_q2_dot: usize,
}

impl Default for PortraitGrid {
    fn default() -> Self {
        Self { q2_range: None, q2_dot_range: None, n_q2: 101, n_q2_dot: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelName,
    pub cart_pendulum: CartPendulumParams,
    pub tiptoebot: TiptoebotParams,
    pub tol_reg: f64,
    /// Model default anchor when absent.
    pub orbit: Option<OrbitChoice>,
    pub section: SectionSpec,
    pub impulse: ImpulseMode,
    /// Applies impulses at crossings; off runs the constraint controller alone.
    pub feedback: bool,
    pub lqr: LqrWeights,
    pub design: DesignSettings,
    pub integrator: SimOptions,
    pub t_end: f64,
    pub sample_dt: f64,
    pub initial: InitialCondition,
    pub gain: Option<InlineGain>,
    pub design_report: Option<PathBuf>,
    pub portrait: PortraitGrid,
    /// Sampling density of the orbit for distance queries.
    pub distance_samples: usize,
    /// Distance below which a trajectory counts as converged.
    pub converge_tol: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelName::CartPendulum,
            cart_pendulum: CartPendulumParams::default(),
            tiptoebot: TiptoebotParams::default(),
            tol_reg: icpm::vhc::DEFAULT_TOL_REG,
            orbit: None,
            section: SectionSpec::new(0.0),
            impulse: ImpulseMode::Jump,
            feedback: true,
            lqr: LqrWeights::default(),
            design: DesignSettings::default(),
            integrator: SimOptions::default(),
            t_end: 60.0,
            sample_dt: 0.01,
            initial: InitialCondition::FixedPoint,
            gain: None,
            design_report: None,
            portrait: PortraitGrid::default(),
            distance_samples: 2000,
            converge_tol: 0.05,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Defaults for `model`.
    pub fn for_model(model: ModelName) -> Self {
        Self { model, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Orbit anchor used when none is configured.
    pub fn orbit_or_default(&self) -> OrbitChoice {
        self.orbit.unwrap_or(match self.model {
            ModelName::CartPendulum => OrbitChoice::Anchor { q2: 0.0, q2_dot: 0.45 },
            ModelName::Tiptoebot => OrbitChoice::Anchor { q2: 0.0, q2_dot: 3.0 },
        })
    }

    /// Number of actuated joints of the selected model.
    pub fn actuated(&self) -> usize {
        match self.model {
            ModelName::CartPendulum => 1,
            ModelName::Tiptoebot => 2,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.integrator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        positive("tol_reg", self.tol_reg)?;
        positive("t_end", self.t_end)?;
        positive("sample_dt", self.sample_dt)?;
        positive("converge_tol", self.converge_tol)?;
        positive("design.eps1", self.design.eps1)?;
        positive("design.eps2", self.design.eps2)?;
        positive("design.quad_tol", self.design.quad_tol)?;
        positive("design.map_t_max", self.design.map_t_max)?;
        positive("design.tol_rank", self.design.tol_rank)?;
        if !self.section.q2_star.is_finite() {
            return Err(CliError::Config("section.q2_star must be finite".into()));
        }
        if self.distance_samples < 8 {
            return Err(CliError::Config("distance_samples must be at least 8".into()));
        }
        match self.orbit {
            Some(OrbitChoice::Anchor { q2, q2_dot }) if !(q2.is_finite() && q2_dot.is_finite()) => {
                return Err(CliError::Config("orbit anchor must be finite".into()));
            }
            Some(OrbitChoice::Energy { c_d }) if !c_d.is_finite() => {
                return Err(CliError::Config("orbit energy must be finite".into()));
            }
            _ => {}
        }
        let k = self.actuated();
        if let ImpulseMode::HighGain(hg) = &self.impulse {
            hg.validate(k).map_err(|e| CliError::Config(e.to_string()))?;
        }
        let n = k + 1;
        match &self.initial {
            InitialCondition::State { values } if values.len() != 2 * n => {
                return Err(CliError::Config(format!("initial state needs {} values, got {}", 2 * n, values.len())));
            }
            InitialCondition::Section { values } if values.len() != 2 * k + 1 => {
                return Err(CliError::Config(format!(
                    "initial section state needs {} values, got {}",
                    2 * k + 1,
                    values.len()
                )));
            }
            InitialCondition::State { values } | InitialCondition::Section { values }
                if values.iter().any(|v| !v.is_finite()) =>
            {
                return Err(CliError::Config("initial condition must be finite".into()));
            }
            _ => {}
        }
        let m = 2 * k + 1;
        check_square("lqr.q", self.lqr.q.as_ref(), m)?;
        check_square("lqr.r", self.lqr.r.as_ref(), k)?;
        if let Some(g) = &self.gain {
            if g.k.len() != k || g.k.iter().any(|row| row.len() != m) || g.z_star.len() != m {
                return Err(CliError::Config(format!("inline gain must be {k}x{m} with a z_star of length {m}")));
            }
        }
        for r in [self.portrait.q2_range, self.portrait.q2_dot_range].into_iter().flatten() {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(CliError::Config(format!("portrait range {r:?} must be finite and ordered")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: PathBuf::new(), ..self.clone() };
        let text = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_square(name: &str, m: Option<&Vec<Vec<f64>>>, n: usize) -> Result<(), CliError> {
    if let Some(rows) = m {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(CliError::Config(format!("{name} must be {n}x{n}")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CliError::Config(format!("{name} must be finite")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"modle": "tiptoebot"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"design": {"eps": 1e-5}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"impulse": {"mode": "high-gain", "lambda": [1], "mu": 1, "x": 0}}"#).is_err());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"model": "tiptoebot",
                "orbit": {"kind": "anchor", "q2": 0, "q2_dot": 3},
                "impulse": {"mode": "high-gain", "lambda": [1, 1], "mu": 1e-4},
                "initial": {"kind": "state", "values": [0.2, 0.05, -0.1, -6.0, 0.4, 3.3]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model, ModelName::Tiptoebot);
        assert!(matches!(cfg.impulse, ImpulseMode::HighGain(ref hg) if hg.eps3 == 1e-4));
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"integrator": {"tolerances": {"rtol": 0, "atol": 1e-12}}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"t_end": -1}"#).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"initial": {"kind": "section", "values": [0, 0]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"lqr": {"r": [[1, 0], [0, 1]]}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
