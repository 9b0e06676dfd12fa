use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icpm::hybrid::{Direction, HighGain, ImpulseMode};
use icpm::poincare::Differencing;
use icpm_cli::commands::{cmd_design, cmd_phase_portrait, cmd_simulate};
use icpm_cli::config::{InitialCondition, ModelName, OrbitChoice};
use icpm_cli::{verify, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "icpm", version, about = "Impulse-controlled Poincaré map design and simulation")]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed point, linearized map, LQR gain and stability certificate.
    Design(Overrides),
    /// Closed-loop run with trajectory, event and summary outputs.
    Simulate(Overrides),
    /// Energy grid of the zero dynamics with the reduced tables.
    PhasePortrait(Overrides),
    /// Runs the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeFlag {
    Jump,
    HighGain,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionFlag {
    Positive,
    Negative,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, value_enum)]
    model: Option<ModelName>,
    /// Cart-pendulum gravity.
    #[arg(long)]
    g: Option<f64>,
    /// Orbit anchor `q2 q2_dot`.
    #[arg(long, num_args = 2, value_names = ["Q2", "Q2_DOT"], allow_negative_numbers = true)]
    anchor: Option<Vec<f64>>,
    /// Orbit energy level.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "anchor")]
    energy: Option<f64>,
    /// Section angle `q2*`.
    #[arg(long, allow_negative_numbers = true)]
    section: Option<f64>,
    #[arg(long, value_enum)]
    direction: Option<DirectionFlag>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    /// Central instead of forward differences.
    #[arg(long)]
    central: bool,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    sample_dt: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeFlag>,
    /// High-gain time constant.
    #[arg(long)]
    mu: Option<f64>,
    /// High-gain `Λ` diagonal, comma separated.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    eps3: Option<f64>,
    /// Full initial state `[q; q']`, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "initial_section")]
    initial_state: Option<Vec<f64>>,
    /// Initial section state, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    initial_section: Option<Vec<f64>>,
    /// Design report supplying the gain for `simulate`.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Criterion ids to run; all when omitted.
    #[arg(long)]
    only: Vec<String>,
}

fn apply(cfg: &mut ExperimentConfig, o: Overrides) -> Result<(), CliError> {
    if let Some(m) = o.model {
        cfg.model = m;
    }
    if let Some(g) = o.g {
        cfg.cart_pendulum.gravity = g;
    }
    if let Some(a) = o.anchor {
        cfg.orbit = Some(OrbitChoice::Anchor { q2: a[0], q2_dot: a[1] });
    }
    if let Some(c_d) = o.energy {
        cfg.orbit = Some(OrbitChoice::Energy { c_d });
    }
    if let Some(s) = o.section {
        cfg.section.q2_star = s;
    }
    if let Some(d) = o.direction {
        cfg.section.direction = match d {
            DirectionFlag::Positive => Direction::Positive,
            DirectionFlag::Negative => Direction::Negative,
        };
    }
    if let Some(v) = o.eps1 {
        cfg.design.eps1 = v;
    }
    if let Some(v) = o.eps2 {
        cfg.design.eps2 = v;
    }
    if o.central {
        cfg.design.differencing = Differencing::Central;
    }
    if let Some(v) = o.rtol {
        cfg.integrator.tolerances.rtol = v;
    }
    if let Some(v) = o.atol {
        cfg.integrator.tolerances.atol = v;
    }
    if let Some(v) = o.t_end {
        cfg.t_end = v;
    }
    if let Some(v) = o.sample_dt {
        cfg.sample_dt = v;
    }
    if let Some(ModeFlag::Jump) = o.mode {
        cfg.impulse = ImpulseMode::Jump;
    }
    let wants_hg = matches!(o.mode, Some(ModeFlag::HighGain)) || o.mu.is_some() || o.lambda.is_some() || o.eps3.is_some();
    if wants_hg {
        if matches!(o.mode, Some(ModeFlag::Jump)) {
            return Err(CliError::Config("--mu, --lambda and --eps3 require high-gain mode".into()));
        }
        let mut hg = match &cfg.impulse {
            ImpulseMode::HighGain(hg) => hg.clone(),
            ImpulseMode::Jump => {
                let mu = o.mu.ok_or_else(|| CliError::Config("high-gain mode needs --mu".into()))?;
                HighGain::new(vec![1.0; cfg.actuated()], mu)
            }
        };
        if let Some(mu) = o.mu {
            hg.mu = mu;
        }
        if let Some(l) = o.lambda {
            hg.lambda = l;
        }
        if let Some(e) = o.eps3 {
            hg.eps3 = e;
        }
        cfg.impulse = ImpulseMode::HighGain(hg);
    }
    if let Some(values) = o.initial_state {
        cfg.initial = InitialCondition::State { values };
    }
    if let Some(values) = o.initial_section {
        cfg.initial = InitialCondition::Section { values };
    }
    if let Some(p) = o.design {
        cfg.design_report = Some(p);
    }
    if let Some(p) = o.out {
        cfg.output_dir = p;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    cfg.validate()
}

fn load(path: Option<PathBuf>, o: Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::for_model(o.model.unwrap_or(ModelName::CartPendulum)),
    };
    apply(&mut cfg, o)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Design(o) => {
            let cfg = load(cli.config, o)?;
            let r = cmd_design(&cfg)?;
            println!(
                "design written to {}; closed-loop spectral radius {:.6}",
                cfg.output_dir.display(),
                r.spectral_radius_closed_loop
            );
        }
        Command::Simulate(o) => {
            let cfg = load(cli.config, o)?;
            let s = cmd_simulate(&cfg)?;
            println!(
                "simulation written to {}; {} crossings, convergence time {}",
                cfg.output_dir.display(),
                s.crossings.len(),
                s.convergence_time.map_or("none".into(), |t| format!("{t:.3} s"))
            );
        }
        Command::PhasePortrait(o) => {
            let cfg = load(cli.config, o)?;
            cmd_phase_portrait(&cfg)?;
            println!("phase portrait written to {}", cfg.output_dir.display());
        }
        Command::Verify(a) => {
            let ids: Vec<&str> = if a.only.is_empty() {
                verify::CRITERIA.iter().map(|c| c.0).collect()
            } else {
                a.only.iter().map(String::as_str).collect()
            };
            let mut all = true;
            for id in ids {
                let outcome =
                    verify::run(id).ok_or_else(|| CliError::Config(format!("unknown criterion id {id:?}")))?;
                println!("{}", outcome.line());
                all &= outcome.pass;
            }
            return Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            let report = serde_json::json!({
                "error": { "kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() }
            });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
