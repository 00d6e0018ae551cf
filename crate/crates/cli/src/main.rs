use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rccm::certificate::{train, verify, write_log, Mode, SamplingBoxes, TrainConfig};
use rccm::nn::weights;
use rccm::planner::{consistency_residuals, nominal_trajectory, spiral_reference, write_trajectory_csv, TimeGrid};
use rccm::simulator::{run_case, tube_metrics, write_trace_csv, Case, SimConfig, W_BAR};
use rccm::system::Quadrotor;
use rccm::Execution;

mod manifest;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "rccm", version, about = "Train, verify and simulate learned robust contraction controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run data-parallel work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a certificate and write weights, training log and manifest.
    Train {
        /// Training config (JSON); defaults are used when omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the certificate conditions on fresh samples.
    Verify {
        weights: PathBuf,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest per-condition violation fraction that still passes.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long, default_value = "rccm")]
        mode: Mode,
        /// Training config whose sampling boxes are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one closed-loop case along the spiral reference.
    Simulate {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        case: Case,
        /// Simulation config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the spiral nominal trajectory with its consistency residuals.
    Plan {
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 20.0)]
        t1: f64,
        #[arg(long, default_value_t = 0.002)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failed command with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<rccm::Error> for Failure {
    fn from(e: rccm::Error) -> Self {
        use rccm::Error as E;
        let code = match e {
            E::NonFiniteLoss { .. }
            | E::NonFiniteControl { .. }
            | E::ThrustSingularity(_)
            | E::FreeFallSingularity(_)
            | E::DegenerateRotation
            | E::NotRotation { .. } => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::usage(e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn out_dir(out: Option<PathBuf>, command: &str, seed: u64) -> Result<PathBuf, Failure> {
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{command}-{seed}")));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_train(config: Option<PathBuf>, mode: Option<Mode>, seed: Option<u64>, out: Option<PathBuf>, exec: Execution) -> CmdResult {
    let mut cfg: TrainConfig = match &config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dir = out_dir(out, "train", cfg.seed)?;
    let mut manifest = Manifest::new("train", config.as_deref(), cfg.seed, &dir);
    let model = Quadrotor::default();
    let outcome = train(&model, &cfg, exec, |r| {
        eprintln!("epoch {:>3}  loss {:.6}  alpha {:.4}  mu {:.4}", r.epoch, r.mean_loss, r.alpha, r.mu);
    })?;
    let weights_path = dir.join("weights.json");
    weights::save(&outcome.cert, &weights_path)?;
    let log_path = dir.join("train_log.csv");
    write_log(&log_path, &outcome.log)?;
    let config_path = dir.join("config.json");
    write_pretty(&config_path, &cfg)?;
    manifest.artifacts(&[&weights_path, &log_path, &config_path])?;
    manifest.write()?;
    if let Some(last) = outcome.log.last() {
        eprintln!("alpha = {:.6}", last.alpha);
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    weights_path: PathBuf,
    n: usize,
    seed: u64,
    threshold: f64,
    mode: Mode,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    exec: Execution,
) -> CmdResult {
    if n == 0 {
        return Err(Failure::usage("--n must be positive"));
    }
    let boxes: SamplingBoxes = match &config {
        Some(p) => read_json::<TrainConfig>(p)?.sampling,
        None => SamplingBoxes::default(),
    };
    boxes.validate()?;
    let cert = weights::load(&weights_path)?;
    let dir = out_dir(out, "verify", seed)?;
    let mut manifest = Manifest::new("verify", config.as_deref(), seed, &dir);
    let report = verify(&Quadrotor::default(), &cert, &boxes, n, seed, mode, exec)?;
    let report_path = dir.join("verify_report.json");
    write_pretty(&report_path, &report)?;
    manifest.inputs(&[&weights_path])?;
    manifest.artifacts(&[&report_path])?;
    manifest.write()?;
    let fraction = report.max_violation_fraction();
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("max violation fraction {fraction:.4} (threshold {threshold})");
    Ok(if fraction <= threshold { 0 } else { 1 })
}

fn cmd_simulate(
    weights_path: Option<PathBuf>,
    case: Case,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CmdResult {
    let mut cfg: SimConfig = match &config {
        Some(p) => read_json(p)?,
        None => SimConfig::default(),
    };
    cfg.case = case;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = weights_path {
        cfg.weights = Some(w);
    }
    cfg.validate()?;
    let cert = match (&cfg.weights, case.needs_weights()) {
        (Some(p), _) => Some(weights::load(p)?),
        (None, true) => return Err(Failure::usage(format!("case {} needs --weights", case.name()))),
        (None, false) => None,
    };
    let dir = out_dir(out, "simulate", cfg.seed)?;
    let mut manifest = Manifest::new("simulate", config.as_deref(), cfg.seed, &dir);
    let model = Quadrotor::default();
    let trace = run_case(&model, cert.as_ref(), &cfg)?;
    let alpha = cert.as_ref().map_or(f64::NAN, |c| c.alpha());
    let summary = tube_metrics(&trace, alpha, W_BAR, cfg.transient)?;
    let trace_path = dir.join(format!("trace_{}.csv", case.name()));
    write_trace_csv(&trace_path, &trace, model.mass)?;
    let summary_path = dir.join(format!("summary_{}.json", case.name()));
    write_pretty(&summary_path, &summary)?;
    if let Some(w) = &cfg.weights {
        manifest.inputs(&[w])?;
    }
    manifest.artifacts(&[&trace_path, &summary_path])?;
    manifest.write()?;
    Ok(0)
}

fn cmd_plan(t0: f64, t1: f64, dt: f64, seed: u64, out: Option<PathBuf>) -> CmdResult {
    let grid = TimeGrid::span(t0, t1, dt)?;
    if grid.n < 5 {
        return Err(Failure::usage("the grid needs at least five points"));
    }
    let model = Quadrotor::default();
    let points = nominal_trajectory(&model, spiral_reference, &grid, None, None)?;
    let residuals = consistency_residuals(&model, &points, grid.dt)?;
    let dir = out_dir(out, "plan", seed)?;
    let mut manifest = Manifest::new("plan", None, seed, &dir);
    let path = dir.join("trajectory.csv");
    write_trajectory_csv(&path, &grid, &points, Some(&residuals))?;
    manifest.artifacts(&[&path])?;
    manifest.write()?;
    eprintln!("max residual {:e}", residuals.iter().cloned().fold(0.0, f64::max));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let result = match cli.command {
        Command::Train { config, mode, seed, out } => cmd_train(config, mode, seed, out, exec),
        Command::Verify { weights, n, seed, threshold, mode, config, out } => {
            cmd_verify(weights, n, seed, threshold, mode, config, out, exec)
        }
        Command::Simulate { weights, case, config, seed, out } => cmd_simulate(weights, case, config, seed, out),
        Command::Plan { t0, t1, dt, seed, out } => cmd_plan(t0, t1, dt, seed, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
