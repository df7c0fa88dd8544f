//! Command-line front end for the sticky-boundary evolution library.
//!
//! Every subcommand reads its inputs from JSON files, writes results to
//! stdout or a file, and maps failures onto stable exit codes:
//!
//! * `0` success
//! * `1` argument parsing failed (unknown subcommand, bad flags)
//! * `2` invalid input (malformed JSON, rejected configuration)
//! * `3` a numerical procedure failed to converge or produced a
//!   non-finite value

#![forbid(unsafe_code)]

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gatedflow::flow::{flow_map, VelocityField};
use gatedflow::limit::{solve_limit, LimitConfig};
use gatedflow::measures::AtomicMeasure;
use gatedflow::regularized::{
    solve_closed_form, solve_picard, AbsorptionParams, MeasureTrajectory, RegularizedConfig,
    Regularizer,
};
use gatedflow::stochastic::{simulate, InitialDistribution};
use gatedflow::study::{convergence_study, StudyConfig};

#[derive(Parser)]
#[command(
    name = "gatedflow",
    version,
    about = "Measure-valued transport on [0,1] with a sticky, partially absorbing boundary"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the total-variation and dual bounded-Lipschitz norms of a measure.
    Norm {
        /// JSON file holding `{"atoms": [{"x": .., "w": ..}, ..]}`.
        #[arg(long)]
        measure: PathBuf,
    },
    /// Evaluate the boundary-capped flow map at one starting point.
    Flow {
        /// JSON file holding `{"kind": .., "coeffs": [..]}`.
        #[arg(long)]
        velocity: PathBuf,
        /// Starting position in [0,1].
        #[arg(long)]
        x0: f64,
        /// Elapsed time.
        #[arg(long)]
        t: f64,
    },
    /// Solve the boundary-layer regularized evolution; emits the trajectory CSV.
    SolveRegularized {
        #[arg(long)]
        velocity: PathBuf,
        /// Initial measure JSON file.
        #[arg(long)]
        measure: PathBuf,
        /// JSON file holding `{"n", "a", "T", "dt", "tol", "max_iter"}`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Picard)]
        method: Method,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve the exact sticky-boundary limit; emits the trajectory CSV.
    SolveLimit {
        #[arg(long)]
        velocity: PathBuf,
        #[arg(long)]
        measure: PathBuf,
        /// JSON file holding `{"a", "T", "dt"}`.
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the particle simulation and print its JSON report.
    Simulate {
        /// JSON file holding `{"velocity": .., "a": .., "initial": ..}`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        particles: usize,
        #[arg(long)]
        seed: u64,
        /// Comma-separated evaluation times.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        times: Vec<f64>,
    },
    /// Run the convergence study and write its rate CSV.
    Convergence {
        /// Study configuration JSON file.
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Fixed-point iteration of the integral equation.
    Picard,
    /// Per-atom exposure integrals via adaptive quadrature.
    ClosedForm,
}

/// Runs the CLI against the given argument list (the program name must be
/// the first item) and returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &gatedflow::Error) -> i32 {
    use gatedflow::Error;
    match err {
        Error::IterationLimit { .. }
        | Error::LpUnbounded
        | Error::LpIterationLimit { .. }
        | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

#[derive(Serialize)]
struct NormOutput {
    tv: f64,
    dual_bl: f64,
}

#[derive(Serialize)]
struct FlowOutput {
    position: f64,
    hit_boundary: bool,
    /// Absent (null) when the trajectory never reaches the boundary.
    hitting_time: Option<f64>,
    interior_time: f64,
}

#[derive(Deserialize)]
struct SimulateConfig {
    velocity: VelocityField,
    a: f64,
    initial: InitialDistribution,
}

#[derive(Serialize)]
struct ConvergenceOutput {
    output: String,
    ns: Vec<u32>,
    eval_times: Vec<f64>,
    slopes: Vec<Option<f64>>,
    rate_asserted: bool,
}

fn run(command: Command) -> gatedflow::Result<()> {
    match command {
        Command::Norm { measure } => {
            let m = AtomicMeasure::from_json_str(&fs::read_to_string(measure)?)?;
            let out = NormOutput {
                tv: m.tv_norm(),
                dual_bl: m.dual_bl_norm()?,
            };
            println!("{}", serde_json::to_string(&out)?);
            Ok(())
        }
        Command::Flow { velocity, x0, t } => {
            let v = VelocityField::from_json_str(&fs::read_to_string(velocity)?)?;
            let result = flow_map(&v, x0, t)?;
            let out = FlowOutput {
                position: result.position,
                hit_boundary: result.hit_boundary,
                hitting_time: result.hitting_time.is_finite().then_some(result.hitting_time),
                interior_time: result.interior_time,
            };
            println!("{}", serde_json::to_string(&out)?);
            Ok(())
        }
        Command::SolveRegularized {
            velocity,
            measure,
            config,
            method,
            output,
        } => {
            let v = VelocityField::from_json_str(&fs::read_to_string(velocity)?)?;
            let mu0 = AtomicMeasure::from_json_str(&fs::read_to_string(measure)?)?;
            let cfg: RegularizedConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
            let f = Regularizer::new(cfg.n)?;
            let a = AbsorptionParams::new(cfg.a)?;
            let trajectory = match method {
                Method::Picard => solve_picard(
                    &v,
                    f.profile(),
                    &a,
                    &mu0,
                    cfg.t_final,
                    cfg.dt,
                    cfg.tol,
                    cfg.max_iter,
                )?,
                Method::ClosedForm => {
                    solve_closed_form(&v, f.profile(), &a, &mu0, cfg.t_final, cfg.dt)?
                }
            };
            write_trajectory_csv(&trajectory, output.as_deref())
        }
        Command::SolveLimit {
            velocity,
            measure,
            config,
            output,
        } => {
            let v = VelocityField::from_json_str(&fs::read_to_string(velocity)?)?;
            let mu0 = AtomicMeasure::from_json_str(&fs::read_to_string(measure)?)?;
            let cfg: LimitConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
            let a = AbsorptionParams::new(cfg.a)?;
            let sol = solve_limit(&v, &a, &mu0, cfg.t_final, cfg.dt)?;
            match output {
                Some(path) => {
                    let mut file = fs::File::create(path)?;
                    sol.write_csv(&mut file)
                }
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    sol.write_csv(&mut lock)
                }
            }
        }
        Command::Simulate {
            config,
            particles,
            seed,
            times,
        } => {
            let cfg: SimulateConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
            let a = AbsorptionParams::new(cfg.a)?;
            let report = simulate(&cfg.velocity, &a, &cfg.initial, particles, seed, &times)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Convergence { config } => {
            let cfg: StudyConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
            let report = convergence_study(&cfg)?;
            let path = cfg.output_path.clone().unwrap_or_else(|| "rate.csv".to_string());
            let mut file = fs::File::create(&path)?;
            report.write_csv(&mut file)?;
            file.flush()?;
            let summary = ConvergenceOutput {
                output: path,
                ns: report.ns.clone(),
                eval_times: report.eval_times.clone(),
                slopes: report.slopes.clone(),
                rate_asserted: report.rate_asserted,
            };
            println!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
    }
}

fn write_trajectory_csv(
    trajectory: &MeasureTrajectory,
    output: Option<&Path>,
) -> gatedflow::Result<()> {
    match output {
        Some(path) => {
            let mut file = fs::File::create(path)?;
            trajectory.write_csv(&mut file)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            trajectory.write_csv(&mut lock)
        }
    }
}
