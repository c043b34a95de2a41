//! Batch front end for the heat-equation control laboratory.
//!
//! One subcommand per task, all driven by a config file; command-line
//! flags only override config keys. Exit codes: 0 success, 2 config
//! error, 3 solver non-convergence, 4 infeasible request, 5 blow-up
//! guard, 1 anything else.

// negated comparisons like `!(x > 0)` are load-bearing: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod manifest;
mod run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heatctl::error::Error;

#[derive(Parser)]
#[command(
    name = "heatctl",
    version,
    about = "Time-optimal control experiments for the 1D semilinear heat equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file
    config: PathBuf,
    /// Override a config key, e.g. --set problem.n=49 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set output.directory=DIR
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Free evolution of the state equation (no control)
    Simulate(RunArgs),
    /// Steer the initial state to zero at a fixed horizon
    NullControl(RunArgs),
    /// Bisection for the optimal steering time under a norm budget
    TimeOptimal(RunArgs),
    /// Try to shorten the horizon of an exported control
    Improve(RunArgs),
    /// Estimate the observability constant
    Observability(RunArgs),
    /// Sweep the observability constant over potential magnitudes
    ScalingStudy(RunArgs),
    /// Replay a finished run and re-check its claims
    Verify {
        /// Path to a run's manifest.json
        manifest: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_BLOWUP: u8 = 5;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::BlowUp { .. } => EXIT_BLOWUP,
        _ => 1,
    }
}

fn run_task(kind: &str, args: &RunArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut raw = match config::RawConfig::parse(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut overridden = text.clone();
    let mut apply = |raw: &mut config::RawConfig, assignment: &str| -> Result<(), String> {
        raw.set(assignment)?;
        overridden.push_str(&format!("\n# override: {assignment}\n"));
        Ok(())
    };
    for assignment in &args.set {
        if let Err(e) = apply(&mut raw, assignment) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if let Some(dir) = &args.out_dir {
        let assignment = format!("output.directory={}", dir.display());
        if let Err(e) = apply(&mut raw, &assignment) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let cfg = match config::validate(&raw, kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    // the manifest echoes the effective config (base + overrides)
    let effective = rebuild_effective_config(&cfg);
    match run::execute(&cfg, &effective) {
        Ok(manifest_path) => {
            println!("wrote {}", manifest_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Serialize the validated config back to the text format, so the
/// manifest echo reflects every applied override.
fn rebuild_effective_config(cfg: &config::ExperimentConfig) -> String {
    use config::{NonlinSpec, TaskConfig, TimeResolution, Y0Spec};
    let mut s = String::new();
    s.push_str(&format!("seed = {}\n", cfg.seed));
    s.push_str(&format!("workers = {}\n\n", cfg.workers));

    s.push_str("[problem]\n");
    s.push_str(&format!("n = {}\n", cfg.problem.n));
    match cfg.problem.resolution {
        TimeResolution::Steps(steps) => s.push_str(&format!("n_steps = {steps}\n")),
        TimeResolution::Dt(dt) => s.push_str(&format!("dt = {dt}\n")),
    }
    match &cfg.problem.nonlinearity {
        NonlinSpec::Zero => s.push_str("nonlinearity = zero\n"),
        NonlinSpec::Cubic => s.push_str("nonlinearity = cubic\n"),
        NonlinSpec::Saturating => s.push_str("nonlinearity = saturating\n"),
        NonlinSpec::OddPower(p) => {
            s.push_str("nonlinearity = odd_power\n");
            s.push_str(&format!("power = {p}\n"));
        }
        NonlinSpec::Table { file, unchecked } => {
            s.push_str("nonlinearity = table\n");
            s.push_str(&format!("table_file = {}\n", file.display()));
            s.push_str(&format!("table_unchecked = {unchecked}\n"));
        }
    }
    match &cfg.problem.y0 {
        Y0Spec::Modes(modes) => {
            let parts: Vec<String> = modes.iter().map(|(k, a)| format!("({k}, {a})")).collect();
            s.push_str(&format!("y0_modes = {}\n", parts.join(", ")));
        }
        Y0Spec::File(f) => s.push_str(&format!("y0_file = {}\n", f.display())),
    }
    s.push_str(&format!(
        "omega = ({}, {})\n",
        cfg.problem.omega.0, cfg.problem.omega.1
    ));
    s.push_str(&format!("q = {}\n", cfg.problem.q));
    s.push_str(&format!("M = {}\n\n", cfg.problem.bound_m));

    s.push_str("[task]\n");
    s.push_str(&format!("kind = {}\n", cfg.task.kind()));
    let tuples = |list: &[(f64, f64)]| -> String {
        list.iter()
            .map(|(a, b)| format!("({a}, {b})"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    match &cfg.task {
        TaskConfig::Simulate { t } => s.push_str(&format!("T = {t}\n")),
        TaskConfig::NullControl {
            t,
            tol,
            e,
            potential,
        } => {
            s.push_str(&format!("T = {t}\ntol = {tol}\nE = {}\n", tuples(e)));
            s.push_str(&format!("a = {potential}\n"));
        }
        TaskConfig::TimeOptimal { tol, tol_t, t_max } => {
            s.push_str(&format!("tol = {tol}\ntol_T = {tol_t}\nt_max = {t_max}\n"));
        }
        TaskConfig::Improve { tol, control_file } => {
            s.push_str(&format!(
                "tol = {tol}\ncontrol_file = {}\n",
                control_file.display()
            ));
        }
        TaskConfig::Observability {
            t,
            e,
            potential,
            n_modes,
            restarts,
        } => {
            s.push_str(&format!(
                "T = {t}\nE = {}\na = {potential}\nn_modes = {n_modes}\nrestarts = {restarts}\n",
                tuples(e)
            ));
        }
        TaskConfig::ScalingStudy {
            t,
            e,
            magnitudes,
            n_modes,
            restarts,
        } => {
            let mags: Vec<String> = magnitudes.iter().map(|m| m.to_string()).collect();
            s.push_str(&format!(
                "T = {t}\nE = {}\na_magnitudes = {}\nn_modes = {n_modes}\nrestarts = {restarts}\n",
                tuples(e),
                mags.join(", ")
            ));
        }
    }
    s.push('\n');

    s.push_str("[output]\n");
    s.push_str(&format!("directory = {}\n", cfg.output.directory.display()));
    let mut formats = vec!["csv", "json"];
    if cfg.output.bin {
        formats.push("bin");
    }
    s.push_str(&format!("formats = {}\n\n", formats.join(", ")));

    s.push_str("[solver]\n");
    s.push_str(&format!("dual_iters = {}\n", cfg.solver.dual_iters));
    s.push_str(&format!("dual_levels = {}\n", cfg.solver.dual_levels));
    s.push_str(&format!("picard_iters = {}\n", cfg.solver.picard_iters));
    s.push_str(&format!(
        "max_ascent_iters = {}\n",
        cfg.solver.max_ascent_iters
    ));
    s
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(args) => run_task("simulate", args),
        Command::NullControl(args) => run_task("null-control", args),
        Command::TimeOptimal(args) => run_task("time-optimal", args),
        Command::Improve(args) => run_task("improve", args),
        Command::Observability(args) => run_task("observability", args),
        Command::ScalingStudy(args) => run_task("scaling-study", args),
        Command::Verify { manifest } => match verify::verify(manifest) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
