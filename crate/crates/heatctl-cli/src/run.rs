//! Task dispatch: build the problem objects from a validated config,
//! run the requested pipeline, and write the artifacts.
//!
//! Artifacts are first written with a `.partial` suffix and renamed only
//! when the whole run has succeeded; the manifest is written last. A
//! failed run therefore leaves `.partial` files and no manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use heatctl::control::{DualOptions, PicardOptions};
use heatctl::error::{Error, Result};
use heatctl::export;
use heatctl::mesh::first_eigenvalue;
use heatctl::observability::{estimate_constant, scaling_study, EstimateOptions};
use heatctl::pde::{control_to_state, solve_semilinear, Dynamics};
use heatctl::timeopt::{
    bang_bang_profile, improve_control, optimal_time, ImproveOptions, ImproveOutcome,
    SaturationOptions, TimeOptParams,
};
use heatctl::{
    ControlSignal, Grid1D, Nonlinearity, PotentialField, RegionMask, SourceField, TimeGrid,
    TimeSet, Trajectory,
};

use crate::config::{ExperimentConfig, NonlinSpec, TaskConfig, TimeResolution, Y0Spec};
use crate::manifest::{ArtifactEntry, IterationCount, RunManifest, StageTime};

/// Build the spatial grid from the config.
pub fn build_grid(cfg: &ExperimentConfig) -> Result<Grid1D> {
    Grid1D::new(cfg.problem.n)
}

/// Build the reaction term, loading a table file if needed.
pub fn build_nonlinearity(cfg: &ExperimentConfig) -> Result<Nonlinearity> {
    match &cfg.problem.nonlinearity {
        NonlinSpec::Zero => Ok(Nonlinearity::Zero),
        NonlinSpec::Cubic => Ok(Nonlinearity::Cubic),
        NonlinSpec::Saturating => Ok(Nonlinearity::Saturating),
        NonlinSpec::OddPower(p) => Nonlinearity::odd_power(*p),
        NonlinSpec::Table { file, unchecked } => {
            let points = read_table_file(file)?;
            if *unchecked {
                Nonlinearity::table_unchecked(&points)
            } else {
                Nonlinearity::table(&points)
            }
        }
    }
}

fn read_table_file(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "y,f" => {}
        _ => {
            return Err(Error::MalformedArtifact {
                path: path.display().to_string(),
                reason: "nonlinearity table needs a `y,f` header".into(),
            })
        }
    }
    let mut points = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(y), Some(f), None) => {
                let parse = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::MalformedArtifact {
                            path: path.display().to_string(),
                            reason: format!("bad number {s:?}: {e}"),
                        })
                };
                points.push((parse(y)?, parse(f)?));
            }
            _ => {
                return Err(Error::MalformedArtifact {
                    path: path.display().to_string(),
                    reason: "expected two columns".into(),
                })
            }
        }
    }
    Ok(points)
}

/// Build the initial state on the grid.
pub fn build_initial_state(cfg: &ExperimentConfig, grid: &Grid1D) -> Result<Vec<f64>> {
    match &cfg.problem.y0 {
        Y0Spec::Modes(modes) => {
            let mut y0 = vec![0.0; grid.n_interior()];
            for &(k, amp) in modes {
                for (v, &s) in y0.iter_mut().zip(&grid.sine_mode(k)) {
                    *v += amp * s;
                }
            }
            Ok(y0)
        }
        Y0Spec::File(path) => {
            let values = export::read_field_values_csv(path)?;
            if values.len() != grid.n_interior() {
                return Err(Error::InvalidParameter(format!(
                    "y0 file has {} nodes, the grid has {}",
                    values.len(),
                    grid.n_interior()
                )));
            }
            Ok(values)
        }
    }
}

/// Build the control region mask.
pub fn build_omega(cfg: &ExperimentConfig, grid: &Grid1D) -> Result<RegionMask> {
    RegionMask::new(grid, cfg.problem.omega.0, cfg.problem.omega.1)
}

/// Resolve the time grid for a fixed horizon.
pub fn build_tgrid(cfg: &ExperimentConfig, horizon: f64) -> Result<TimeGrid> {
    match cfg.problem.resolution {
        TimeResolution::Steps(s) => TimeGrid::new(horizon, s),
        TimeResolution::Dt(dt) => {
            let steps = ((horizon / dt).round() as usize).max(1);
            TimeGrid::new(horizon, steps)
        }
    }
}

pub fn dual_options(cfg: &ExperimentConfig, tol_rel: f64) -> DualOptions<f64> {
    DualOptions {
        tol_rel,
        max_levels: cfg.solver.dual_levels,
        iters_per_level: cfg.solver.dual_iters,
        check_every: 10,
    }
}

pub fn picard_options(cfg: &ExperimentConfig, tol_rel: f64) -> PicardOptions<f64> {
    PicardOptions {
        dual: dual_options(cfg, tol_rel),
        max_iterations: cfg.solver.picard_iters,
        divergence_patience: 5,
    }
}

struct Stage {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl Stage {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Stage {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    /// Register an artifact and hand back the `.partial` path to write.
    fn add(&mut self, name: &str, kind: &str, rows: u64) -> PathBuf {
        self.entries.push(ArtifactEntry {
            name: name.to_string(),
            kind: kind.to_string(),
            rows,
        });
        self.dir.join(format!("{name}.partial"))
    }

    /// Rename every artifact to its final name.
    fn commit(self) -> Result<Vec<ArtifactEntry>> {
        for e in &self.entries {
            let partial = self.dir.join(format!("{}.partial", e.name));
            fs::rename(&partial, self.dir.join(&e.name))?;
        }
        Ok(self.entries)
    }
}

/// Run the configured task; returns the manifest path.
pub fn execute(cfg: &ExperimentConfig, config_text: &str) -> Result<PathBuf> {
    let grid = build_grid(cfg)?;
    let f = build_nonlinearity(cfg)?;
    let y0 = build_initial_state(cfg, &grid)?;
    let omega = build_omega(cfg, &grid)?;
    let mut stage = Stage::new(&cfg.output.directory)?;
    let mut times: Vec<StageTime> = Vec::new();
    let mut iterations: Vec<IterationCount> = Vec::new();
    let started = Instant::now();

    match &cfg.task {
        TaskConfig::Simulate { t } => {
            let tgrid = build_tgrid(cfg, *t)?;
            let clock = Instant::now();
            let traj = solve_semilinear(&grid, &tgrid, &f, &SourceField::Zero, &y0)?;
            times.push(StageTime {
                stage: "solve".into(),
                seconds: clock.elapsed().as_secs_f64(),
            });
            write_trajectory(&mut stage, cfg, "trajectory", &traj)?;
            #[derive(Serialize)]
            struct SimulateSummary {
                t_final: f64,
                n: usize,
                n_steps: usize,
                terminal_l2: f64,
                sup_norm: f64,
                first_eigenvalue: f64,
            }
            export::write_json(
                &stage.add("summary.json", "summary-json", 0),
                &SimulateSummary {
                    t_final: tgrid.t_final(),
                    n: grid.n_interior(),
                    n_steps: tgrid.n_steps(),
                    terminal_l2: traj.l2_at(tgrid.n_steps()),
                    sup_norm: traj.sup_norm(),
                    first_eigenvalue: first_eigenvalue(&grid),
                },
            )?;
        }

        TaskConfig::NullControl {
            t,
            tol,
            e,
            potential,
        } => {
            let tgrid = build_tgrid(cfg, *t)?;
            let e_set = TimeSet::new(&tgrid, e)?;
            let clock = Instant::now();
            let cert = if matches!(f, Nonlinearity::Zero) {
                let a = PotentialField::constant(*potential)?;
                heatctl::control::min_norm_control_linear(
                    &grid,
                    &tgrid,
                    &a,
                    &y0,
                    &omega,
                    &e_set,
                    &dual_options(cfg, *tol),
                )?
            } else {
                heatctl::control::semilinear_null_control(
                    &grid,
                    &tgrid,
                    &f,
                    None,
                    &y0,
                    &omega,
                    &e_set,
                    &picard_options(cfg, *tol),
                )?
            };
            times.push(StageTime {
                stage: "steer".into(),
                seconds: clock.elapsed().as_secs_f64(),
            });
            iterations.push(IterationCount {
                what: "steering iterations".into(),
                count: cert.iterations as u64,
            });
            write_control(&mut stage, cfg, "control", &cert.control)?;
            write_trajectory(&mut stage, cfg, "trajectory", &cert.trajectory)?;
            let initial_l2 = heatctl::mesh::lq_norm(&grid, &y0, 2.0);
            export::write_json(
                &stage.add("summary.json", "summary-json", 0),
                &export::CertificateSummary::of(&cert, initial_l2),
            )?;
        }

        TaskConfig::TimeOptimal { tol, tol_t, t_max } => {
            let dt_target = match cfg.problem.resolution {
                TimeResolution::Dt(dt) => dt,
                TimeResolution::Steps(_) => unreachable!("validated"),
            };
            let params = TimeOptParams {
                dt_target,
                tol_t: *tol_t,
                terminal_tol: *tol,
                t_max: *t_max,
                picard: picard_options(cfg, *tol),
            };
            let clock = Instant::now();
            let result = optimal_time(&grid, &f, &y0, cfg.problem.bound_m, &omega, &params)?;
            times.push(StageTime {
                stage: "bisection".into(),
                seconds: clock.elapsed().as_secs_f64(),
            });
            iterations.push(IterationCount {
                what: "norm evaluations".into(),
                count: result.n_curve.len() as u64,
            });
            let report = bang_bang_profile(&result, &SaturationOptions::default());

            export::write_norm_curve_csv(
                &stage.add("n_curve.csv", "curve-csv", result.n_curve.len() as u64),
                &result.n_curve,
            )?;
            export::write_saturation_csv(
                &stage.add(
                    "saturation.csv",
                    "saturation-csv",
                    report.ratios.len() as u64,
                ),
                result.control.tgrid(),
                &report.ratios,
            )?;
            write_control(&mut stage, cfg, "control", &result.control)?;
            write_trajectory(&mut stage, cfg, "trajectory", &result.trajectory)?;
            export::write_json(
                &stage.add("summary.json", "summary-json", 0),
                &export::TimeOptSummary::of(&result, &report),
            )?;
        }

        TaskConfig::Improve { tol, control_file } => {
            let data = export::read_control_csv(control_file)?;
            if data.grid.n_interior() != grid.n_interior() {
                return Err(Error::InvalidParameter(format!(
                    "control file grid has {} nodes, the problem grid has {}",
                    data.grid.n_interior(),
                    grid.n_interior()
                )));
            }
            let u = ControlSignal::try_new(
                grid.clone(),
                data.tgrid.clone(),
                omega.clone(),
                TimeSet::full(&data.tgrid),
                data.values,
                cfg.problem.bound_m,
                cfg.problem.q,
            )?;
            let clock = Instant::now();
            let outcome = improve_control(
                &grid,
                &f,
                &y0,
                &u,
                *tol,
                &ImproveOptions {
                    picard: picard_options(cfg, *tol),
                    ..ImproveOptions::default()
                },
            )?;
            times.push(StageTime {
                stage: "improve".into(),
                seconds: clock.elapsed().as_secs_f64(),
            });

            #[derive(Serialize)]
            struct ImproveSummary {
                outcome: String,
                original_time: f64,
                epsilon0: Option<f64>,
                e_star_measure: Option<f64>,
                delta0: Option<f64>,
                delta: Option<f64>,
                t_new: Option<f64>,
                residual_at_t_new: Option<f64>,
                max_step_norm: Option<f64>,
                max_slack: Option<f64>,
                required_slack: Option<f64>,
            }
            let mut summary = ImproveSummary {
                outcome: String::new(),
                original_time: u.tgrid().t_final(),
                epsilon0: None,
                e_star_measure: None,
                delta0: None,
                delta: None,
                t_new: None,
                residual_at_t_new: None,
                max_step_norm: None,
                max_slack: None,
                required_slack: None,
            };
            match outcome {
                ImproveOutcome::Improved(report) => {
                    summary.outcome = "improved".into();
                    summary.epsilon0 = Some(report.epsilon0);
                    summary.e_star_measure = Some(report.e_star.measure());
                    summary.delta0 = Some(report.delta0);
                    summary.delta = Some(report.delta);
                    summary.t_new = Some(report.t_new);
                    summary.residual_at_t_new = Some(report.residual_at_t_new);
                    summary.max_step_norm = Some(report.max_step_norm);
                    write_control(
                        &mut stage,
                        cfg,
                        "improved_control",
                        &report.improved_control,
                    )?;
                }
                ImproveOutcome::NotImprovable {
                    max_slack,
                    required_slack,
                    ..
                } => {
                    summary.outcome = "not-improvable".into();
                    summary.max_slack = Some(max_slack);
                    summary.required_slack = Some(required_slack);
                }
                ImproveOutcome::AlreadyAtTarget { t_new } => {
                    summary.outcome = "already-at-target".into();
                    summary.t_new = Some(t_new);
                }
            }
            export::write_json(&stage.add("summary.json", "summary-json", 0), &summary)?;
        }

        TaskConfig::Observability {
            t,
            e,
            potential,
            n_modes,
            restarts,
        } => {
            let tgrid = build_tgrid(cfg, *t)?;
            let e_set = TimeSet::new(&tgrid, e)?;
            let a = PotentialField::constant(*potential)?;
            let opts = EstimateOptions {
                n_modes: *n_modes,
                n_restarts: *restarts,
                seed: cfg.seed,
                max_iters: cfg.solver.max_ascent_iters,
                warm_starts: Vec::new(),
            };
            let clock = Instant::now();
            let est = estimate_constant(&grid, &tgrid, &a, &omega, &e_set, &opts)?;
            times.push(StageTime {
                stage: "ascent".into(),
                seconds: clock.elapsed().as_secs_f64(),
            });
            iterations.push(IterationCount {
                what: "ascents".into(),
                count: est.trace.len() as u64,
            });
            export::write_observability_csv(
                &stage.add("observability.csv", "observability-csv", 1),
                &est,
            )?;
            export::write_field_values_csv(
                &stage.add("maximizer.csv", "field-csv", grid.n_interior() as u64),
                &grid,
                &est.maximizer,
            )?;
            #[derive(Serialize)]
            struct ObsSummary {
                c_hat: f64,
                potential_sup: f64,
                t_final: f64,
                e_measure: f64,
                omega_measure: f64,
                n_modes: usize,
                n_restarts: usize,
            }
            export::write_json(
                &stage.add("summary.json", "summary-json", 0),
                &ObsSummary {
                    c_hat: est.c_hat,
                    potential_sup: est.potential_sup,
                    t_final: est.t_final,
                    e_measure: est.e_measure,
                    omega_measure: est.omega_measure,
                    n_modes: est.n_modes,
                    n_restarts: est.n_restarts,
                },
            )?;
        }

        TaskConfig::ScalingStudy {
            t,
            e,
            magnitudes,
            n_modes,
            restarts,
        } => {
            let tgrid = build_tgrid(cfg, *t)?;
            let e_set = TimeSet::new(&tgrid, e)?;
            let opts = EstimateOptions {
                n_modes: *n_modes,
                n_restarts: *restarts,
                seed: cfg.seed,
                max_iters: cfg.solver.max_ascent_iters,
                warm_starts: Vec::new(),
            };
            let clock = Instant::now();
            let study = scaling_study(
                &grid,
                &tgrid,
                magnitudes,
                &omega,
                &e_set,
                &opts,
                cfg.workers,
            )?;
            times.push(StageTime {
                stage: "sweep".into(),
                seconds: clock.elapsed().as_secs_f64(),
            });
            export::write_scaling_csv(
                &stage.add("scaling.csv", "scaling-csv", study.rows.len() as u64),
                &study,
            )?;
            #[derive(Serialize)]
            struct ScalingSummary {
                alpha: f64,
                beta: f64,
                rms_relative_residual: f64,
                envelope_shift: f64,
                all_below_envelope_x1_1: bool,
                flagged_rows: usize,
            }
            export::write_json(
                &stage.add("summary.json", "summary-json", 0),
                &ScalingSummary {
                    alpha: study.alpha,
                    beta: study.beta,
                    rms_relative_residual: study.rms_relative_residual,
                    envelope_shift: study.envelope_shift,
                    all_below_envelope_x1_1: study.all_below_envelope(1.1),
                    flagged_rows: study.rows.iter().filter(|r| r.flagged).count(),
                },
            )?;
        }
    }

    times.push(StageTime {
        stage: "total".into(),
        seconds: started.elapsed().as_secs_f64(),
    });
    let dir = stage.dir.clone();
    let artifacts = stage.commit()?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        task: cfg.task.kind().to_string(),
        seed: cfg.seed,
        config_text: config_text.to_string(),
        artifacts,
        stage_seconds: times,
        iteration_counts: iterations,
    };
    let manifest_path = dir.join("manifest.json");
    export::write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

fn write_trajectory(
    stage: &mut Stage,
    cfg: &ExperimentConfig,
    name: &str,
    traj: &Trajectory,
) -> Result<()> {
    let rows = (traj.tgrid().n_steps() as u64 + 1) * traj.grid().n_interior() as u64;
    export::write_trajectory_csv(
        &stage.add(&format!("{name}.csv"), "trajectory-csv", rows),
        traj,
    )?;
    if cfg.output.bin {
        let bytes = 4 + 4 + 8 + 8 + 8 + rows * 8;
        export::write_trajectory_bin(
            &stage.add(&format!("{name}.bin"), "trajectory-bin", bytes),
            traj,
        )?;
    }
    Ok(())
}

fn write_control(
    stage: &mut Stage,
    _cfg: &ExperimentConfig,
    name: &str,
    control: &ControlSignal,
) -> Result<()> {
    let rows = control.tgrid().n_steps() as u64 * control.grid().n_interior() as u64;
    export::write_control_csv(
        &stage.add(&format!("{name}.csv"), "control-csv", rows),
        control,
    )?;
    export::write_control_norms_csv(
        &stage.add(
            &format!("{name}_norms.csv"),
            "norms-csv",
            control.tgrid().n_steps() as u64,
        ),
        control,
    )?;
    Ok(())
}

/// Replay dynamics for verify: the state equation the config describes.
pub fn replay_dynamics<'a>(f: &'a Nonlinearity) -> Dynamics<'a, f64> {
    Dynamics::Semilinear(f)
}

/// Replay a control from the config's initial state and return the
/// terminal L^2 norm (used by verify).
pub fn replay_terminal(
    cfg: &ExperimentConfig,
    grid: &Grid1D,
    f: &Nonlinearity,
    u: &ControlSignal,
) -> Result<f64> {
    // a constant potential in the null-control task folds into the replay
    let traj = match &cfg.task {
        TaskConfig::NullControl { potential, .. } if *potential != 0.0 => {
            let a = PotentialField::constant(*potential)?;
            let y0 = build_initial_state(cfg, grid)?;
            control_to_state(Dynamics::Linear(&a), &y0, u)?
        }
        _ => {
            let y0 = build_initial_state(cfg, grid)?;
            control_to_state(replay_dynamics(f), &y0, u)?
        }
    };
    Ok(traj.l2_at(traj.tgrid().n_steps()))
}
