//! Independent replay of a finished run: load the manifest, re-check
//! every artifact's integrity, rebuild the problem from the embedded
//! config, re-run the state equation from scratch and re-verify the
//! claims (terminal residual, norm bound, reproducibility). One
//! PASS/FAIL line per claim.

use std::fs;
use std::path::Path;

use heatctl::error::{Error, Result};
use heatctl::export;
use heatctl::mesh::lq_norm;
use heatctl::observability::evaluate_ratio;
use heatctl::pde::solve_semilinear;
use heatctl::{ControlSignal, PotentialField, SourceField, TimeSet};

use crate::config::{self, ExperimentConfig, TaskConfig};
use crate::manifest::RunManifest;
use crate::run;

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, claim: &str, ok: bool, detail: String) {
        if ok {
            println!("PASS  {claim}");
        } else {
            self.failures += 1;
            println!("FAIL  {claim}: {detail}");
        }
    }
}

/// Verify a run manifest. Returns whether every claim passed.
pub fn verify(manifest_path: &Path) -> Result<bool> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedArtifact {
            path: manifest_path.display().to_string(),
            reason: format!("manifest does not parse: {e}"),
        })?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut report = Report { failures: 0 };

    // the embedded config must still validate
    let cfg = match config::parse_config(&manifest.config_text, &manifest.task) {
        Ok(c) => {
            report.check("config echo validates", true, String::new());
            Some(c)
        }
        Err(e) => {
            report.check("config echo validates", false, e.to_string());
            None
        }
    };

    // artifact integrity: existence, non-emptiness, shape
    for entry in &manifest.artifacts {
        let path = dir.join(&entry.name);
        let claim = format!("artifact {} integrity", entry.name);
        if !path.is_file() {
            report.check(&claim, false, "file missing".into());
            continue;
        }
        let size = fs::metadata(&path)?.len();
        if size == 0 {
            report.check(&claim, false, "file empty".into());
            continue;
        }
        let outcome: std::result::Result<(), String> = match entry.kind.as_str() {
            "trajectory-csv" | "control-csv" => export::read_field_csv(&path)
                .map_err(|e| e.to_string())
                .and_then(|d| {
                    let rows = (d.times.len() * d.coords.len()) as u64;
                    if rows == entry.rows {
                        Ok(())
                    } else {
                        Err(format!("expected {} rows, found {rows}", entry.rows))
                    }
                }),
            "norms-csv" | "curve-csv" | "saturation-csv" | "field-csv" | "observability-csv"
            | "scaling-csv" => count_csv_rows(&path).and_then(|rows| {
                if rows == entry.rows {
                    Ok(())
                } else {
                    Err(format!("expected {} rows, found {rows}", entry.rows))
                }
            }),
            "summary-json" => fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| {
                    serde_json::from_str::<serde_json::Value>(&t)
                        .map(|_| ())
                        .map_err(|e| format!("does not parse as JSON: {e}"))
                }),
            "trajectory-bin" => {
                if size == entry.rows {
                    export::read_trajectory_bin(&path)
                        .map(|_| ())
                        .map_err(|e| e.to_string())
                } else {
                    Err(format!("expected {} bytes, found {size}", entry.rows))
                }
            }
            other => Err(format!("unknown artifact kind {other:?}")),
        };
        match outcome {
            Ok(()) => report.check(&claim, true, String::new()),
            Err(detail) => report.check(&claim, false, detail),
        }
    }

    let Some(cfg) = cfg else {
        return Ok(report.failures == 0);
    };

    if let Err(e) = semantic_checks(&cfg, &manifest, &dir, &mut report) {
        report.check("semantic replay completed", false, e.to_string());
    }

    if report.failures == 0 {
        println!("verify: all claims PASS");
    } else {
        println!("verify: {} claim(s) FAILED", report.failures);
    }
    Ok(report.failures == 0)
}

fn count_csv_rows(path: &Path) -> std::result::Result<u64, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let _header = lines.next().ok_or("missing header")?;
    Ok(lines.filter(|l| !l.trim().is_empty()).count() as u64)
}

fn summary_value(dir: &Path, key: &str) -> std::result::Result<serde_json::Value, String> {
    let text = fs::read_to_string(dir.join("summary.json")).map_err(|e| e.to_string())?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("summary does not parse: {e}"))?;
    value
        .get(key)
        .cloned()
        .ok_or_else(|| format!("summary lacks key {key:?}"))
}

fn summary_f64(dir: &Path, key: &str) -> std::result::Result<f64, String> {
    summary_value(dir, key)?
        .as_f64()
        .ok_or_else(|| format!("summary key {key:?} is not a number"))
}

fn load_control(
    cfg: &ExperimentConfig,
    grid: &heatctl::Grid1D,
    path: &Path,
) -> Result<ControlSignal> {
    let data = export::read_control_csv(path)?;
    if data.grid.n_interior() != grid.n_interior() {
        return Err(Error::InvalidParameter(
            "control grid does not match the config grid".into(),
        ));
    }
    let omega = run::build_omega(cfg, grid)?;
    ControlSignal::try_new(
        grid.clone(),
        data.tgrid.clone(),
        omega,
        TimeSet::full(&data.tgrid),
        data.values,
        cfg.problem.bound_m,
        cfg.problem.q,
    )
}

fn semantic_checks(
    cfg: &ExperimentConfig,
    manifest: &RunManifest,
    dir: &Path,
    report: &mut Report,
) -> Result<()> {
    let grid = run::build_grid(cfg)?;
    let f = run::build_nonlinearity(cfg)?;

    match &cfg.task {
        TaskConfig::Simulate { t } => {
            let tgrid = run::build_tgrid(cfg, *t)?;
            let y0 = run::build_initial_state(cfg, &grid)?;
            let fresh = solve_semilinear(&grid, &tgrid, &f, &SourceField::Zero, &y0)?;
            let stored =
                export::trajectory_from_csv(&export::read_field_csv(&dir.join("trajectory.csv"))?)?;
            let mut max_diff = 0.0f64;
            if stored.tgrid().n_steps() == tgrid.n_steps() {
                for k in 0..=tgrid.n_steps() {
                    for i in 0..grid.n_interior() {
                        max_diff =
                            max_diff.max((stored.snapshot(k)[i] - fresh.snapshot(k)[i]).abs());
                    }
                }
            } else {
                max_diff = f64::INFINITY;
            }
            report.check(
                "trajectory reproduces from scratch",
                max_diff == 0.0,
                format!("max deviation {max_diff:.3e}"),
            );
        }

        TaskConfig::NullControl { tol, .. } => {
            let u = load_control(cfg, &grid, &dir.join("control.csv"))?;
            let y0 = run::build_initial_state(cfg, &grid)?;
            let initial_l2 = lq_norm(&grid, &y0, 2.0);
            let terminal = run::replay_terminal(cfg, &grid, &f, &u)?;
            report.check(
                "terminal residual within tolerance",
                terminal <= tol * initial_l2 * (1.0 + 1e-9),
                format!("replayed {terminal:.3e} vs {:.3e}", tol * initial_l2),
            );
            match summary_f64(dir, "min_norm") {
                Ok(min_norm) => {
                    let max = u.max_step_norm();
                    report.check(
                        "per-step norms within claimed bound",
                        max <= min_norm * (1.0 + 1e-6),
                        format!("max step norm {max:.6e} vs claimed {min_norm:.6e}"),
                    );
                }
                Err(e) => report.check("per-step norms within claimed bound", false, e),
            }
            match summary_f64(dir, "terminal_residual") {
                Ok(claimed) => report.check(
                    "claimed residual matches replay",
                    (claimed - terminal).abs() <= 1e-9 * (1.0 + claimed.abs()),
                    format!("claimed {claimed:.6e}, replay {terminal:.6e}"),
                ),
                Err(e) => report.check("claimed residual matches replay", false, e),
            }
        }

        TaskConfig::TimeOptimal { tol, .. } => {
            let u = load_control(cfg, &grid, &dir.join("control.csv"))?;
            let terminal = run::replay_terminal(cfg, &grid, &f, &u)?;
            report.check(
                "terminal residual within tolerance",
                terminal <= *tol * (1.0 + 1e-9),
                format!("replayed {terminal:.3e} vs {tol:.3e}"),
            );
            let max = u.max_step_norm();
            report.check(
                "per-step norms within the budget",
                max <= cfg.problem.bound_m * (1.0 + 1e-9),
                format!("max step norm {max:.6e} vs M {:.6e}", cfg.problem.bound_m),
            );
            match summary_f64(dir, "t_star") {
                Ok(t_star) => report.check(
                    "control horizon matches the claimed optimal time",
                    (u.tgrid().t_final() - t_star).abs() <= 1e-9 * (1.0 + t_star),
                    format!("horizon {} vs t_star {t_star}", u.tgrid().t_final()),
                ),
                Err(e) => {
                    report.check("control horizon matches the claimed optimal time", false, e)
                }
            }
        }

        TaskConfig::Improve { tol, .. } => {
            let outcome = summary_value(dir, "outcome")
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            if outcome == "improved" {
                let u = load_control(cfg, &grid, &dir.join("improved_control.csv"))?;
                let terminal = run::replay_terminal(cfg, &grid, &f, &u)?;
                report.check(
                    "improved control reaches tolerance",
                    terminal <= *tol * (1.0 + 1e-9),
                    format!("replayed {terminal:.3e} vs {tol:.3e}"),
                );
                report.check(
                    "improved control stays within the budget",
                    u.is_admissible(),
                    format!(
                        "max step norm {:.6e} vs M {:.6e}",
                        u.max_step_norm(),
                        cfg.problem.bound_m
                    ),
                );
                match (summary_f64(dir, "t_new"), summary_f64(dir, "original_time")) {
                    (Ok(t_new), Ok(orig)) => report.check(
                        "horizon strictly improved",
                        t_new < orig,
                        format!("t_new {t_new} vs original {orig}"),
                    ),
                    _ => report.check(
                        "horizon strictly improved",
                        false,
                        "summary lacks times".into(),
                    ),
                }
            } else {
                report.check(
                    "improvement outcome recorded",
                    !outcome.is_empty(),
                    "summary lacks outcome".into(),
                );
            }
        }

        TaskConfig::Observability {
            t, e, potential, ..
        } => {
            let tgrid = run::build_tgrid(cfg, *t)?;
            let e_set = TimeSet::new(&tgrid, e)?;
            let omega = run::build_omega(cfg, &grid)?;
            let a = PotentialField::constant(*potential)?;
            let maximizer = export::read_field_values_csv(&dir.join("maximizer.csv"))?;
            if maximizer.len() != grid.n_interior() {
                report.check(
                    "maximizer reproduces the estimate",
                    false,
                    "maximizer length mismatch".into(),
                );
            } else {
                let ratio = evaluate_ratio(&grid, &tgrid, &a, &omega, &e_set, &maximizer)?;
                match summary_f64(dir, "c_hat") {
                    Ok(c_hat) => report.check(
                        "maximizer reproduces the estimate",
                        (ratio - c_hat).abs() <= 1e-8 * c_hat.max(1.0),
                        format!("re-evaluated {ratio:.9e} vs claimed {c_hat:.9e}"),
                    ),
                    Err(e) => report.check("maximizer reproduces the estimate", false, e),
                }
            }
        }

        TaskConfig::ScalingStudy { .. } => {
            match (
                summary_f64(dir, "alpha"),
                summary_f64(dir, "beta"),
                summary_f64(dir, "envelope_shift"),
            ) {
                (Ok(alpha), Ok(beta), Ok(shift)) => {
                    let text = fs::read_to_string(dir.join("scaling.csv"))?;
                    let mut ok = true;
                    let mut detail = String::new();
                    for line in text.lines().skip(1) {
                        if line.trim().is_empty() {
                            continue;
                        }
                        let cols: Vec<&str> = line.split(',').collect();
                        if cols.len() != 6 || cols[2].is_empty() {
                            continue;
                        }
                        let log_c: f64 = cols[2].parse().unwrap_or(f64::NAN);
                        let fit_x: f64 = cols[3].parse().unwrap_or(f64::NAN);
                        let envelope = alpha + beta * fit_x + shift + 1.1f64.ln();
                        if !(log_c <= envelope) {
                            ok = false;
                            detail = format!("row at x = {fit_x} exceeds the envelope");
                            break;
                        }
                    }
                    report.check("all magnitudes below the fitted envelope x1.1", ok, detail);
                }
                _ => report.check(
                    "all magnitudes below the fitted envelope x1.1",
                    false,
                    "summary lacks fit parameters".into(),
                ),
            }
        }
    }

    let _ = manifest;
    Ok(())
}
