//! Artifact export and replay formats.
//!
//! CSVs are RFC-4180-style with a mandatory header row and floats
//! printed with 17 significant digits, enough for exact f64 round-trip.
//! Trajectories also have a binary format with a shape header for exact
//! replay. Everything here works on the concrete `f64` aliases.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::observability::ScalingStudy;
use crate::timeopt::{NormSample, SaturationReport, TimeOptResult};
use crate::{
    ControlSignal, Grid1D, NullControlCertificate, ObservabilityEstimate, TimeGrid, Trajectory,
};

/// 17 significant digits: round-trip exact for f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedArtifact {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn parse_float(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| malformed(path, format!("bad float {s:?}: {e}")))
}

/// Write a space-time field as `t,x,value` rows, t-major.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "t,x,value")?;
    let tgrid = traj.tgrid();
    let xs = traj.grid().node_coords();
    for k in 0..=tgrid.n_steps() {
        let t = fmt_float(tgrid.time(k));
        for (i, &x) in xs.iter().enumerate() {
            writeln!(w, "{t},{},{}", fmt_float(x), fmt_float(traj.snapshot(k)[i]))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parsed shape and values of a `t,x,value` CSV.
#[derive(Debug, Clone)]
pub struct FieldCsv {
    /// Distinct times, in file order.
    pub times: Vec<f64>,
    /// Distinct node coordinates, in file order.
    pub coords: Vec<f64>,
    /// One row per time, one entry per coordinate.
    pub values: Vec<Vec<f64>>,
}

/// Read a `t,x,value` CSV back, checking rectangular shape.
pub fn read_field_csv(path: &Path) -> Result<FieldCsv> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(path, "empty file"))??;
    if header.trim() != "t,x,value" {
        return Err(malformed(path, format!("unexpected header {header:?}")));
    }
    let mut times: Vec<f64> = Vec::new();
    let mut coords: Vec<f64> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut first_block = true;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (t, x, v) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(x), Some(v), None) => (
                parse_float(path, t)?,
                parse_float(path, x)?,
                parse_float(path, v)?,
            ),
            _ => {
                return Err(malformed(
                    path,
                    format!("line {}: expected 3 fields", lineno + 2),
                ))
            }
        };
        if times.last() != Some(&t) {
            times.push(t);
            values.push(Vec::new());
            if !coords.is_empty() {
                first_block = false;
            }
        }
        if first_block {
            coords.push(x);
        } else {
            let col = values.last().unwrap().len();
            if coords.get(col) != Some(&x) {
                return Err(malformed(
                    path,
                    format!("line {}: node coordinate mismatch", lineno + 2),
                ));
            }
        }
        values.last_mut().unwrap().push(v);
    }
    if values.iter().any(|row| row.len() != coords.len()) {
        return Err(malformed(path, "ragged rows: file truncated or corrupt"));
    }
    if times.is_empty() {
        return Err(malformed(path, "no data rows"));
    }
    Ok(FieldCsv {
        times,
        coords,
        values,
    })
}

/// Reassemble a trajectory from a field CSV: times must be the snapshot
/// instants of a uniform grid starting at 0.
pub fn trajectory_from_csv(data: &FieldCsv) -> Result<Trajectory> {
    let n = data.coords.len();
    let grid = Grid1D::new(n)?;
    for (i, (&a, &b)) in data.coords.iter().zip(grid.node_coords()).enumerate() {
        if (a - b).abs() > 1e-9 * grid.spacing() {
            return Err(Error::InvalidParameter(format!(
                "node {i}: coordinate {a} does not sit on the uniform grid"
            )));
        }
    }
    if data.times.len() < 2 {
        return Err(Error::InvalidParameter(
            "trajectory file needs at least two snapshots".into(),
        ));
    }
    let n_steps = data.times.len() - 1;
    let t_final = *data.times.last().unwrap();
    let tgrid = TimeGrid::new(t_final, n_steps)?;
    Trajectory::new(grid, tgrid, data.values.clone())
}

const TRAJ_MAGIC: &[u8; 4] = b"HCTJ";
const TRAJ_VERSION: u32 = 1;

/// Binary trajectory format: magic, version, (n_interior, n_steps, T)
/// header, then the snapshots as little-endian f64. Bit-exact replay.
pub fn write_trajectory_bin(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = open_writer(path)?;
    w.write_all(TRAJ_MAGIC)?;
    w.write_all(&TRAJ_VERSION.to_le_bytes())?;
    w.write_all(&(traj.grid().n_interior() as u64).to_le_bytes())?;
    w.write_all(&(traj.tgrid().n_steps() as u64).to_le_bytes())?;
    w.write_all(&traj.tgrid().t_final().to_le_bytes())?;
    for k in 0..=traj.tgrid().n_steps() {
        for &v in traj.snapshot(k) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read the binary trajectory format back.
pub fn read_trajectory_bin(path: &Path) -> Result<Trajectory> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| malformed(path, "missing magic"))?;
    if &magic != TRAJ_MAGIC {
        return Err(malformed(path, "wrong magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != TRAJ_VERSION {
        return Err(malformed(path, "unsupported version"));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let n_steps = u64::from_le_bytes(u64buf) as usize;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let t_final = f64::from_le_bytes(f64buf);
    let grid = Grid1D::new(n)?;
    let tgrid = TimeGrid::new(t_final, n_steps)?;
    let mut values = Vec::with_capacity(n_steps + 1);
    for _ in 0..=n_steps {
        let mut snap = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut f64buf)
                .map_err(|_| malformed(path, "truncated payload"))?;
            snap.push(f64::from_le_bytes(f64buf));
        }
        values.push(snap);
    }
    Trajectory::new(grid, tgrid, values)
}

/// Write a control as `t,x,value` rows, one block per step (t = step
/// start).
pub fn write_control_csv(path: &Path, control: &ControlSignal) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "t,x,value")?;
    let tgrid = control.tgrid();
    let xs = control.grid().node_coords();
    for k in 0..tgrid.n_steps() {
        let t = fmt_float(tgrid.time(k));
        for (i, &x) in xs.iter().enumerate() {
            writeln!(
                w,
                "{t},{},{}",
                fmt_float(x),
                fmt_float(control.step_values(k)[i])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Shape of a control read back from CSV: per-step values plus the grid
/// pair they imply.
#[derive(Debug, Clone)]
pub struct ControlCsv {
    pub grid: Grid1D,
    pub tgrid: TimeGrid,
    pub values: Vec<Vec<f64>>,
}

/// Read a control CSV: times are step starts 0, dt, ..., (N-1) dt, so
/// the horizon is `last + dt`.
pub fn read_control_csv(path: &Path) -> Result<ControlCsv> {
    let data = read_field_csv(path)?;
    let n = data.coords.len();
    let grid = Grid1D::new(n)?;
    let n_steps = data.times.len();
    if n_steps < 1 {
        return Err(malformed(path, "no control steps"));
    }
    let dt = if n_steps >= 2 {
        data.times[1] - data.times[0]
    } else {
        return Err(malformed(path, "cannot infer dt from a single step"));
    };
    for (k, &t) in data.times.iter().enumerate() {
        if (t - dt * k as f64).abs() > 1e-9 * dt.max(1e-300) {
            return Err(malformed(path, format!("non-uniform step times at {k}")));
        }
    }
    let tgrid = TimeGrid::new(dt * n_steps as f64, n_steps)?;
    Ok(ControlCsv {
        grid,
        tgrid,
        values: data.values,
    })
}

/// Per-step control norms as `t,norm_q`.
pub fn write_control_norms_csv(path: &Path, control: &ControlSignal) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "t,norm_q")?;
    for (k, &nk) in control.step_norms().iter().enumerate() {
        writeln!(
            w,
            "{},{}",
            fmt_float(control.tgrid().time(k)),
            fmt_float(nk)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Minimal-norm curve as `T,N,free_prefix`.
pub fn write_norm_curve_csv(path: &Path, curve: &[NormSample<f64>]) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "T,N,free_prefix")?;
    for s in curve {
        writeln!(
            w,
            "{},{},{}",
            fmt_float(s.horizon),
            fmt_float(s.norm),
            fmt_float(s.free_prefix)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Saturation profile as `t,ratio` (per-step `||u||_q / M`).
pub fn write_saturation_csv(path: &Path, tgrid: &TimeGrid, ratios: &[f64]) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "t,ratio")?;
    for (k, &r) in ratios.iter().enumerate() {
        writeln!(w, "{},{}", fmt_float(tgrid.time(k)), fmt_float(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Spatial field as `x,value`.
pub fn write_field_values_csv(path: &Path, grid: &Grid1D, field: &[f64]) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "x,value")?;
    for (&x, &v) in grid.node_coords().iter().zip(field) {
        writeln!(w, "{},{}", fmt_float(x), fmt_float(v))?;
    }
    w.flush()?;
    Ok(())
}

/// Read an `x,value` CSV.
pub fn read_field_values_csv(path: &Path) -> Result<Vec<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(path, "empty file"))??;
    if header.trim() != "x,value" {
        return Err(malformed(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(_x), Some(v), None) => out.push(parse_float(path, v)?),
            _ => return Err(malformed(path, "expected 2 fields")),
        }
    }
    Ok(out)
}

/// Observability estimate row:
/// `a_sup,T,e_measure,omega_measure,c_hat,n_modes,restarts`.
pub fn write_observability_csv(path: &Path, est: &ObservabilityEstimate) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "a_sup,T,e_measure,omega_measure,c_hat,n_modes,restarts")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        fmt_float(est.potential_sup),
        fmt_float(est.t_final),
        fmt_float(est.e_measure),
        fmt_float(est.omega_measure),
        fmt_float(est.c_hat),
        est.n_modes,
        est.n_restarts
    )?;
    w.flush()?;
    Ok(())
}

/// Scaling sweep rows:
/// `magnitude,c_hat,log_c_hat,fit_x,residual,flagged`.
pub fn write_scaling_csv(path: &Path, study: &ScalingStudy<f64>) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "magnitude,c_hat,log_c_hat,fit_x,residual,flagged")?;
    for row in &study.rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_float(row.magnitude),
            row.c_hat.map_or(String::from(""), fmt_float),
            row.log_c_hat.map_or(String::from(""), fmt_float),
            fmt_float(row.fit_x),
            row.residual.map_or(String::from(""), fmt_float),
            row.flagged
        )?;
    }
    w.flush()?;
    Ok(())
}

/// JSON summary of a null-control certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary {
    pub terminal_residual: f64,
    pub relative_residual: f64,
    pub gain_estimate: f64,
    /// `None` for purely linear solves (no smallness restriction).
    pub smallness_radius: Option<f64>,
    pub iterations: usize,
    pub min_norm: f64,
    pub initial_l2: f64,
}

impl CertificateSummary {
    pub fn of(cert: &NullControlCertificate, initial_l2: f64) -> Self {
        CertificateSummary {
            terminal_residual: cert.terminal_residual,
            relative_residual: if initial_l2 > 0.0 {
                cert.terminal_residual / initial_l2
            } else {
                0.0
            },
            gain_estimate: cert.gain_estimate,
            smallness_radius: cert
                .smallness_radius
                .is_finite()
                .then_some(cert.smallness_radius),
            iterations: cert.iterations,
            min_norm: cert.control.max_step_norm(),
            initial_l2,
        }
    }
}

/// JSON summary of a time-optimal run.
#[derive(Debug, Clone, Serialize)]
pub struct TimeOptSummary {
    pub t_star: f64,
    pub bound_m: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub terminal_tol: f64,
    pub tol_t: f64,
    pub degenerate: bool,
    pub n_evaluations: usize,
    pub saturated_fraction_all: f64,
    pub saturated_fraction_interior: f64,
    pub violation_count: usize,
}

impl TimeOptSummary {
    pub fn of(result: &TimeOptResult<f64>, report: &SaturationReport<f64>) -> Self {
        TimeOptSummary {
            t_star: result.t_star,
            bound_m: result.bound_m,
            bracket_lo: result.bracket.0,
            bracket_hi: result.bracket.1,
            terminal_tol: result.terminal_tol,
            tol_t: result.tol_t,
            degenerate: result.degenerate,
            n_evaluations: result.n_curve.len(),
            saturated_fraction_all: report.saturated_fraction_all,
            saturated_fraction_interior: report.saturated_fraction_interior,
            violation_count: report.violations.len(),
        }
    }
}

/// Serialize any summary as pretty JSON.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = open_writer(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidParameter(format!("summary serialization failed: {e}")))?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
