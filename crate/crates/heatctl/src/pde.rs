//! Implicit-Euler forward solvers for the heat equation with potential,
//! the semilinear equation, and the adjoint equation.
//!
//! Backward Euler is used everywhere: the comparison-principle and decay
//! arguments that the test suite encodes need a monotone scheme, which
//! rules out Crank-Nicolson. The semilinear term is handled implicitly
//! by Newton iteration on a truncated copy of the nonlinearity (cap =
//! current sup-norm + 1), with step halving as fallback.

use crate::error::{Error, Result};
use crate::linalg::Tridiag;
use crate::mesh::{lq_norm, sup_norm, Grid1D, TimeGrid};
use crate::nonlinearity::{Nonlinearity, TruncatedNonlinearity};
use crate::scalar::Real;

/// Space-time field on a grid pair: `n_steps + 1` snapshots of interior
/// node values, snapshot 0 being the initial time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    grid: Grid1D<T>,
    tgrid: TimeGrid<T>,
    values: Vec<Vec<T>>,
}

impl<T: Real> Trajectory<T> {
    /// Assemble from snapshots, validating shape and finiteness.
    pub fn new(grid: Grid1D<T>, tgrid: TimeGrid<T>, values: Vec<Vec<T>>) -> Result<Self> {
        if values.len() != tgrid.n_steps() + 1 {
            return Err(Error::InvalidParameter(format!(
                "trajectory needs {} snapshots, got {}",
                tgrid.n_steps() + 1,
                values.len()
            )));
        }
        for snap in &values {
            if snap.len() != grid.n_interior() {
                return Err(Error::InvalidParameter(
                    "trajectory snapshot length does not match grid".into(),
                ));
            }
            if snap.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trajectory snapshot"));
            }
        }
        Ok(Trajectory {
            grid,
            tgrid,
            values,
        })
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn tgrid(&self) -> &TimeGrid<T> {
        &self.tgrid
    }

    pub fn snapshot(&self, k: usize) -> &[T] {
        &self.values[k]
    }

    pub fn snapshots(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn initial(&self) -> &[T] {
        &self.values[0]
    }

    pub fn terminal(&self) -> &[T] {
        self.values.last().unwrap()
    }

    /// Sup norm over all snapshots and nodes.
    pub fn sup_norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, s| m.max(sup_norm(s)))
    }

    /// Discrete L^2 norm of snapshot `k`.
    pub fn l2_at(&self, k: usize) -> T {
        lq_norm(&self.grid, &self.values[k], T::of(2.0))
    }

    /// First snapshot index at which the L^2 norm is at or below `tol`,
    /// if any. This is the discrete notion of the state having reached
    /// zero.
    pub fn first_time_below(&self, tol: T) -> Option<(usize, T)> {
        for k in 0..self.values.len() {
            if self.l2_at(k) <= tol {
                return Some((k, self.tgrid.time(k)));
            }
        }
        None
    }
}

/// Zeroth-order coefficient a(x,t): either a constant or a per-step
/// table aligned with the trajectory shape.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialField<T> {
    Constant(T),
    Table { values: Vec<Vec<T>>, sup: T },
}

impl<T: Real> PotentialField<T> {
    pub fn zero() -> Self {
        PotentialField::Constant(T::zero())
    }

    pub fn constant(c: T) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::NonFinite("constant potential"));
        }
        Ok(PotentialField::Constant(c))
    }

    /// Per-step potential table: `values[k][i]` acts on step k.
    pub fn from_table(values: Vec<Vec<T>>) -> Result<Self> {
        let mut sup = T::zero();
        for row in &values {
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::NonFinite("potential table"));
                }
                sup = sup.max(v.abs());
            }
        }
        Ok(PotentialField::Table { values, sup })
    }

    /// Cached `||a||_inf` over space-time.
    pub fn sup_norm(&self) -> T {
        match self {
            PotentialField::Constant(c) => c.abs(),
            PotentialField::Table { sup, .. } => *sup,
        }
    }

    /// Sup of the negative part, the quantity limiting the implicit step.
    pub fn neg_sup(&self) -> T {
        match self {
            PotentialField::Constant(c) => (-*c).max(T::zero()),
            PotentialField::Table { values, .. } => {
                values.iter().flatten().fold(T::zero(), |m, &v| m.max(-v))
            }
        }
    }

    pub fn at(&self, step: usize, node: usize) -> T {
        match self {
            PotentialField::Constant(c) => *c,
            PotentialField::Table { values, .. } => values[step][node],
        }
    }

    /// The potential with the step order reversed, used to run the
    /// adjoint equation in reversed time bookkeeping.
    pub fn reversed(&self) -> Self {
        match self {
            PotentialField::Constant(c) => PotentialField::Constant(*c),
            PotentialField::Table { values, sup } => PotentialField::Table {
                values: values.iter().rev().cloned().collect(),
                sup: *sup,
            },
        }
    }

    fn validate_shape(&self, n_steps: usize, n: usize) -> Result<()> {
        if let PotentialField::Table { values, .. } = self {
            if values.len() != n_steps || values.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidParameter(
                    "potential table shape does not match grids".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Source term g(x,t), constant within each step.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceField<T> {
    Zero,
    Table(Vec<Vec<T>>),
}

impl<T: Real> SourceField<T> {
    pub fn zero() -> Self {
        SourceField::Zero
    }

    pub fn from_table(values: Vec<Vec<T>>) -> Result<Self> {
        for row in &values {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("source table"));
            }
        }
        Ok(SourceField::Table(values))
    }

    pub fn at_step(&self, k: usize) -> Option<&[T]> {
        match self {
            SourceField::Zero => None,
            SourceField::Table(v) => Some(&v[k]),
        }
    }

    pub fn sup_norm(&self) -> T {
        match self {
            SourceField::Zero => T::zero(),
            SourceField::Table(v) => v.iter().flatten().fold(T::zero(), |m, &x| m.max(x.abs())),
        }
    }

    fn validate_shape(&self, n_steps: usize, n: usize) -> Result<()> {
        if let SourceField::Table(v) = self {
            if v.len() != n_steps || v.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidParameter(
                    "source table shape does not match grids".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One implicit Euler transfer operator per step:
/// `P_k = (I + (dt/m)(L + A_k))^{-m}` where `L = -lap_h` and m is the
/// substep count keeping the shifted operator positive definite
/// (`(dt/m) ||a^-|| < 1/2`). Each `P_k` is symmetric, which is what makes
/// the discrete duality pairing exact.
#[derive(Debug)]
pub(crate) struct Stepper<'a, T> {
    grid: &'a Grid1D<T>,
    tgrid: &'a TimeGrid<T>,
    potential: &'a PotentialField<T>,
    substeps: usize,
    sub_dt: T,
    off: T,
    diag_base: T,
    constant_matrix: Option<Tridiag<T>>,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn new(
        grid: &'a Grid1D<T>,
        tgrid: &'a TimeGrid<T>,
        potential: &'a PotentialField<T>,
    ) -> Result<Self> {
        potential.validate_shape(tgrid.n_steps(), grid.n_interior())?;
        let dt = tgrid.dt();
        let mut substeps = 1usize;
        let limit = dt * potential.neg_sup();
        if limit >= T::of(0.5) {
            // smallest m with (dt/m) ||a^-|| < 1/2
            substeps = (T::of(2.0) * limit)
                .floor()
                .to_usize()
                .unwrap_or(usize::MAX)
                .saturating_add(1);
            if substeps > 1_000_000 {
                return Err(Error::InvalidParameter(format!(
                    "potential negative part {:.3e} would need {substeps} substeps per step;                      refine the time grid instead",
                    potential.neg_sup().as_f64()
                )));
            }
        }
        let sub_dt = dt / T::of_usize(substeps);
        let h2 = grid.spacing() * grid.spacing();
        let off = -sub_dt / h2;
        let diag_base = T::one() + T::of(2.0) * sub_dt / h2;
        let constant_matrix = match potential {
            PotentialField::Constant(c) => Some(Tridiag::new(
                vec![diag_base + sub_dt * *c; grid.n_interior()],
                off,
            )),
            PotentialField::Table { .. } => None,
        };
        Ok(Stepper {
            grid,
            tgrid,
            potential,
            substeps,
            sub_dt,
            off,
            diag_base,
            constant_matrix,
        })
    }

    #[allow(dead_code)]
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Fail unless each step is a single implicit solve; the exact dual
    /// pairing in the control module relies on that.
    pub fn require_single_solve(&self) -> Result<()> {
        if self.substeps != 1 {
            return Err(Error::InvalidParameter(format!(
                "dt * ||a^-|| = {:.3e} >= 1/2; refine the time grid (needs {} substeps)",
                (self.tgrid.dt() * self.potential.neg_sup()).as_f64(),
                self.substeps
            )));
        }
        Ok(())
    }

    fn matrix(&self, step: usize) -> Tridiag<T> {
        match &self.constant_matrix {
            Some(m) => m.clone(),
            None => {
                let diag = (0..self.grid.n_interior())
                    .map(|i| self.diag_base + self.sub_dt * self.potential.at(step, i))
                    .collect();
                Tridiag::new(diag, self.off)
            }
        }
    }

    /// state <- P_k state (no source).
    pub fn apply_inverse(&self, step: usize, state: &mut Vec<T>) -> Result<()> {
        let m = self.matrix(step);
        for _ in 0..self.substeps {
            *state = m.solve(state).map_err(|e| at_step(e, step))?;
        }
        Ok(())
    }

    /// state <- result of one full step with constant-in-step source g.
    pub fn apply_inverse_with_source(
        &self,
        step: usize,
        state: &mut Vec<T>,
        source: Option<&[T]>,
    ) -> Result<()> {
        let m = self.matrix(step);
        for _ in 0..self.substeps {
            if let Some(g) = source {
                for (s, &gi) in state.iter_mut().zip(g) {
                    *s += self.sub_dt * gi;
                }
            }
            *state = m.solve(state).map_err(|e| at_step(e, step))?;
        }
        Ok(())
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::StepFailure { reason, .. } => Error::StepFailure { step, reason },
        other => other,
    }
}

fn check_initial<T: Real>(grid: &Grid1D<T>, z0: &[T]) -> Result<()> {
    if z0.len() != grid.n_interior() {
        return Err(Error::InvalidParameter(format!(
            "initial datum has {} entries, grid has {}",
            z0.len(),
            grid.n_interior()
        )));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial datum"));
    }
    Ok(())
}

/// Solve `z_t - lap z + a z = g`, `z(0) = z0`, homogeneous Dirichlet,
/// by backward Euler: at each step `(I/dt - lap_h + A_k) z_{k+1} =
/// z_k/dt + g_k`. If `dt ||a^-|| >= 1/2` the step is refined internally;
/// snapshots are still reported on the requested grid.
pub fn solve_linear<T: Real>(
    grid: &Grid1D<T>,
    tgrid: &TimeGrid<T>,
    a: &PotentialField<T>,
    g: &SourceField<T>,
    z0: &[T],
) -> Result<Trajectory<T>> {
    check_initial(grid, z0)?;
    g.validate_shape(tgrid.n_steps(), grid.n_interior())?;
    let stepper = Stepper::new(grid, tgrid, a)?;
    let mut values = Vec::with_capacity(tgrid.n_steps() + 1);
    values.push(z0.to_vec());
    let mut state = z0.to_vec();
    for k in 0..tgrid.n_steps() {
        stepper.apply_inverse_with_source(k, &mut state, g.at_step(k))?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure {
                step: k,
                reason: "non-finite state after implicit solve".into(),
            });
        }
        values.push(state.clone());
    }
    Trajectory::new(grid.clone(), tgrid.clone(), values)
}

/// Solve the adjoint equation `phi_t - lap phi + a phi = 0` from an
/// initial datum. Identical scheme to [`solve_linear`] with g = 0;
/// null-control duality runs it with reversed time bookkeeping (pass
/// [`PotentialField::reversed`] and reindex), which makes the discrete
/// pairing identity exact.
pub fn solve_adjoint<T: Real>(
    grid: &Grid1D<T>,
    tgrid: &TimeGrid<T>,
    a: &PotentialField<T>,
    phi0: &[T],
) -> Result<Trajectory<T>> {
    solve_linear(grid, tgrid, a, &SourceField::Zero, phi0)
}

const BLOWUP_FACTOR: f64 = 1e6;
const NEWTON_MAX_ITERS: usize = 30;
const MAX_HALVINGS: usize = 20;

/// Solve the semilinear equation `z_t - lap z + f(z) = g` (optionally
/// with a background shift: `w_t - lap w + f(b + w) - f(b) = g` when
/// `background` is given).
///
/// Diffusion is implicit; the reaction term is resolved by Newton on a
/// truncated copy of f, the step being halved (up to 20 times) when
/// Newton stalls. A blow-up guard aborts once the sup-norm exceeds
/// `1e6 (||z0||_sup + ||g||_sup + 1)`; with the sign condition in force
/// it can never trip.
fn solve_semilinear_inner<T: Real>(
    grid: &Grid1D<T>,
    tgrid: &TimeGrid<T>,
    f: &Nonlinearity<T>,
    background: Option<&Trajectory<T>>,
    g: &SourceField<T>,
    z0: &[T],
) -> Result<Trajectory<T>> {
    check_initial(grid, z0)?;
    g.validate_shape(tgrid.n_steps(), grid.n_interior())?;
    if let Some(bg) = background {
        if bg.grid() != grid || bg.tgrid().n_steps() != tgrid.n_steps() {
            return Err(Error::InvalidParameter(
                "background trajectory does not match the solve grids".into(),
            ));
        }
    }
    let guard = T::of(BLOWUP_FACTOR) * (sup_norm(z0) + g.sup_norm() + T::one());
    let h2 = grid.spacing() * grid.spacing();

    let mut values = Vec::with_capacity(tgrid.n_steps() + 1);
    values.push(z0.to_vec());
    let mut state = z0.to_vec();
    for k in 0..tgrid.n_steps() {
        let shift = background.map(|b| b.snapshot(k + 1));
        state = semilinear_step(grid, h2, tgrid.dt(), f, shift, g.at_step(k), &state, 0, k)?;
        let sup = sup_norm(&state);
        if !sup.is_finite() || sup > guard {
            return Err(Error::BlowUp {
                step: k,
                sup: sup.as_f64(),
                guard: guard.as_f64(),
            });
        }
        values.push(state.clone());
    }
    Trajectory::new(grid.clone(), tgrid.clone(), values)
}

/// Semilinear solve without a background shift.
pub fn solve_semilinear<T: Real>(
    grid: &Grid1D<T>,
    tgrid: &TimeGrid<T>,
    f: &Nonlinearity<T>,
    g: &SourceField<T>,
    y0: &[T],
) -> Result<Trajectory<T>> {
    solve_semilinear_inner(grid, tgrid, f, None, g, y0)
}

/// Semilinear solve of the correction equation
/// `w_t - lap w + f(b + w) - f(b) = g` around a background trajectory b.
pub fn solve_semilinear_shifted<T: Real>(
    grid: &Grid1D<T>,
    tgrid: &TimeGrid<T>,
    f: &Nonlinearity<T>,
    background: &Trajectory<T>,
    g: &SourceField<T>,
    w0: &[T],
) -> Result<Trajectory<T>> {
    solve_semilinear_inner(grid, tgrid, f, Some(background), g, w0)
}

/// One implicit step `z + dt (L z + f(b+z) - f(b)) = prev + dt g`,
/// by Newton with the nonlinearity truncated at cap = (relevant sup) + 1.
#[allow(clippy::too_many_arguments)]
fn semilinear_step<T: Real>(
    grid: &Grid1D<T>,
    h2: T,
    dt: T,
    f: &Nonlinearity<T>,
    shift: Option<&[T]>,
    g: Option<&[T]>,
    prev: &[T],
    depth: usize,
    step_index: usize,
) -> Result<Vec<T>> {
    let n = grid.n_interior();
    let off = -dt / h2;
    let diag_base = T::one() + T::of(2.0) * dt / h2;
    let shift_sup = shift.map_or(T::zero(), sup_norm);
    let g_sup = g.map_or(T::zero(), sup_norm);

    let mut cap = sup_norm(prev) + shift_sup + dt * g_sup + T::one();
    // Enlarging the cap whenever the solution pushes against it mirrors
    // the continuation-to-a-maximal-interval argument; the caller's
    // blow-up guard is what stops a genuinely exploding solution.
    for _round in 0..60 {
        let trunc = TruncatedNonlinearity::new(f, cap);
        match newton_step(n, off, diag_base, dt, &trunc, shift, g, prev) {
            Some(z) => {
                let arg_sup = match shift {
                    Some(b) => z
                        .iter()
                        .zip(b)
                        .fold(T::zero(), |m, (&zi, &bi)| m.max((zi + bi).abs())),
                    None => sup_norm(&z),
                };
                if arg_sup < cap {
                    return Ok(z);
                }
                cap = arg_sup + T::one();
            }
            None => {
                // Newton stalled: halve the step and recurse.
                if depth >= MAX_HALVINGS {
                    return Err(Error::StepFailure {
                        step: step_index,
                        reason: format!(
                            "implicit reaction solve failed after {MAX_HALVINGS} step halvings"
                        ),
                    });
                }
                let half = dt * T::of(0.5);
                let mid =
                    semilinear_step(grid, h2, half, f, shift, g, prev, depth + 1, step_index)?;
                return semilinear_step(grid, h2, half, f, shift, g, &mid, depth + 1, step_index);
            }
        }
    }
    Err(Error::StepFailure {
        step: step_index,
        reason: "truncation cap kept growing without convergence".into(),
    })
}

/// Newton iteration for the per-step nonlinear system. Returns `None`
/// when it fails to converge, letting the caller halve the step.
#[allow(clippy::too_many_arguments)]
fn newton_step<T: Real>(
    n: usize,
    off: T,
    diag_base: T,
    dt: T,
    f: &TruncatedNonlinearity<T>,
    shift: Option<&[T]>,
    g: Option<&[T]>,
    prev: &[T],
) -> Option<Vec<T>> {
    let arg = |z: &[T], i: usize| match shift {
        Some(b) => z[i] + b[i],
        None => z[i],
    };
    let base = |i: usize| match shift {
        Some(b) => f.evaluate(b[i]),
        None => T::zero(),
    };
    let rhs: Vec<T> = (0..n)
        .map(|i| prev[i] + dt * g.map_or(T::zero(), |gv| gv[i]))
        .collect();

    let mut z = prev.to_vec();
    let tol = T::of(1e-12) * (T::one() + f.cap());
    for _ in 0..NEWTON_MAX_ITERS {
        // residual F(z) = z + dt (L z + f(arg) - f(b)) - rhs, with
        // L = -lap encoded through off/diag_base
        let mut residual = vec![T::zero(); n];
        for i in 0..n {
            let left = if i > 0 { z[i - 1] } else { T::zero() };
            let right = if i + 1 < n { z[i + 1] } else { T::zero() };
            let lin = diag_base * z[i] + off * (left + right);
            residual[i] = lin + dt * (f.evaluate(arg(&z, i)) - base(i)) - rhs[i];
        }
        let jac = Tridiag::new(
            (0..n)
                .map(|i| diag_base + dt * f.derivative(arg(&z, i)))
                .collect(),
            off,
        );
        let delta = jac.solve(&residual).ok()?;
        let mut max_d = T::zero();
        for i in 0..n {
            z[i] -= delta[i];
            max_d = max_d.max(delta[i].abs());
        }
        if !max_d.is_finite() {
            return None;
        }
        if max_d <= tol {
            return Some(z);
        }
    }
    None
}

/// The dynamics a control acts on.
#[derive(Debug, Clone, Copy)]
pub enum Dynamics<'a, T> {
    /// Linear equation with a potential.
    Linear(&'a PotentialField<T>),
    /// Plain semilinear equation.
    Semilinear(&'a Nonlinearity<T>),
    /// Correction equation around a background trajectory.
    SemilinearShifted {
        f: &'a Nonlinearity<T>,
        background: &'a Trajectory<T>,
    },
}

/// Solve the state equation driven by a control: assemble the source
/// `chi_omega chi_E u` (already baked into the control's values) and
/// dispatch to the matching solver.
pub fn control_to_state<T: Real>(
    dynamics: Dynamics<'_, T>,
    y0: &[T],
    u: &crate::control::ControlSignal<T>,
) -> Result<Trajectory<T>> {
    let grid = u.grid();
    let tgrid = u.tgrid();
    let g = u.as_source();
    match dynamics {
        Dynamics::Linear(a) => solve_linear(grid, tgrid, a, &g, y0),
        Dynamics::Semilinear(f) => solve_semilinear(grid, tgrid, f, &g, y0),
        Dynamics::SemilinearShifted { f, background } => {
            solve_semilinear_shifted(grid, tgrid, f, background, &g, y0)
        }
    }
}

/// Per-step discrete residual of the shifted semilinear system: for each
/// step k the h-weighted L^2 norm of
/// `(w_{k+1} - w_k) + dt (L w_{k+1} + f(b_{k+1}+w_{k+1}) - f(b_{k+1}) - s_k)`.
pub fn shifted_semilinear_residuals<T: Real>(
    f: &Nonlinearity<T>,
    background: Option<&Trajectory<T>>,
    w: &Trajectory<T>,
    source: &SourceField<T>,
) -> Vec<T> {
    let grid = w.grid();
    let tgrid = w.tgrid();
    let dt = tgrid.dt();
    let n = grid.n_interior();
    let two = T::of(2.0);
    let inv_h2 = T::one() / (grid.spacing() * grid.spacing());
    (0..tgrid.n_steps())
        .map(|k| {
            let wk = w.snapshot(k);
            let wk1 = w.snapshot(k + 1);
            let s = source.at_step(k);
            let r: Vec<T> = (0..n)
                .map(|i| {
                    let left = if i > 0 { wk1[i - 1] } else { T::zero() };
                    let right = if i + 1 < n { wk1[i + 1] } else { T::zero() };
                    let lap = (left - two * wk1[i] + right) * inv_h2;
                    let (arg, base) = match background {
                        Some(b) => {
                            let bi = b.snapshot(k + 1)[i];
                            (wk1[i] + bi, f.evaluate(bi))
                        }
                        None => (wk1[i], T::zero()),
                    };
                    let sk = s.map_or(T::zero(), |sv| sv[i]);
                    (wk1[i] - wk[i]) + dt * (-lap + f.evaluate(arg) - base - sk)
                })
                .collect();
            lq_norm(grid, &r, two)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::inner_product;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pi() -> f64 {
        std::f64::consts::PI
    }

    #[test]
    fn linear_zero_data_gives_zero() {
        let grid: Grid1D<f64> = Grid1D::new(33).unwrap();
        let tgrid = TimeGrid::new(0.1, 50).unwrap();
        let traj = solve_linear(
            &grid,
            &tgrid,
            &PotentialField::zero(),
            &SourceField::Zero,
            &vec![0.0; 33],
        )
        .unwrap();
        assert_eq!(traj.sup_norm(), 0.0);
    }

    #[test]
    fn heat_eigenmode_decay_matches_continuum() {
        // free heat flow from sin(pi x): relative L2 error at T below 1%.
        let grid: Grid1D<f64> = Grid1D::new(199).unwrap();
        let tgrid = TimeGrid::new(0.1, 1000).unwrap();
        let y0 = grid.sine_mode(1);
        let traj = solve_linear(
            &grid,
            &tgrid,
            &PotentialField::zero(),
            &SourceField::Zero,
            &y0,
        )
        .unwrap();
        let factor = (-pi().powi(2) * 0.1).exp();
        let diff: Vec<f64> = traj
            .terminal()
            .iter()
            .zip(&y0)
            .map(|(&z, &s)| z - factor * s)
            .collect();
        let rel = lq_norm(&grid, &diff, 2.0) / (factor * lq_norm(&grid, &y0, 2.0));
        assert!(rel <= 0.01, "relative error {rel}");
    }

    #[test]
    fn adjoint_eigenmode_is_exact_per_step() {
        let grid: Grid1D<f64> = Grid1D::new(49).unwrap();
        let tgrid = TimeGrid::new(0.05, 50).unwrap();
        let phi0 = grid.sine_mode(2);
        let mu2 = grid.mode_eigenvalue(2);
        let traj = solve_adjoint(&grid, &tgrid, &PotentialField::zero(), &phi0).unwrap();
        let mut factor = 1.0;
        for k in 0..=50 {
            for i in 0..49 {
                assert!(
                    (traj.snapshot(k)[i] - factor * phi0[i]).abs() < 1e-10,
                    "step {k} node {i}"
                );
            }
            factor /= 1.0 + tgrid.dt() * mu2;
        }
    }

    #[test]
    fn constant_potential_shifts_eigen_decay_exactly() {
        // With a = c the per-step factor on mode j is (1 + dt (mu_j + c))^{-1}.
        let grid: Grid1D<f64> = Grid1D::new(49).unwrap();
        let tgrid = TimeGrid::new(0.05, 50).unwrap();
        let c = 2.5;
        let phi0 = grid.sine_mode(2);
        let mu2 = grid.mode_eigenvalue(2);
        let traj =
            solve_adjoint(&grid, &tgrid, &PotentialField::constant(c).unwrap(), &phi0).unwrap();
        let mut factor = 1.0;
        for k in 0..=50 {
            for i in 0..49 {
                assert!(
                    (traj.snapshot(k)[i] - factor * phi0[i]).abs() < 1e-10,
                    "step {k} node {i}"
                );
            }
            factor /= 1.0 + tgrid.dt() * (mu2 + c);
        }
    }

    #[test]
    fn constant_potential_matches_exponential_reweighting() {
        // continuum identity z_a = e^{-ct} z_0, checked at 1% with small dt
        let grid: Grid1D<f64> = Grid1D::new(49).unwrap();
        let tgrid = TimeGrid::new(0.05, 500).unwrap();
        let c = 3.0;
        let y0 = grid.sample(|x| (pi() * x).sin() + 0.5 * (3.0 * pi() * x).sin());
        let base = solve_linear(
            &grid,
            &tgrid,
            &PotentialField::zero(),
            &SourceField::Zero,
            &y0,
        )
        .unwrap();
        let shifted = solve_linear(
            &grid,
            &tgrid,
            &PotentialField::constant(c).unwrap(),
            &SourceField::Zero,
            &y0,
        )
        .unwrap();
        let expect = (-c * 0.05f64).exp();
        let t = shifted.terminal();
        let b = base.terminal();
        let num: f64 = inner_product(&grid, t, t).sqrt();
        let den: f64 = inner_product(&grid, b, b).sqrt();
        assert_relative_eq!(num / den, expect, max_relative = 0.01);
    }

    #[test]
    fn negative_potential_autorefines_and_stays_bounded() {
        let grid: Grid1D<f64> = Grid1D::new(19).unwrap();
        // huge negative part: dt ||a^-|| = 0.1 * 40 = 4 >= 1/2 -> substeps
        let tgrid = TimeGrid::new(1.0, 10).unwrap();
        let a = PotentialField::constant(-40.0).unwrap();
        let stepper = Stepper::new(&grid, &tgrid, &a).unwrap();
        assert!(stepper.substeps() > 1);
        assert!(stepper.require_single_solve().is_err());
        let y0 = grid.sine_mode(1);
        let traj = solve_linear(&grid, &tgrid, &a, &SourceField::Zero, &y0).unwrap();
        assert!(traj.sup_norm().is_finite());
        // growth rate roughly e^{(s - mu_1) t}; just confirm it grew
        assert!(traj.l2_at(10) > traj.l2_at(0));
    }

    #[test]
    fn semilinear_with_zero_reaction_matches_linear() {
        let grid: Grid1D<f64> = Grid1D::new(41).unwrap();
        let tgrid = TimeGrid::new(0.1, 80).unwrap();
        let y0 = grid.sample(|x| (pi() * x).sin() - 0.3 * (2.0 * pi() * x).sin());
        let mut gtab = vec![vec![0.0; 41]; 80];
        for (k, row) in gtab.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = 0.2 * ((k as f64) * 0.05).cos() * ((i as f64) * 0.3).sin();
            }
        }
        let g = SourceField::from_table(gtab).unwrap();
        let lin = solve_linear(&grid, &tgrid, &PotentialField::zero(), &g, &y0).unwrap();
        let sem = solve_semilinear(&grid, &tgrid, &Nonlinearity::Zero, &g, &y0).unwrap();
        for k in 0..=80 {
            for i in 0..41 {
                assert!(
                    (lin.snapshot(k)[i] - sem.snapshot(k)[i]).abs() < 1e-11,
                    "step {k} node {i}"
                );
            }
        }
    }

    #[test]
    fn comparison_principle_cubic() {
        // |y| <= psi pointwise, psi the linear solution with data (|g|, |y0|)
        let grid: Grid1D<f64> = Grid1D::new(63).unwrap();
        let tgrid = TimeGrid::new(0.2, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let y0: Vec<f64> = {
                let c1: f64 = rng.gen_range(-1.5..1.5);
                let c2: f64 = rng.gen_range(-1.0..1.0);
                grid.sample(|x| c1 * (pi() * x).sin() + c2 * (2.0 * pi() * x).sin())
            };
            let gtab: Vec<Vec<f64>> = (0..200)
                .map(|_| (0..63).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let g = SourceField::from_table(gtab.clone()).unwrap();
            let y = solve_semilinear(&grid, &tgrid, &Nonlinearity::Cubic, &g, &y0).unwrap();

            let abs_g = SourceField::from_table(
                gtab.iter()
                    .map(|r| r.iter().map(|v| v.abs()).collect())
                    .collect(),
            )
            .unwrap();
            let abs_y0: Vec<f64> = y0.iter().map(|v| v.abs()).collect();
            let psi =
                solve_linear(&grid, &tgrid, &PotentialField::zero(), &abs_g, &abs_y0).unwrap();
            for k in 0..=200 {
                for i in 0..63 {
                    assert!(
                        y.snapshot(k)[i].abs() <= psi.snapshot(k)[i] + 1e-8,
                        "step {k} node {i}: |y| = {} vs psi = {}",
                        y.snapshot(k)[i].abs(),
                        psi.snapshot(k)[i]
                    );
                }
            }
        }
    }

    #[test]
    fn cubic_decay_below_first_eigenvalue_rate() {
        let grid: Grid1D<f64> = Grid1D::new(99).unwrap();
        let tgrid = TimeGrid::new(0.3, 3000).unwrap();
        let y0 = grid.sine_mode(1);
        let traj =
            solve_semilinear(&grid, &tgrid, &Nonlinearity::Cubic, &SourceField::Zero, &y0).unwrap();
        let mu1 = crate::mesh::first_eigenvalue(&grid);
        let n0 = traj.l2_at(0);
        for k in 0..=3000 {
            let bound = (-mu1 * tgrid.time(k)).exp() * n0 + 1e-8;
            assert!(
                traj.l2_at(k) <= bound,
                "step {k}: {} > {bound}",
                traj.l2_at(k)
            );
        }
    }

    #[test]
    fn monotone_damping_never_increases_terminal_norm() {
        let grid: Grid1D<f64> = Grid1D::new(33).unwrap();
        let tgrid = TimeGrid::new(0.2, 100).unwrap();
        let y0 = grid.sample(|x| (pi() * x).sin() + 0.4 * (5.0 * pi() * x).sin());
        let base = solve_linear(
            &grid,
            &tgrid,
            &PotentialField::zero(),
            &SourceField::Zero,
            &y0,
        )
        .unwrap();
        for c in [0.5, 2.0, 10.0] {
            let damped = solve_linear(
                &grid,
                &tgrid,
                &PotentialField::constant(c).unwrap(),
                &SourceField::Zero,
                &y0,
            )
            .unwrap();
            assert!(damped.l2_at(100) <= base.l2_at(100) + 1e-14, "c = {c}");
        }
    }

    #[test]
    fn restart_reproduces_single_run() {
        // semigroup property: solve to T1, restart, same as one shot
        let grid: Grid1D<f64> = Grid1D::new(29).unwrap();
        let t_full = TimeGrid::new(0.2, 100).unwrap();
        let t_half = TimeGrid::new(0.1, 50).unwrap();
        let y0 = grid.sample(|x| (pi() * x).sin() * (1.0 + 0.3 * (7.0 * x).cos()));
        let f = Nonlinearity::Cubic;
        let full = solve_semilinear(&grid, &t_full, &f, &SourceField::Zero, &y0).unwrap();
        let first = solve_semilinear(&grid, &t_half, &f, &SourceField::Zero, &y0).unwrap();
        let second =
            solve_semilinear(&grid, &t_half, &f, &SourceField::Zero, first.terminal()).unwrap();
        for i in 0..29 {
            assert!(
                (full.terminal()[i] - second.terminal()[i]).abs() < 1e-11,
                "node {i}"
            );
        }
    }

    #[test]
    fn per_step_stability_bound() {
        // ||z_{k+1}|| <= (1 + dt ||a||) ||z_k|| + dt ||g_k|| for a >= -||a||
        let grid: Grid1D<f64> = Grid1D::new(21).unwrap();
        let tgrid = TimeGrid::new(0.1, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let atab: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..21).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let gtab: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let a = PotentialField::from_table(atab).unwrap();
        let g = SourceField::from_table(gtab.clone()).unwrap();
        let y0: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let traj = solve_linear(&grid, &tgrid, &a, &g, &y0).unwrap();
        let dt = tgrid.dt();
        let amax = a.sup_norm();
        for k in 0..40 {
            let gk = lq_norm(&grid, &gtab[k], 2.0);
            let bound = (1.0 + dt * amax) * traj.l2_at(k) + dt * gk + 1e-12;
            assert!(traj.l2_at(k + 1) <= bound, "step {k}");
        }
    }

    #[test]
    fn adjoint_pairing_identity_is_exact() {
        // <y(T), phi_T> = sum_k dt <u_k, psi_k> with psi the adjoint chain
        let grid: Grid1D<f64> = Grid1D::new(31).unwrap();
        let tgrid = TimeGrid::new(0.05, 50).unwrap();
        let n = 31;
        let steps = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let atab: Vec<Vec<f64>> = (0..steps)
                .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let a = PotentialField::from_table(atab).unwrap();
            // positive draws keep the pairing away from cancellation so the
            // relative comparison is well conditioned
            let utab: Vec<Vec<f64>> = (0..steps)
                .map(|_| (0..n).map(|_| rng.gen_range(0.1..1.0)).collect())
                .collect();
            let phi_t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();

            let u = SourceField::from_table(utab.clone()).unwrap();
            let y = solve_linear(&grid, &tgrid, &a, &u, &vec![0.0; n]).unwrap();
            let lhs = inner_product(&grid, y.terminal(), &phi_t);

            let adj = solve_adjoint(&grid, &tgrid, &a.reversed(), &phi_t).unwrap();
            let mut rhs = 0.0;
            for k in 0..steps {
                // psi_k = adjoint snapshot N - k
                rhs += tgrid.dt() * inner_product(&grid, &utab[k], adj.snapshot(steps - k));
            }
            let denom = lhs.abs().max(rhs.abs());
            assert!(
                (lhs - rhs).abs() <= 1e-12 * denom,
                "trial {trial}: lhs {lhs} rhs {rhs} rel {}",
                (lhs - rhs).abs() / denom
            );
        }
    }

    #[test]
    fn huge_negative_potential_is_rejected_not_hung() {
        let grid: Grid1D<f64> = Grid1D::new(9).unwrap();
        let tgrid = TimeGrid::new(1.0, 10).unwrap();
        let a = PotentialField::constant(-1e12).unwrap();
        let err =
            solve_linear(&grid, &tgrid, &a, &SourceField::Zero, &grid.sine_mode(1)).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn all_dissipative_kinds_decay_below_first_eigenvalue_rate() {
        let grid: Grid1D<f64> = Grid1D::new(49).unwrap();
        let tgrid = TimeGrid::new(0.2, 400).unwrap();
        let mu1 = crate::mesh::first_eigenvalue(&grid);
        let y0 = grid.sine_mode(1);
        for f in [
            Nonlinearity::Saturating,
            Nonlinearity::odd_power(5).unwrap(),
            Nonlinearity::table(&[(-2.0, -1.0), (0.0, 0.0), (2.0, 1.0)]).unwrap(),
        ] {
            let traj = solve_semilinear(&grid, &tgrid, &f, &SourceField::Zero, &y0).unwrap();
            let n0 = traj.l2_at(0);
            for k in 0..=400 {
                let bound = (-mu1 * tgrid.time(k)).exp() * n0 + 1e-8;
                assert!(traj.l2_at(k) <= bound, "{f:?} step {k}");
            }
        }
    }

    #[test]
    fn solvers_instantiate_at_f32() {
        let grid: Grid1D<f32> = Grid1D::new(19).unwrap();
        let tgrid: TimeGrid<f32> = TimeGrid::new(0.1, 50).unwrap();
        let y0 = grid.sine_mode(1);
        let traj =
            solve_semilinear(&grid, &tgrid, &Nonlinearity::Cubic, &SourceField::Zero, &y0).unwrap();
        // single precision tracks the eigenmode decay to a few percent
        let mu1 = crate::mesh::first_eigenvalue(&grid);
        let expect = (-mu1 * 0.1).exp() * traj.l2_at(0);
        let got = traj.l2_at(50);
        assert!((got - expect).abs() < 0.05 * expect, "{got} vs {expect}");
    }

    #[test]
    fn control_to_state_trivial_cases() {
        use crate::control::ControlSignal;
        use crate::mesh::{RegionMask, TimeSet};
        let grid: Grid1D<f64> = Grid1D::new(21).unwrap();
        let tgrid = TimeGrid::new(0.2, 40).unwrap();
        let omega = RegionMask::new(&grid, 0.3, 0.7).unwrap();
        let zero = ControlSignal::zero(
            grid.clone(),
            tgrid.clone(),
            omega,
            TimeSet::full(&tgrid),
            1.0,
            2.0,
        );
        // zero control, zero state, zero dynamics stays zero
        let traj =
            control_to_state(Dynamics::Linear(&PotentialField::zero()), &[0.0; 21], &zero).unwrap();
        assert_eq!(traj.sup_norm(), 0.0);

        // zero control reduces to the free semilinear solve exactly
        let y0 = grid.sample(|x| (pi() * x).sin());
        let f = Nonlinearity::Cubic;
        let with_zero_control = control_to_state(Dynamics::Semilinear(&f), &y0, &zero).unwrap();
        let free = solve_semilinear(&grid, &tgrid, &f, &SourceField::Zero, &y0).unwrap();
        for k in 0..=40 {
            assert_eq!(with_zero_control.snapshot(k), free.snapshot(k), "step {k}");
        }
    }

    #[test]
    fn blow_up_guard_trips_without_sign_condition() {
        // f(y) ~ -40 y pumps energy in; the guard must abort, not hang
        let f = Nonlinearity::table_unchecked(&[(-1e9, 4e10), (0.0, 0.0), (1e9, -4e10)]).unwrap();
        let grid: Grid1D<f64> = Grid1D::new(19).unwrap();
        let tgrid = TimeGrid::new(4.0, 400).unwrap();
        let y0 = grid.sine_mode(1);
        let err = solve_semilinear(&grid, &tgrid, &f, &SourceField::Zero, &y0).unwrap_err();
        match err {
            Error::BlowUp { .. } => {}
            other => panic!("expected blow-up, got {other}"),
        }
    }

    #[test]
    fn shifted_solve_consistent_with_difference_of_solves() {
        // y solves the plain equation from y0+w0, b from y0; then w = y - b
        // approximately solves the shifted equation (agreement to scheme order)
        let grid: Grid1D<f64> = Grid1D::new(41).unwrap();
        let tgrid = TimeGrid::new(0.1, 200).unwrap();
        let f = Nonlinearity::Cubic;
        let y0 = grid.sample(|x| (pi() * x).sin());
        let w0 = grid.sample(|x| 0.1 * (2.0 * pi() * x).sin());
        let b = solve_semilinear(&grid, &tgrid, &f, &SourceField::Zero, &y0).unwrap();
        let y_tot = {
            let z0: Vec<f64> = y0.iter().zip(&w0).map(|(a, b)| a + b).collect();
            solve_semilinear(&grid, &tgrid, &f, &SourceField::Zero, &z0).unwrap()
        };
        let w = solve_semilinear_shifted(&grid, &tgrid, &f, &b, &SourceField::Zero, &w0).unwrap();
        for k in [0usize, 50, 100, 200] {
            for i in 0..41 {
                let direct = y_tot.snapshot(k)[i] - b.snapshot(k)[i];
                assert!(
                    (w.snapshot(k)[i] - direct).abs() < 1e-9,
                    "step {k} node {i}: {} vs {direct}",
                    w.snapshot(k)[i]
                );
            }
        }
        // and the residual evaluator sees it as a discrete solution
        let res = shifted_semilinear_residuals(&f, Some(&b), &w, &SourceField::Zero);
        assert!(
            res.iter().all(|&r| r < 1e-10),
            "max {:?}",
            res.iter().cloned().fold(0.0, f64::max)
        );
    }
}
