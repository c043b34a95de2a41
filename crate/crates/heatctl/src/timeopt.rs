//! The time-optimal driver: minimal-norm function N(T), bisection for
//! the optimal time, the bang-bang saturation diagnostic, and the
//! time-shift improvement construction.
//!
//! The bridge between time optimality and null controllability is the
//! minimal norm function: N(T) is the smallest sup-in-time control norm
//! steering the initial state to the target tolerance at horizon T. It
//! is nonincreasing in T, so the optimal time for a norm budget M is
//! found by bisection on N(T) = M.

use crate::control::{
    construct_admissible, min_norm_control_linear, semilinear_null_control, ControlSignal,
    PicardOptions,
};
use crate::error::{Error, Result};
use crate::mesh::{lq_norm, Grid1D, RegionMask, TimeGrid, TimeSet};
use crate::nonlinearity::Nonlinearity;
use crate::pde::{
    control_to_state, solve_semilinear, Dynamics, PotentialField, SourceField, Trajectory,
};
use crate::scalar::Real;

/// One evaluated point of the minimal-norm curve.
#[derive(Debug, Clone)]
pub struct NormSample<T> {
    pub horizon: T,
    /// Minimal sup-in-time norm; infinite when the solve was infeasible.
    pub norm: T,
    /// Leading stretch of the horizon spent in free decay before the
    /// steering phase (zero when the whole horizon is steered).
    pub free_prefix: T,
    pub feasible: bool,
}

/// Result of a minimal-norm evaluation.
#[derive(Debug, Clone)]
pub struct MinimalNormOutcome<T> {
    pub sample: NormSample<T>,
    /// The realizing control; `None` when infeasible.
    pub control: Option<ControlSignal<T>>,
}

/// Knobs shared by the time-optimal pipeline.
#[derive(Debug, Clone)]
pub struct TimeOptParams<T> {
    /// Step size from which every per-horizon time grid is built.
    pub dt_target: T,
    /// Bisection stopping width for the optimal time.
    pub tol_t: T,
    /// Absolute terminal tolerance: the state counts as steered to zero
    /// once its L^2 norm is at or below this.
    pub terminal_tol: T,
    /// Hard cap on the horizon during bracketing.
    pub t_max: T,
    pub picard: PicardOptions<T>,
}

impl<T: Real> Default for TimeOptParams<T> {
    fn default() -> Self {
        TimeOptParams {
            dt_target: T::of(2e-3),
            tol_t: T::of(0.01),
            terminal_tol: T::of(1e-3),
            t_max: T::of(64.0),
            picard: PicardOptions::default(),
        }
    }
}

fn steps_for<T: Real>(params: &TimeOptParams<T>, horizon: T) -> usize {
    let raw = (horizon / params.dt_target).round().to_usize().unwrap_or(8);
    raw.max(8)
}

/// Minimal sup-in-time L^2 control norm steering `y0` to the terminal
/// tolerance at the given horizon.
///
/// For the linear equation this is one dual solve over the full
/// horizon. For a genuinely semilinear equation the steering iteration
/// only converges for small states, so a free-decay prefix is inserted
/// (an eighth of the horizon at a time) until the remaining tail can be
/// steered; the prefix is recorded in the sample.
pub fn minimal_norm<T: Real>(
    grid: &Grid1D<T>,
    f: &Nonlinearity<T>,
    y0: &[T],
    horizon: T,
    omega: &RegionMask<T>,
    params: &TimeOptParams<T>,
) -> Result<MinimalNormOutcome<T>> {
    let two = T::of(2.0);
    if !(horizon > T::zero()) {
        return Err(Error::InvalidParameter(
            "minimal-norm horizon must be positive".into(),
        ));
    }
    let tol = params.terminal_tol;
    let n_steps = steps_for(params, horizon);
    let tgrid = TimeGrid::new(horizon, n_steps)?;
    let dt = tgrid.dt();
    let scale = lq_norm(grid, y0, two);

    let zero_outcome = |prefix: T| -> Result<MinimalNormOutcome<T>> {
        Ok(MinimalNormOutcome {
            sample: NormSample {
                horizon,
                norm: T::zero(),
                free_prefix: prefix,
                feasible: true,
            },
            control: Some(ControlSignal::zero(
                grid.clone(),
                tgrid.clone(),
                omega.clone(),
                TimeSet::full(&tgrid),
                T::zero(),
                two,
            )),
        })
    };

    if scale <= tol {
        return zero_outcome(T::zero());
    }
    // free decay alone may already reach the tolerance
    let free = solve_semilinear(grid, &tgrid, f, &SourceField::Zero, y0)?;
    if free.l2_at(n_steps) <= tol {
        return zero_outcome(horizon);
    }

    let mut prefix_steps_list = vec![0usize];
    if !matches!(f, Nonlinearity::Zero) {
        for j in 1..8 {
            let p = n_steps * j / 8;
            if n_steps - p >= 4 && prefix_steps_list.last() != Some(&p) {
                prefix_steps_list.push(p);
            }
        }
    }

    for prefix_steps in prefix_steps_list {
        let (start_state, prefix_time) = if prefix_steps == 0 {
            (y0.to_vec(), T::zero())
        } else {
            (
                free.snapshot(prefix_steps).to_vec(),
                tgrid.time(prefix_steps),
            )
        };
        let tail_steps = n_steps - prefix_steps;
        let tail_tgrid = TimeGrid::new(dt * T::of_usize(tail_steps), tail_steps)?;
        let tail_e = TimeSet::full(&tail_tgrid);
        let start_norm = lq_norm(grid, &start_state, two);
        let mut opts = params.picard.clone();
        opts.dual.tol_rel = (tol / start_norm).min(T::of(0.5));

        let attempt = if matches!(f, Nonlinearity::Zero) {
            min_norm_control_linear(
                grid,
                &tail_tgrid,
                &PotentialField::zero(),
                &start_state,
                omega,
                &tail_e,
                &opts.dual,
            )
        } else {
            semilinear_null_control(
                grid,
                &tail_tgrid,
                f,
                None,
                &start_state,
                omega,
                &tail_e,
                &opts,
            )
        };
        let cert = match attempt {
            Ok(c) => c,
            Err(Error::NonConvergence { .. }) => continue,
            Err(other) => return Err(other),
        };

        // assemble the full-horizon control (zero during the prefix)
        let n = grid.n_interior();
        let mut values = vec![vec![T::zero(); n]; n_steps];
        for k in 0..tail_steps {
            values[prefix_steps + k] = cert.control.step_values(k).to_vec();
        }
        let norm = cert.control.max_step_norm();
        let control = ControlSignal::try_new(
            grid.clone(),
            tgrid.clone(),
            omega.clone(),
            TimeSet::full(&tgrid),
            values,
            norm,
            two,
        )?;
        let replay = control_to_state(Dynamics::Semilinear(f), y0, &control)?;
        if replay.l2_at(n_steps) > tol {
            continue;
        }
        return Ok(MinimalNormOutcome {
            sample: NormSample {
                horizon,
                norm,
                free_prefix: prefix_time,
                feasible: true,
            },
            control: Some(control),
        });
    }

    Ok(MinimalNormOutcome {
        sample: NormSample {
            horizon,
            norm: T::infinity(),
            free_prefix: T::zero(),
            feasible: false,
        },
        control: None,
    })
}

/// Output of the time-optimal bisection.
#[derive(Debug, Clone)]
pub struct TimeOptResult<T> {
    /// The computed optimal time (the feasible end of the final bracket).
    pub t_star: T,
    /// Control realizing the optimal time, rebounded to the budget M.
    pub control: ControlSignal<T>,
    /// Replay of that control from the initial state.
    pub trajectory: Trajectory<T>,
    /// Every evaluated (horizon, minimal norm) pair, sorted by horizon.
    pub n_curve: Vec<NormSample<T>>,
    /// Per-step control norms of the optimal control.
    pub saturation: Vec<T>,
    pub bound_m: T,
    pub terminal_tol: T,
    pub tol_t: T,
    /// Final bisection bracket (infeasible end, feasible end).
    pub bracket: (T, T),
    /// Set when no infeasible horizon was found above the floor (the
    /// budget is so large that even the smallest tested horizon works).
    pub degenerate: bool,
}

/// Bisection for the optimal time: bracket [T_lo, T_hi] with
/// N(T_hi) <= M < N(T_lo), seeded by the admissible-control
/// construction, narrowed to `tol_t`.
pub fn optimal_time<T: Real>(
    grid: &Grid1D<T>,
    f: &Nonlinearity<T>,
    y0: &[T],
    bound_m: T,
    omega: &RegionMask<T>,
    params: &TimeOptParams<T>,
) -> Result<TimeOptResult<T>> {
    let two = T::of(2.0);
    if !(bound_m > T::zero()) {
        return Err(Error::InvalidParameter(
            "norm budget must be positive".into(),
        ));
    }
    let tol = params.terminal_tol;
    if lq_norm(grid, y0, two) <= tol {
        let tgrid = TimeGrid::new(params.dt_target * T::of(8.0), 8)?;
        let control = ControlSignal::zero(
            grid.clone(),
            tgrid.clone(),
            omega.clone(),
            TimeSet::full(&tgrid),
            bound_m,
            two,
        );
        let trajectory = control_to_state(Dynamics::Semilinear(f), y0, &control)?;
        return Ok(TimeOptResult {
            t_star: T::zero(),
            saturation: control.step_norms().to_vec(),
            control,
            trajectory,
            n_curve: Vec::new(),
            bound_m,
            terminal_tol: tol,
            tol_t: params.tol_t,
            bracket: (T::zero(), T::zero()),
            degenerate: true,
        });
    }

    let steps_per_unit = (T::one() / params.dt_target)
        .round()
        .to_usize()
        .unwrap_or(8)
        .max(8);
    let adm = construct_admissible(
        grid,
        steps_per_unit,
        f,
        y0,
        bound_m,
        two,
        omega,
        tol,
        &params.picard,
    )?;
    if adm.total_time > params.t_max {
        return Err(Error::Infeasible(format!(
            "reaching the tolerance needs a horizon of {:.3}, beyond the cap t_max = {:.3}",
            adm.total_time.as_f64(),
            params.t_max.as_f64()
        )));
    }

    let mut curve: Vec<NormSample<T>> = Vec::new();
    let evaluate = |t: T, curve: &mut Vec<NormSample<T>>| -> Result<MinimalNormOutcome<T>> {
        let out = minimal_norm(grid, f, y0, t, omega, params)?;
        curve.push(out.sample.clone());
        Ok(out)
    };

    // feasible end of the bracket
    let mut t_hi = adm.total_time.max(params.dt_target * T::of(8.0));
    let mut hi = evaluate(t_hi, &mut curve)?;
    let mut expansions = 0;
    while !(hi.sample.feasible && hi.sample.norm <= bound_m) {
        expansions += 1;
        t_hi *= T::of(1.5);
        if expansions > 8 || t_hi > params.t_max {
            return Err(Error::Infeasible(format!(
                "could not bracket the optimal time: no horizon up to {:.3} admits a control \
                 within the budget {:.3e}; evaluated {}",
                t_hi.as_f64(),
                bound_m.as_f64(),
                describe_curve(&curve)
            )));
        }
        hi = evaluate(t_hi, &mut curve)?;
    }
    let mut best = hi;

    // infeasible end
    let floor = params.tol_t.max(params.dt_target * T::of(4.0));
    let mut t_lo = T::zero();
    let mut degenerate = true;
    let mut probe = t_hi * T::of(0.5);
    while probe >= floor {
        let out = evaluate(probe, &mut curve)?;
        if out.sample.feasible && out.sample.norm <= bound_m {
            t_hi = probe;
            best = out;
            probe *= T::of(0.5);
        } else {
            t_lo = probe;
            degenerate = false;
            break;
        }
    }

    if !degenerate {
        // narrow the bracket until both the time width and the norm
        // consistency N(T*) ~ M are met; the latter is what makes the
        // returned control saturate its budget
        let consistency = bound_m * T::of(0.96);
        let mut guard = 0;
        while guard < 60 && (t_hi - t_lo > params.tol_t || best.sample.norm < consistency) {
            guard += 1;
            let mid = (t_hi + t_lo) * T::of(0.5);
            if !(mid > t_lo && mid < t_hi) {
                break; // bracket exhausted in floating point
            }
            let out = evaluate(mid, &mut curve)?;
            if out.sample.feasible && out.sample.norm <= bound_m {
                t_hi = mid;
                best = out;
            } else {
                t_lo = mid;
            }
        }
    }

    curve.sort_by(|a, b| a.horizon.partial_cmp(&b.horizon).unwrap());
    let control = best
        .control
        .expect("feasible bracket end carries a control")
        .with_bound(bound_m);
    let trajectory = control_to_state(Dynamics::Semilinear(f), y0, &control)?;
    Ok(TimeOptResult {
        t_star: t_hi,
        saturation: control.step_norms().to_vec(),
        control,
        trajectory,
        n_curve: curve,
        bound_m,
        terminal_tol: tol,
        tol_t: params.tol_t,
        bracket: (t_lo, t_hi),
        degenerate,
    })
}

fn describe_curve<T: Real>(curve: &[NormSample<T>]) -> String {
    let pairs: Vec<String> = curve
        .iter()
        .map(|s| format!("({:.4}, {:.4e})", s.horizon.as_f64(), s.norm.as_f64()))
        .collect();
    format!("N-curve evidence: [{}]", pairs.join(", "))
}

/// Thresholds of the saturation diagnostic.
#[derive(Debug, Clone)]
pub struct SaturationOptions<T> {
    /// Relative deviation from 1 still counted as saturated.
    pub threshold: T,
    /// Minimal number of consecutive sub-saturated steps flagged as a
    /// violation (3 steps = measure above 2 dt).
    pub min_violation_steps: usize,
    /// Steps trimmed at each end for the interior statistics.
    pub trim_steps: usize,
}

impl<T: Real> Default for SaturationOptions<T> {
    fn default() -> Self {
        SaturationOptions {
            threshold: T::of(0.05),
            min_violation_steps: 3,
            trim_steps: 2,
        }
    }
}

/// Saturation profile of a control against its norm budget.
#[derive(Debug, Clone)]
pub struct SaturationReport<T> {
    /// Per-step `||u_k||_q / M`.
    pub ratios: Vec<T>,
    /// Fraction of all steps with ratio within the threshold of 1.
    pub saturated_fraction_all: T,
    /// Same fraction over the trimmed interior steps.
    pub saturated_fraction_interior: T,
    /// Sub-saturated runs of measure above `min_violation_steps - 1`
    /// steps inside the trimmed interior, as (t_start, t_end).
    pub violations: Vec<(T, T)>,
    /// Zero control or too few steps to say anything.
    pub degenerate: bool,
}

/// Per-step saturation `||u*(t)||_q / M` of a time-optimal result, with
/// the fraction of (interior) steps within the threshold of full
/// saturation and any sub-saturated runs flagged.
pub fn bang_bang_profile<T: Real>(
    result: &TimeOptResult<T>,
    opts: &SaturationOptions<T>,
) -> SaturationReport<T> {
    saturation_of(
        &result.saturation,
        result.bound_m,
        result.control.tgrid(),
        opts,
    )
}

/// The same diagnostic for a bare control signal.
pub fn saturation_profile<T: Real>(
    control: &ControlSignal<T>,
    opts: &SaturationOptions<T>,
) -> SaturationReport<T> {
    saturation_of(control.step_norms(), control.bound(), control.tgrid(), opts)
}

fn saturation_of<T: Real>(
    norms: &[T],
    bound_m: T,
    tgrid: &TimeGrid<T>,
    opts: &SaturationOptions<T>,
) -> SaturationReport<T> {
    let n = norms.len();
    let max_norm = norms.iter().fold(T::zero(), |m, &v| m.max(v));
    let degenerate = bound_m <= T::zero() || max_norm == T::zero() || n <= 2 * opts.trim_steps;
    let ratios: Vec<T> = norms
        .iter()
        .map(|&v| {
            if bound_m > T::zero() {
                v / bound_m
            } else {
                T::zero()
            }
        })
        .collect();
    if degenerate {
        return SaturationReport {
            ratios,
            saturated_fraction_all: T::zero(),
            saturated_fraction_interior: T::zero(),
            violations: Vec::new(),
            degenerate,
        };
    }
    let saturated = |r: T| (r - T::one()).abs() <= opts.threshold;
    let count_all = ratios.iter().filter(|&&r| saturated(r)).count();
    let interior = &ratios[opts.trim_steps..n - opts.trim_steps];
    let interior_len = interior.len();
    let count_interior = interior.iter().filter(|&&r| saturated(r)).count();

    let mut violations = Vec::new();
    let mut run_start: Option<usize> = None;
    for k in 0..=interior_len {
        let low = k < interior_len && interior[k] <= T::one() - opts.threshold;
        match (run_start, low) {
            (None, true) => run_start = Some(k),
            (Some(s), false) => {
                if k - s >= opts.min_violation_steps {
                    violations.push((
                        tgrid.time(s + opts.trim_steps),
                        tgrid.time(k + opts.trim_steps),
                    ));
                }
                run_start = None;
            }
            _ => {}
        }
    }

    SaturationReport {
        ratios,
        saturated_fraction_all: T::of_usize(count_all) / T::of_usize(n),
        saturated_fraction_interior: T::of_usize(count_interior) / T::of_usize(interior_len.max(1)),
        violations,
        degenerate,
    }
}

/// Knobs of the improvement construction.
#[derive(Debug, Clone)]
pub struct ImproveOptions<T> {
    /// Minimal slack (as a fraction of the bound) that counts.
    pub slack_threshold: T,
    /// Minimal number of slack steps (5 steps = measure above 4 dt).
    pub min_slack_steps: usize,
    /// Size of the descending shift-candidate grid.
    pub delta_candidates: usize,
    pub picard: PicardOptions<T>,
}

impl<T: Real> Default for ImproveOptions<T> {
    fn default() -> Self {
        ImproveOptions {
            slack_threshold: T::of(0.05),
            min_slack_steps: 5,
            delta_candidates: 32,
            picard: PicardOptions::default(),
        }
    }
}

/// Outcome of the improvement attempt.
#[derive(Debug, Clone)]
pub enum ImproveOutcome<T> {
    /// The initial state is already at the target; any positive horizon
    /// improves to zero.
    AlreadyAtTarget { t_new: T },
    /// No slack set of the required measure exists: positive evidence
    /// that the control is saturated (bang-bang).
    NotImprovable {
        max_slack: T,
        required_slack: T,
        slack_steps: usize,
    },
    /// A strictly shorter steering was constructed and replay-verified.
    Improved(Box<ImprovementReport<T>>),
}

/// The constructed improvement: shift the control past a slack set and
/// spend the freed norm budget on a corrector steering the mismatch.
#[derive(Debug, Clone)]
pub struct ImprovementReport<T> {
    pub original_time: T,
    /// Detected slack: step norms on the slack set stay below M - epsilon0.
    pub epsilon0: T,
    /// The slack set.
    pub e_star: TimeSet<T>,
    /// Shift, a quarter of the slack measure (grid aligned).
    pub delta0: T,
    /// Retained lead-in; the new horizon is T - delta0 + delta.
    pub delta: T,
    pub t_new: T,
    pub improved_control: ControlSignal<T>,
    /// Replayed terminal L^2 norm at the new horizon.
    pub residual_at_t_new: T,
    pub max_step_norm: T,
    pub corrector_max_norm: T,
    /// (delta, ||y*(delta) - y*(delta0)||_2) for the candidates tried.
    pub continuity_trace: Vec<(T, T)>,
}

/// Try to beat a steering control's horizon using the slack in its norm
/// budget: detect a slack set E*, shift the control left past a quarter
/// of it, and steer the resulting initial mismatch with a corrector
/// supported on the shifted slack set. Success contradicts optimality of
/// the original horizon; failure to find slack is evidence of the
/// bang-bang property.
pub fn improve_control<T: Real>(
    grid: &Grid1D<T>,
    f: &Nonlinearity<T>,
    y0: &[T],
    u: &ControlSignal<T>,
    terminal_tol: T,
    opts: &ImproveOptions<T>,
) -> Result<ImproveOutcome<T>> {
    let two = T::of(2.0);
    let tgrid = u.tgrid().clone();
    let n_steps = tgrid.n_steps();
    let dt = tgrid.dt();
    let bound_m = u.bound();

    if lq_norm(grid, y0, two) <= terminal_tol {
        return Ok(ImproveOutcome::AlreadyAtTarget { t_new: T::zero() });
    }
    let y_star = control_to_state(Dynamics::Semilinear(f), y0, u)?;
    let r0 = y_star.l2_at(n_steps);
    if r0 > terminal_tol {
        return Err(Error::InvalidParameter(format!(
            "the control to improve does not steer to tolerance: terminal {:.3e} > {:.3e}",
            r0.as_f64(),
            terminal_tol.as_f64()
        )));
    }

    // slack scan: the largest epsilon0 leaving at least min_slack_steps
    // steps with ||u_k|| <= M - epsilon0
    let required_slack = opts.slack_threshold * bound_m;
    if n_steps < opts.min_slack_steps {
        return Ok(ImproveOutcome::NotImprovable {
            max_slack: T::zero(),
            required_slack,
            slack_steps: 0,
        });
    }
    let mut sorted = u.step_norms().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pivot = sorted[opts.min_slack_steps - 1];
    let epsilon0 = bound_m - pivot;
    if epsilon0 < required_slack {
        let slack_steps = sorted
            .iter()
            .filter(|&&v| v <= bound_m - required_slack)
            .count();
        return Ok(ImproveOutcome::NotImprovable {
            max_slack: epsilon0,
            required_slack,
            slack_steps,
        });
    }
    let tiny = T::of(1e-12) * bound_m.max(T::one());
    let flags: Vec<bool> = u.step_norms().iter().map(|&v| v <= pivot + tiny).collect();
    let e_star = TimeSet::from_step_flags(&tgrid, &flags)?;
    let slack_count = e_star.step_count();

    // shift by a quarter of the slack measure, grid aligned
    let j0 = (slack_count / 4).max(1);
    let delta0 = T::of_usize(j0) * dt;
    let new_steps = n_steps - j0;
    let new_tgrid = TimeGrid::new(dt * T::of_usize(new_steps), new_steps)?;
    let e_shifted = e_star.shifted_left(&tgrid, &new_tgrid, j0)?;
    if e_shifted.is_empty() {
        return Ok(ImproveOutcome::NotImprovable {
            max_slack: epsilon0,
            required_slack,
            slack_steps: slack_count,
        });
    }

    // shifted background z*(t) = y*(t + delta0)
    let background = Trajectory::new(
        grid.clone(),
        new_tgrid.clone(),
        (j0..=n_steps)
            .map(|k| y_star.snapshot(k).to_vec())
            .collect(),
    )?;

    // descending shift candidates spanning (0, delta0)
    let mut candidates: Vec<usize> = Vec::new();
    let m = opts.delta_candidates.max(1);
    for i in 1..=m {
        let j = j0 * (m - i) / m;
        if candidates.last() != Some(&j) {
            candidates.push(j);
        }
    }

    let mut continuity_trace: Vec<(T, T)> = Vec::new();
    let mut kappa_est: Option<T> = None;
    let rv_budget = ((terminal_tol - r0) * T::of(0.8)).max(terminal_tol * T::of(0.05));

    for j_delta in candidates {
        let delta = T::of_usize(j_delta) * dt;
        let mismatch: Vec<T> = y_star
            .snapshot(j_delta)
            .iter()
            .zip(y_star.snapshot(j0))
            .map(|(&a, &b)| a - b)
            .collect();
        let d_l2 = lq_norm(grid, &mismatch, two);
        continuity_trace.push((delta, d_l2));
        if let Some(kappa) = kappa_est {
            if kappa * d_l2 > epsilon0 * T::of(1.001) {
                continue;
            }
        }

        let mut inner = opts.picard.clone();
        inner.dual.tol_rel = if d_l2 > T::zero() {
            (rv_budget / d_l2).min(T::of(0.5))
        } else {
            T::of(0.5)
        };
        let cert = match semilinear_null_control(
            grid,
            &new_tgrid,
            f,
            Some(&background),
            &mismatch,
            u.space_mask(),
            &e_shifted,
            &inner,
        ) {
            Ok(c) => c,
            Err(Error::NonConvergence { .. }) => continue,
            Err(other) => return Err(other),
        };
        kappa_est = Some(cert.gain_estimate);
        let v_norm = cert.control.max_step_norm();
        if v_norm > epsilon0 * (T::one() + T::of(1e-9)) {
            continue;
        }

        // composite: keep u on (0, delta], then the shifted u plus the
        // corrector, nothing after the new horizon
        let total_steps = n_steps - j0 + j_delta;
        let total_tgrid = TimeGrid::new(dt * T::of_usize(total_steps), total_steps)?;
        let n = grid.n_interior();
        let mut values = vec![vec![T::zero(); n]; total_steps];
        for (k, row) in values.iter_mut().enumerate() {
            if k < j_delta {
                *row = u.step_values(k).to_vec();
            } else {
                let s = k - j_delta;
                let mut combined = u.step_values(s + j0).to_vec();
                if e_shifted.contains_step(s) {
                    for (c, &v) in combined.iter_mut().zip(cert.control.step_values(s)) {
                        *c += v;
                    }
                }
                *row = combined;
            }
        }
        let improved = ControlSignal::try_new(
            grid.clone(),
            total_tgrid.clone(),
            u.space_mask().clone(),
            TimeSet::full(&total_tgrid),
            values,
            bound_m,
            u.exponent(),
        )?;
        let replay = control_to_state(Dynamics::Semilinear(f), y0, &improved)?;
        let residual = replay.l2_at(total_steps);
        if residual > terminal_tol || !improved.is_admissible() {
            continue;
        }
        return Ok(ImproveOutcome::Improved(Box::new(ImprovementReport {
            original_time: tgrid.t_final(),
            epsilon0,
            e_star,
            delta0,
            delta,
            t_new: total_tgrid.t_final(),
            max_step_norm: improved.max_step_norm(),
            improved_control: improved,
            residual_at_t_new: residual,
            corrector_max_norm: v_norm,
            continuity_trace,
        })));
    }

    let trace: Vec<String> = continuity_trace
        .iter()
        .map(|(d, v)| format!("({:.5}, {:.3e})", d.as_f64(), v.as_f64()))
        .collect();
    Err(Error::Infeasible(format!(
        "shift-candidate search exhausted without an admissible corrector; \
         continuity of t -> y*(t): [{}]",
        trace.join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_grid() -> (Grid1D<f64>, RegionMask<f64>) {
        let grid = Grid1D::new(49).unwrap();
        let omega = RegionMask::new(&grid, 0.3, 0.7).unwrap();
        (grid, omega)
    }

    fn coarse_params() -> TimeOptParams<f64> {
        TimeOptParams {
            dt_target: 5e-3,
            tol_t: 0.02,
            terminal_tol: 1e-3,
            t_max: 16.0,
            picard: PicardOptions::default(),
        }
    }

    #[test]
    fn minimal_norm_zero_state_is_zero() {
        let (grid, omega) = standard_grid();
        let out = minimal_norm(
            &grid,
            &Nonlinearity::Zero,
            &vec![0.0; 49],
            0.5,
            &omega,
            &coarse_params(),
        )
        .unwrap();
        assert_eq!(out.sample.norm, 0.0);
        assert!(out.sample.feasible);
    }

    #[test]
    fn minimal_norm_decreases_in_horizon() {
        let (grid, omega) = standard_grid();
        let y0 = grid.sine_mode(1);
        let params = coarse_params();
        let n1 = minimal_norm(&grid, &Nonlinearity::Zero, &y0, 0.4, &omega, &params)
            .unwrap()
            .sample
            .norm;
        let n2 = minimal_norm(&grid, &Nonlinearity::Zero, &y0, 0.8, &omega, &params)
            .unwrap()
            .sample
            .norm;
        assert!(n2 < n1, "N(0.8) = {n2} vs N(0.4) = {n1}");
    }

    #[test]
    fn optimal_time_standard_linear_instance() {
        let (grid, omega) = standard_grid();
        let y0 = grid.sine_mode(1);
        let params = coarse_params();
        let m = {
            // pick a budget hitting T* around 0.4
            minimal_norm(&grid, &Nonlinearity::Zero, &y0, 0.4, &omega, &params)
                .unwrap()
                .sample
                .norm
        };
        let result = optimal_time(&grid, &Nonlinearity::Zero, &y0, m, &omega, &params).unwrap();
        assert!(!result.degenerate);
        assert!(result.bracket.1 - result.bracket.0 <= params.tol_t + 1e-12);
        assert!(
            (result.t_star - 0.4).abs() <= 0.1,
            "t_star = {}",
            result.t_star
        );

        // bisection invariant: the curve is consistent with the bracket
        for s in &result.n_curve {
            if s.horizon <= result.bracket.0 + 1e-12 {
                assert!(
                    !(s.feasible && s.norm <= m),
                    "horizon {} below bracket should be infeasible",
                    s.horizon
                );
            }
        }
        // n-curve nonincreasing within the noise band
        for w in result.n_curve.windows(2) {
            if w[0].feasible && w[1].feasible {
                assert!(
                    w[1].norm <= w[0].norm + 1e-3 * m,
                    "N-curve increased: {} -> {} at {} -> {}",
                    w[0].norm,
                    w[1].norm,
                    w[0].horizon,
                    w[1].horizon
                );
            }
        }
        // self-consistency: N(T*) within 5% of M
        let n_at_star = result
            .n_curve
            .iter()
            .min_by(|a, b| {
                (a.horizon - result.t_star)
                    .abs()
                    .partial_cmp(&(b.horizon - result.t_star).abs())
                    .unwrap()
            })
            .unwrap()
            .norm;
        assert!(
            n_at_star >= 0.95 * m && n_at_star <= 1.05 * m,
            "N(T*) = {n_at_star} vs M = {m}"
        );

        // replay reaches the tolerance
        assert!(result.trajectory.l2_at(result.trajectory.tgrid().n_steps()) <= 1e-3);

        // saturation: interior steps hug the budget
        let report = bang_bang_profile(&result, &SaturationOptions::default());
        assert!(!report.degenerate);
        assert!(
            report.saturated_fraction_interior >= 0.9,
            "saturated fraction {}",
            report.saturated_fraction_interior
        );
        assert!(report.violations.is_empty());
    }

    #[test]
    fn optimal_time_large_budget_stays_below_reference_horizon() {
        // budget at least N(T0) forces T* <= T0
        let (grid, omega) = standard_grid();
        let y0 = grid.sine_mode(1);
        let mut params = coarse_params();
        params.tol_t = 0.05;
        let t0 = 0.1;
        let n_t0 = minimal_norm(&grid, &Nonlinearity::Zero, &y0, t0, &omega, &params)
            .unwrap()
            .sample
            .norm;
        let result =
            optimal_time(&grid, &Nonlinearity::Zero, &y0, 2.0 * n_t0, &omega, &params).unwrap();
        assert!(
            result.t_star <= t0 + params.tol_t,
            "t_star = {} vs T0 = {t0}",
            result.t_star
        );
    }

    #[test]
    fn suboptimal_control_reported_unsaturated() {
        let (grid, omega) = standard_grid();
        let y0 = grid.sine_mode(1);
        let params = coarse_params();
        let m = minimal_norm(&grid, &Nonlinearity::Zero, &y0, 0.3, &omega, &params)
            .unwrap()
            .sample
            .norm;
        // control computed at double the horizon has strictly smaller norms
        let long = minimal_norm(&grid, &Nonlinearity::Zero, &y0, 0.6, &omega, &params)
            .unwrap()
            .control
            .unwrap()
            .with_bound(m);
        let report = saturation_profile(&long, &SaturationOptions::default());
        assert!(
            report.saturated_fraction_interior < 0.5,
            "fraction {}",
            report.saturated_fraction_interior
        );
        assert!(!report.violations.is_empty());
    }

    #[test]
    fn zero_control_profile_is_degenerate() {
        let (grid, omega) = standard_grid();
        let tgrid = TimeGrid::new(0.5, 100).unwrap();
        let zero = ControlSignal::zero(
            grid.clone(),
            tgrid.clone(),
            omega,
            TimeSet::full(&tgrid),
            1.0,
            2.0,
        );
        let report = saturation_profile(&zero, &SaturationOptions::default());
        assert!(report.degenerate);
    }

    #[test]
    fn improve_trivial_when_already_at_target() {
        let (grid, omega) = standard_grid();
        let tgrid = TimeGrid::new(0.5, 100).unwrap();
        let zero = ControlSignal::zero(
            grid.clone(),
            tgrid.clone(),
            omega,
            TimeSet::full(&tgrid),
            1.0,
            2.0,
        );
        let out = improve_control(
            &grid,
            &Nonlinearity::Zero,
            &vec![0.0; 49],
            &zero,
            1e-3,
            &ImproveOptions::default(),
        )
        .unwrap();
        match out {
            ImproveOutcome::AlreadyAtTarget { t_new } => assert_eq!(t_new, 0.0),
            other => panic!("expected trivial outcome, got {other:?}"),
        }
    }

    #[test]
    fn improve_constructed_slack_instance() {
        // a control computed under bound 0.8 M but run under bound M has
        // uniform slack; the improvement must shorten the horizon
        let (grid, omega) = standard_grid();
        let y0 = grid.sine_mode(1);
        let mut params = coarse_params();
        params.terminal_tol = 5e-4; // leave residual headroom for the corrector
        let sub = minimal_norm(&grid, &Nonlinearity::Zero, &y0, 0.5, &omega, &params)
            .unwrap()
            .control
            .unwrap();
        let m = sub.max_step_norm() / 0.8;
        let u = sub.with_bound(m);

        let out = improve_control(
            &grid,
            &Nonlinearity::Zero,
            &y0,
            &u,
            1e-3,
            &ImproveOptions::default(),
        )
        .unwrap();
        match out {
            ImproveOutcome::Improved(report) => {
                assert!(report.t_new < 0.5, "t_new = {}", report.t_new);
                assert!(report.residual_at_t_new <= 1e-3);
                assert!(report.max_step_norm <= m * (1.0 + 1e-9));
                assert!(
                    report.epsilon0 >= 0.19 * m,
                    "epsilon0 = {}",
                    report.epsilon0
                );
                assert!(
                    0.5 - report.t_new >= report.delta0 - report.delta - 1e-12,
                    "margin {} vs {}",
                    0.5 - report.t_new,
                    report.delta0 - report.delta
                );
            }
            other => panic!("expected improvement, got {other:?}"),
        }
    }

    #[test]
    fn improve_optimal_control_not_improvable() {
        let (grid, omega) = standard_grid();
        let y0 = grid.sine_mode(1);
        let params = coarse_params();
        let m = minimal_norm(&grid, &Nonlinearity::Zero, &y0, 0.4, &omega, &params)
            .unwrap()
            .sample
            .norm;
        let result = optimal_time(&grid, &Nonlinearity::Zero, &y0, m, &omega, &params).unwrap();
        let out = improve_control(
            &grid,
            &Nonlinearity::Zero,
            &y0,
            &result.control,
            params.terminal_tol,
            &ImproveOptions::default(),
        )
        .unwrap();
        match out {
            ImproveOutcome::NotImprovable {
                max_slack,
                required_slack,
                ..
            } => {
                assert!(max_slack < required_slack);
            }
            other => panic!("expected not-improvable, got {other:?}"),
        }
        // the two diagnostics agree on the same control at matching
        // thresholds: saturated profile <=> not improvable
        let report = bang_bang_profile(&result, &SaturationOptions::default());
        assert!(
            report.saturated_fraction_interior >= 0.9 && report.violations.is_empty(),
            "profile disagrees with the improvement verdict"
        );
    }
}
