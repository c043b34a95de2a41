//! Spatial and temporal discretization of the unit interval.
//!
//! The domain is fixed to (0,1) with homogeneous Dirichlet conditions;
//! only interior node values are ever stored, the boundary values are
//! implicitly zero. All quadrature is the midpoint/rectangle rule with
//! weight `h`, which makes the discrete sine modes exactly orthogonal.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform grid of interior nodes on (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D<T> {
    n_interior: usize,
    h: T,
    node_coords: Vec<T>,
}

impl<T: Real> Grid1D<T> {
    /// Grid with `n_interior` uniformly spaced interior nodes,
    /// spacing `h = 1/(n_interior+1)`.
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidParameter(
                "grid needs at least one interior node".into(),
            ));
        }
        let h = T::one() / T::of_usize(n_interior + 1);
        let node_coords = (1..=n_interior).map(|i| T::of_usize(i) * h).collect();
        Ok(Grid1D {
            n_interior,
            h,
            node_coords,
        })
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn spacing(&self) -> T {
        self.h
    }

    pub fn node_coords(&self) -> &[T] {
        &self.node_coords
    }

    /// Sample a function of x at every interior node.
    pub fn sample(&self, f: impl Fn(T) -> T) -> Vec<T> {
        self.node_coords.iter().map(|&x| f(x)).collect()
    }

    /// The k-th discrete Dirichlet sine mode, sin(k pi x_i), 1 <= k <= n.
    pub fn sine_mode(&self, k: usize) -> Vec<T> {
        assert!(
            k >= 1 && k <= self.n_interior,
            "sine mode index out of range"
        );
        let kpi = T::of_usize(k) * T::PI();
        self.sample(|x| (kpi * x).sin())
    }

    /// Eigenvalue of the discrete Dirichlet Laplacian for mode k:
    /// (4/h^2) sin^2(k pi h / 2).
    pub fn mode_eigenvalue(&self, k: usize) -> T {
        let half = T::of(0.5);
        let s = (T::of_usize(k) * T::PI() * self.h * half).sin();
        T::of(4.0) / (self.h * self.h) * s * s
    }
}

/// Three-point second difference with zero ghost values at both
/// boundaries: (f_{i-1} - 2 f_i + f_{i+1}) / h^2.
pub fn laplacian_apply<T: Real>(grid: &Grid1D<T>, field: &[T]) -> Vec<T> {
    let n = grid.n_interior();
    assert_eq!(field.len(), n, "laplacian_apply: field length mismatch");
    let inv_h2 = T::one() / (grid.spacing() * grid.spacing());
    let two = T::of(2.0);
    (0..n)
        .map(|i| {
            let left = if i > 0 { field[i - 1] } else { T::zero() };
            let right = if i + 1 < n { field[i + 1] } else { T::zero() };
            (left - two * field[i] + right) * inv_h2
        })
        .collect()
}

/// Discrete L^q norm: `(h sum |f_i|^q)^(1/q)` for finite q, `max |f_i|`
/// for q = infinity.
pub fn lq_norm<T: Real>(grid: &Grid1D<T>, field: &[T], q: T) -> T {
    assert_eq!(field.len(), grid.n_interior(), "lq_norm: length mismatch");
    assert!(q >= T::one(), "lq_norm: exponent must be >= 1");
    if q.is_infinite() {
        return sup_norm(field);
    }
    let two = T::of(2.0);
    let sum = if q == two {
        field.iter().map(|&v| v * v).sum::<T>()
    } else {
        field.iter().map(|&v| v.abs().powf(q)).sum::<T>()
    };
    (grid.spacing() * sum).powf(T::one() / q)
}

/// Discrete L^2 pairing: `h sum f_i g_i`.
pub fn inner_product<T: Real>(grid: &Grid1D<T>, f: &[T], g: &[T]) -> T {
    assert_eq!(f.len(), g.len(), "inner_product: length mismatch");
    assert_eq!(f.len(), grid.n_interior(), "inner_product: length mismatch");
    grid.spacing() * f.iter().zip(g).map(|(&a, &b)| a * b).sum::<T>()
}

/// Maximum absolute nodal value.
pub fn sup_norm<T: Real>(field: &[T]) -> T {
    field.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

/// Smallest eigenvalue of the discrete Dirichlet Laplacian,
/// `(4/h^2) sin^2(pi h/2)`. Approaches pi^2 from below as the grid is
/// refined.
pub fn first_eigenvalue<T: Real>(grid: &Grid1D<T>) -> T {
    grid.mode_eigenvalue(1)
}

/// Indicator of a spatial subinterval `[left, right]` of (0,1), the region
/// where the control acts.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask<T> {
    grid: Grid1D<T>,
    member_flags: Vec<bool>,
    interval: (T, T),
}

impl<T: Real> RegionMask<T> {
    /// Mask of the nodes with coordinate in `[left, right]`. The region
    /// must be non-degenerate and contain at least one node.
    pub fn new(grid: &Grid1D<T>, left: T, right: T) -> Result<Self> {
        if !(left >= T::zero() && left < right && right <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "region [{left}, {right}] is not a non-degenerate subinterval of [0,1]"
            )));
        }
        // slack of a few ulps (scaled by h) so decimal endpoints like 0.7
        // still capture the node at 7h
        let slack = grid.spacing() * T::of(1e-9);
        let member_flags: Vec<bool> = grid
            .node_coords()
            .iter()
            .map(|&x| x >= left - slack && x <= right + slack)
            .collect();
        if !member_flags.iter().any(|&f| f) {
            return Err(Error::InvalidParameter(format!(
                "region [{left}, {right}] contains no grid node"
            )));
        }
        Ok(RegionMask {
            grid: grid.clone(),
            member_flags,
            interval: (left, right),
        })
    }

    /// Mask covering the whole domain.
    pub fn full(grid: &Grid1D<T>) -> Self {
        RegionMask {
            grid: grid.clone(),
            member_flags: vec![true; grid.n_interior()],
            interval: (T::zero(), T::one()),
        }
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn flags(&self) -> &[bool] {
        &self.member_flags
    }

    pub fn interval(&self) -> (T, T) {
        self.interval
    }

    pub fn contains(&self, node: usize) -> bool {
        self.member_flags[node]
    }

    pub fn node_count(&self) -> usize {
        self.member_flags.iter().filter(|&&f| f).count()
    }

    /// Interval length, the measure used in reports.
    pub fn measure(&self) -> T {
        self.interval.1 - self.interval.0
    }

    /// Zero out the entries of `field` outside the region.
    pub fn apply(&self, field: &[T]) -> Vec<T> {
        assert_eq!(field.len(), self.member_flags.len());
        field
            .iter()
            .zip(&self.member_flags)
            .map(|(&v, &keep)| if keep { v } else { T::zero() })
            .collect()
    }
}

/// Uniform partition of (0, t_final) into `n_steps` implicit Euler steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    t_final: T,
    n_steps: usize,
    dt: T,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_final: T, n_steps: usize) -> Result<Self> {
        if !(t_final > T::zero()) || !t_final.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time horizon must be positive and finite, got {t_final}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter(
                "time grid needs at least one step".into(),
            ));
        }
        let dt = t_final / T::of_usize(n_steps);
        Ok(TimeGrid {
            t_final,
            n_steps,
            dt,
        })
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Time of snapshot `k`, k = 0..=n_steps.
    pub fn time(&self, k: usize) -> T {
        assert!(k <= self.n_steps);
        T::of_usize(k) * self.dt
    }

    /// Midpoint of step `k`, strictly inside (0, t_final).
    pub fn step_midpoint(&self, k: usize) -> T {
        assert!(k < self.n_steps);
        (T::of_usize(k) + T::of(0.5)) * self.dt
    }

    pub fn step_midpoints(&self) -> Vec<T> {
        (0..self.n_steps).map(|k| self.step_midpoint(k)).collect()
    }
}

/// Finite union of disjoint subintervals of (0, t_final): the time set
/// on which observation or control acts. A step belongs to the set iff
/// its midpoint does.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSet<T> {
    intervals: Vec<(T, T)>,
    measure: T,
    step_flags: Vec<bool>,
}

impl<T: Real> TimeSet<T> {
    /// Build from a list of intervals; they are sorted and must be
    /// non-degenerate, within [0, t_final] and pairwise non-overlapping
    /// (touching endpoints are fine).
    pub fn new(tgrid: &TimeGrid<T>, intervals: &[(T, T)]) -> Result<Self> {
        let mut sorted = intervals.to_vec();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for &(l, r) in &sorted {
            if !(l >= T::zero() && l < r && r <= tgrid.t_final()) {
                return Err(Error::InvalidParameter(format!(
                    "time interval ({l}, {r}) is not a non-degenerate subinterval of (0, {})",
                    tgrid.t_final()
                )));
            }
        }
        for w in sorted.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::InvalidParameter(format!(
                    "time intervals ({}, {}) and ({}, {}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        let measure = sorted.iter().map(|&(l, r)| r - l).sum();
        let slack = tgrid.dt() * T::of(1e-9);
        let step_flags = (0..tgrid.n_steps())
            .map(|k| {
                let t = tgrid.step_midpoint(k);
                sorted
                    .iter()
                    .any(|&(l, r)| t >= l - slack && t <= r + slack)
            })
            .collect();
        Ok(TimeSet {
            intervals: sorted,
            measure,
            step_flags,
        })
    }

    /// The whole horizon (0, t_final).
    pub fn full(tgrid: &TimeGrid<T>) -> Self {
        TimeSet {
            intervals: vec![(T::zero(), tgrid.t_final())],
            measure: tgrid.t_final(),
            step_flags: vec![true; tgrid.n_steps()],
        }
    }

    /// Build directly from per-step flags; the intervals are the maximal
    /// runs of flagged steps.
    pub fn from_step_flags(tgrid: &TimeGrid<T>, flags: &[bool]) -> Result<Self> {
        assert_eq!(flags.len(), tgrid.n_steps(), "step flag count mismatch");
        let mut intervals = Vec::new();
        let mut run_start: Option<usize> = None;
        for k in 0..=flags.len() {
            let on = k < flags.len() && flags[k];
            match (run_start, on) {
                (None, true) => run_start = Some(k),
                (Some(s), false) => {
                    intervals.push((tgrid.time(s), tgrid.time(k)));
                    run_start = None;
                }
                _ => {}
            }
        }
        if intervals.is_empty() {
            return Ok(TimeSet {
                intervals,
                measure: T::zero(),
                step_flags: flags.to_vec(),
            });
        }
        let measure = intervals.iter().map(|&(l, r)| r - l).sum();
        Ok(TimeSet {
            intervals,
            measure,
            step_flags: flags.to_vec(),
        })
    }

    pub fn intervals(&self) -> &[(T, T)] {
        &self.intervals
    }

    pub fn measure(&self) -> T {
        self.measure
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn step_flags(&self) -> &[bool] {
        &self.step_flags
    }

    pub fn contains_step(&self, k: usize) -> bool {
        self.step_flags[k]
    }

    pub fn step_count(&self) -> usize {
        self.step_flags.iter().filter(|&&f| f).count()
    }

    /// The set {t : t + shift in E} on the shortened horizon, for a shift
    /// that is an exact multiple of dt (`shift_steps` steps). Used by the
    /// time-shift improvement construction.
    pub fn shifted_left(
        &self,
        tgrid: &TimeGrid<T>,
        new_tgrid: &TimeGrid<T>,
        shift_steps: usize,
    ) -> Result<Self> {
        assert_eq!(
            tgrid.n_steps(),
            self.step_flags.len(),
            "time set does not match its grid"
        );
        let flags: Vec<bool> = (0..new_tgrid.n_steps())
            .map(|k| {
                let src = k + shift_steps;
                src < self.step_flags.len() && self.step_flags[src]
            })
            .collect();
        Self::from_step_flags(new_tgrid, &flags)
    }
}
