//! Brute-force reference for the minimal sup-in-time control norm.
//!
//! Everything here is built from scratch on purpose: dense step
//! matrices, dense Gaussian elimination, an explicit control-to-terminal
//! matrix, and a bisection over the norm bound with projected-gradient
//! least-squares feasibility checks. It shares no code with the dual
//! solver it is used to check.

#![allow(clippy::needless_range_loop)]

/// Dense linear solve by Gaussian elimination with partial pivoting.
fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot_row);
        let pivot = m[col][col];
        assert!(pivot.abs() > 1e-14, "singular step matrix");
        for row in 0..n {
            if row != col {
                let factor = m[row][col] / pivot;
                for k in col..=n {
                    let v = m[col][k];
                    m[row][k] -= factor * v;
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

/// The implicit step matrix `I + dt(L + a I)` with the three-point
/// Dirichlet Laplacian, assembled densely.
fn step_matrix(n: usize, dt: f64, h: f64, a_constant: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    let r = dt / (h * h);
    for i in 0..n {
        m[i][i] = 1.0 + 2.0 * r + dt * a_constant;
        if i > 0 {
            m[i][i - 1] = -r;
        }
        if i + 1 < n {
            m[i][i + 1] = -r;
        }
    }
    m
}

/// Explicit control-to-terminal map: columns indexed by (step in E,
/// node in omega), plus the free terminal state of `w0`.
pub struct DenseControlMap {
    /// Terminal-state columns, one per control degree of freedom.
    pub columns: Vec<Vec<f64>>,
    /// (step, node) of each column.
    pub dof: Vec<(usize, usize)>,
    /// Free evolution of the initial state at the horizon.
    pub free_terminal: Vec<f64>,
    pub n: usize,
    pub n_steps: usize,
    pub h: f64,
}

pub fn build_dense_map(
    n: usize,
    n_steps: usize,
    t_final: f64,
    a_constant: f64,
    omega_flags: &[bool],
    e_flags: &[bool],
    w0: &[f64],
) -> DenseControlMap {
    assert_eq!(omega_flags.len(), n);
    assert_eq!(e_flags.len(), n_steps);
    assert_eq!(w0.len(), n);
    let h = 1.0 / (n as f64 + 1.0);
    let dt = t_final / n_steps as f64;
    let m = step_matrix(n, dt, h, a_constant);

    let propagate_from = |start: usize, v: &[f64]| -> Vec<f64> {
        let mut state = v.to_vec();
        for _ in start..n_steps {
            state = dense_solve(&m, &state);
        }
        state
    };

    let mut columns = Vec::new();
    let mut dof = Vec::new();
    for k in 0..n_steps {
        if !e_flags[k] {
            continue;
        }
        for j in 0..n {
            if !omega_flags[j] {
                continue;
            }
            let mut impulse = vec![0.0; n];
            impulse[j] = dt;
            columns.push(propagate_from(k, &impulse));
            dof.push((k, j));
        }
    }
    let free_terminal = propagate_from(0, w0);
    DenseControlMap {
        columns,
        dof,
        free_terminal,
        n,
        n_steps,
        h,
    }
}

impl DenseControlMap {
    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.free_terminal.clone();
        for (col, &ui) in self.columns.iter().zip(u) {
            for (o, &c) in out.iter_mut().zip(col) {
                *o += ui * c;
            }
        }
        out
    }

    fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|col| col.iter().zip(v).map(|(&c, &vi)| c * vi).sum())
            .collect()
    }

    fn h_norm(&self, v: &[f64]) -> f64 {
        (self.h * v.iter().map(|&x| x * x).sum::<f64>()).sqrt()
    }

    /// Project each step block onto the h-weighted ball of radius m.
    fn project(&self, u: &mut [f64], bound: f64) {
        let mut by_step: Vec<Vec<usize>> = vec![Vec::new(); self.n_steps];
        for (idx, &(k, _)) in self.dof.iter().enumerate() {
            by_step[k].push(idx);
        }
        for idxs in by_step.iter().filter(|v| !v.is_empty()) {
            let norm = (self.h * idxs.iter().map(|&i| u[i] * u[i]).sum::<f64>()).sqrt();
            if norm > bound {
                let scale = bound / norm;
                for &i in idxs {
                    u[i] *= scale;
                }
            }
        }
    }

    /// Smallest achievable terminal h-norm with per-step norms at most
    /// `bound`, by accelerated projected gradient.
    fn best_residual(&self, bound: f64, iters: usize) -> f64 {
        // Lipschitz constant of the gradient via power iteration
        let mut v: Vec<f64> = (0..self.columns.len())
            .map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 + 0.1)
            .collect();
        let mut lip = 1.0;
        for _ in 0..40 {
            let gv = self.apply_transpose(&{
                let mut out = vec![0.0; self.n];
                for (col, &vi) in self.columns.iter().zip(&v) {
                    for (o, &c) in out.iter_mut().zip(col) {
                        *o += vi * c;
                    }
                }
                out
            });
            let norm = gv.iter().map(|&x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lip = norm;
            v = gv.iter().map(|&x| x / norm).collect();
        }
        let step = 1.0 / (2.0 * self.h * lip).max(1e-300);

        let dim = self.columns.len();
        let mut u = vec![0.0; dim];
        let mut y = u.clone();
        let mut theta = 1.0f64;
        let mut best = f64::INFINITY;
        for _ in 0..iters {
            let res = self.apply(&y);
            let grad = self.apply_transpose(&res);
            let mut u_new: Vec<f64> = y
                .iter()
                .zip(&grad)
                .map(|(&yi, &gi)| yi - step * 2.0 * self.h * gi)
                .collect();
            self.project(&mut u_new, bound);
            let theta_new = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
            let momentum = (theta - 1.0) / theta_new;
            y = u_new
                .iter()
                .zip(&u)
                .map(|(&a, &b)| a + momentum * (a - b))
                .collect();
            u = u_new;
            theta = theta_new;
            let attained = self.h_norm(&self.apply(&u));
            if attained < best {
                best = attained;
            }
        }
        best
    }

    /// Minimal sup-in-time norm reaching a terminal residual at most
    /// `residual_target`, by bisection on the bound.
    pub fn min_max_norm(&self, residual_target: f64) -> f64 {
        let feasible = |m: f64| self.best_residual(m, 4000) <= residual_target;
        let mut hi = 1e-6;
        let mut grow = 0;
        while !feasible(hi) {
            hi *= 2.0;
            grow += 1;
            assert!(grow < 80, "no feasible bound found");
        }
        let mut lo = 0.0;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-5 * hi {
                break;
            }
        }
        hi
    }
}
