//! Semilinear reaction terms.
//!
//! Every built-in kind is C^1, vanishes at the origin and satisfies the
//! dissipativity (sign) condition f(y) y >= 0. Tabulated terms are
//! piecewise linear; constructing one through [`Nonlinearity::table`]
//! checks the sign condition on the sample points and rejects violators,
//! while [`Nonlinearity::table_unchecked`] skips that check for terms
//! that are only locally Lipschitz (the null-control machinery needs
//! nothing more; the free-decay constructions do).

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Piecewise-linear tabulated term with constant extension outside the
/// sampled range.
#[derive(Debug, Clone, PartialEq)]
pub struct TableData<T> {
    /// Strictly increasing sample abscissae.
    pub ys: Vec<T>,
    /// Sample values `f(ys[i])`.
    pub fs: Vec<T>,
    /// Whether the sign condition was verified on the samples.
    pub sign_verified: bool,
}

/// A reaction term f in `y_t - lap y + f(y) = g`.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity<T> {
    /// f = 0.
    Zero,
    /// f(y) = y^3.
    Cubic,
    /// f(y) = y^p for an odd positive exponent p.
    OddPower(u32),
    /// f(y) = y |y| / (1 + |y|), bounded slope at infinity.
    Saturating,
    /// Piecewise-linear table.
    Table(TableData<T>),
}

impl<T: Real> Nonlinearity<T> {
    /// Odd-power term y^p; the exponent must be odd so the sign
    /// condition holds.
    pub fn odd_power(p: u32) -> Result<Self> {
        if p == 0 || p.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "odd_power exponent must be an odd positive integer, got {p}"
            )));
        }
        Ok(Nonlinearity::OddPower(p))
    }

    /// Tabulated term from (y, f(y)) samples. Requires strictly increasing
    /// abscissae, finite values, f interpolating zero at the origin, and
    /// the sign condition f(y) y >= 0 on every sample.
    pub fn table(points: &[(T, T)]) -> Result<Self> {
        let data = Self::validate_table(points)?;
        for &(y, f) in points {
            if f * y < T::zero() {
                return Err(Error::SignCondition(format!(
                    "table sample f({y}) = {f} violates f(y)*y >= 0"
                )));
            }
        }
        Ok(Nonlinearity::Table(TableData {
            sign_verified: true,
            ..data
        }))
    }

    /// Tabulated term without the sign-condition check. Only locally
    /// Lipschitz continuity is guaranteed; operations that rely on free
    /// decay reject such terms.
    pub fn table_unchecked(points: &[(T, T)]) -> Result<Self> {
        let data = Self::validate_table(points)?;
        Ok(Nonlinearity::Table(TableData {
            sign_verified: false,
            ..data
        }))
    }

    fn validate_table(points: &[(T, T)]) -> Result<TableData<T>> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter(
                "table needs at least two sample points".into(),
            ));
        }
        for w in points.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::InvalidParameter(
                    "table abscissae must be strictly increasing".into(),
                ));
            }
        }
        if points
            .iter()
            .any(|&(y, f)| !y.is_finite() || !f.is_finite())
        {
            return Err(Error::NonFinite("nonlinearity table"));
        }
        let ys: Vec<T> = points.iter().map(|p| p.0).collect();
        let fs: Vec<T> = points.iter().map(|p| p.1).collect();
        let data = TableData {
            ys,
            fs,
            sign_verified: false,
        };
        let at_zero = table_eval(&data, T::zero());
        if at_zero.abs() > T::of(1e-12) {
            return Err(Error::InvalidParameter(format!(
                "table must interpolate f(0) = 0, got {at_zero}"
            )));
        }
        Ok(data)
    }

    /// Whether f(y) y >= 0 is guaranteed.
    pub fn sign_condition(&self) -> bool {
        match self {
            Nonlinearity::Table(t) => t.sign_verified,
            _ => true,
        }
    }

    /// f(y).
    pub fn evaluate(&self, y: T) -> T {
        match self {
            Nonlinearity::Zero => T::zero(),
            Nonlinearity::Cubic => y * y * y,
            Nonlinearity::OddPower(p) => y.powi(*p as i32),
            Nonlinearity::Saturating => y * y.abs() / (T::one() + y.abs()),
            Nonlinearity::Table(t) => table_eval(t, y),
        }
    }

    /// f'(y). For tables this is the slope of the active segment (the
    /// right-hand slope at a kink, zero outside the sampled range).
    pub fn derivative(&self, y: T) -> T {
        match self {
            Nonlinearity::Zero => T::zero(),
            Nonlinearity::Cubic => T::of(3.0) * y * y,
            Nonlinearity::OddPower(p) => T::of_usize(*p as usize) * y.powi(*p as i32 - 1),
            Nonlinearity::Saturating => {
                let s = y.abs();
                (s * s + T::of(2.0) * s) / ((T::one() + s) * (T::one() + s))
            }
            Nonlinearity::Table(t) => table_slope(t, y),
        }
    }

    /// Upper bound on the Lipschitz constant of f on [-K, K]. Closed
    /// form for the built-ins; for tables the maximal segment slope over
    /// the window, widened by a 10% safety factor.
    pub fn lipschitz_on(&self, cap: T) -> T {
        assert!(cap >= T::zero(), "lipschitz_on: radius must be >= 0");
        match self {
            Nonlinearity::Zero => T::zero(),
            Nonlinearity::Cubic => T::of(3.0) * cap * cap,
            Nonlinearity::OddPower(p) => T::of_usize(*p as usize) * cap.powi(*p as i32 - 1),
            Nonlinearity::Saturating => {
                let s = cap;
                (s * s + T::of(2.0) * s) / ((T::one() + s) * (T::one() + s))
            }
            Nonlinearity::Table(t) => {
                let mut m = T::zero();
                for i in 0..t.ys.len() - 1 {
                    if t.ys[i + 1] < -cap || t.ys[i] > cap {
                        continue;
                    }
                    let slope = (t.fs[i + 1] - t.fs[i]) / (t.ys[i + 1] - t.ys[i]);
                    m = m.max(slope.abs());
                }
                m * T::of(1.1)
            }
        }
    }

    /// Whether [`Self::lipschitz_on`] is a closed form (true) or a
    /// sampled estimate with a safety factor (tables).
    pub fn lipschitz_is_exact(&self) -> bool {
        !matches!(self, Nonlinearity::Table(_))
    }

    /// The linearized quotient potential
    /// `a(phi, r) = (f(phi + r) - f(phi)) / r`, continued by `f'(phi)`
    /// at r = 0. Satisfies `a * r = f(phi + r) - f(phi)` identically.
    pub fn linearized_potential(&self, phi: T, r: T) -> T {
        if r == T::zero() {
            self.derivative(phi)
        } else {
            (self.evaluate(phi + r) - self.evaluate(phi)) / r
        }
    }
}

fn table_eval<T: Real>(t: &TableData<T>, y: T) -> T {
    let n = t.ys.len();
    if y <= t.ys[0] {
        return t.fs[0];
    }
    if y >= t.ys[n - 1] {
        return t.fs[n - 1];
    }
    let mut i = match t.ys.partition_point(|&a| a <= y) {
        0 => 0,
        k => k - 1,
    };
    if i >= n - 1 {
        i = n - 2;
    }
    let frac = (y - t.ys[i]) / (t.ys[i + 1] - t.ys[i]);
    t.fs[i] + frac * (t.fs[i + 1] - t.fs[i])
}

fn table_slope<T: Real>(t: &TableData<T>, y: T) -> T {
    let n = t.ys.len();
    if y < t.ys[0] || y > t.ys[n - 1] {
        return T::zero();
    }
    let mut i = match t.ys.partition_point(|&a| a <= y) {
        0 => 0,
        k => k - 1,
    };
    if i >= n - 1 {
        i = n - 2;
    }
    (t.fs[i + 1] - t.fs[i]) / (t.ys[i + 1] - t.ys[i])
}

/// Truncation of a reaction term at a cap: constant outside [-cap, cap],
/// identical inside, globally Lipschitz with constant
/// `base.lipschitz_on(cap)`.
#[derive(Debug, Clone)]
pub struct TruncatedNonlinearity<'a, T> {
    base: &'a Nonlinearity<T>,
    cap: T,
}

impl<'a, T: Real> TruncatedNonlinearity<'a, T> {
    pub fn new(base: &'a Nonlinearity<T>, cap: T) -> Self {
        assert!(cap > T::zero(), "truncation cap must be positive");
        TruncatedNonlinearity { base, cap }
    }

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn evaluate(&self, y: T) -> T {
        self.base.evaluate(clamp_abs(y, self.cap))
    }

    pub fn derivative(&self, y: T) -> T {
        if y.abs() > self.cap {
            T::zero()
        } else {
            self.base.derivative(y)
        }
    }

    pub fn global_lipschitz(&self) -> T {
        self.base.lipschitz_on(self.cap)
    }
}

fn clamp_abs<T: Real>(y: T, cap: T) -> T {
    y.max(-cap).min(cap)
}
