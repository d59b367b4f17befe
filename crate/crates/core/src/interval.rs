use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Sub};

/// Closed interval `[lo, hi]` used for certified norms and observables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "inverted interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    /// `[v, v + tail]`, the shape produced by a stored value plus a nonnegative tail bound.
    pub fn with_tail(v: f64, tail: f64) -> Self {
        Interval { lo: v, hi: v + tail }
    }

    /// `[v, +inf)`, used when no tail certificate exists.
    pub fn lower_bound(v: f64) -> Self {
        Interval { lo: v, hi: f64::INFINITY }
    }

    pub fn mid(&self) -> f64 {
        if self.hi.is_finite() {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_certified(&self) -> bool {
        self.hi.is_finite()
    }

    /// Largest relative deviation of either endpoint from `target`.
    pub fn rel_error(&self, target: f64) -> f64 {
        let scale = target.abs().max(f64::MIN_POSITIVE);
        ((self.lo - target).abs().max((self.hi - target).abs())) / scale
    }

    /// Product of two intervals with nonnegative endpoints.
    pub fn mul_nonneg(self, other: Interval) -> Interval {
        Interval::new(self.lo * other.lo, self.hi * other.hi)
    }

    /// Quotient of two intervals with positive endpoints.
    pub fn div_pos(self, other: Interval) -> Interval {
        Interval::new(self.lo / other.hi, self.hi / other.lo)
    }

    pub fn recip_pos(self) -> Interval {
        Interval::new(1.0 / self.hi, 1.0 / self.lo)
    }

    pub fn scale(self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval::new(self.lo * c, self.hi * c)
        } else {
            Interval::new(self.hi * c, self.lo * c)
        }
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::new(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::new(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Mul<f64> for Interval {
    type Output = Interval;
    fn mul(self, rhs: f64) -> Interval {
        self.scale(rhs)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.12e}, {:.12e}]", self.lo, self.hi)
    }
}
