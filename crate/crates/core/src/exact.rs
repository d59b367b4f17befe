//! Exact arithmetic: rational lattice fields with a common denominator and rational polynomials.

use crate::kernels::Rational;
use crate::lattice::{BoxIter, LatticeError, LatticeField};
use num::bigint::Sign;
use num::{BigInt, Integer, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// Best rational approximation with denominator at most `10⁶`, or the exact binary value
/// when no such approximation is within `1e-15`.
pub fn rationalize(x: f64) -> Rational {
    let mut best = None;
    // Continued fraction convergents.
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut r = x.abs();
    for _ in 0..40 {
        let a = r.floor();
        let ai = BigInt::from(a as i64);
        let h = &ai * &h1 + &h0;
        let k = &ai * &k1 + &k0;
        if k > BigInt::from(1_000_000) {
            break;
        }
        let q = Rational::new(h.clone(), k.clone());
        if (q.to_f64().unwrap_or(f64::NAN) - x.abs()).abs() <= 1e-15 * x.abs().max(1.0) {
            best = Some(q);
            break;
        }
        (h0, h1, k0, k1) = (h1, h, k1, k);
        let frac = r - a;
        if frac < 1e-300 {
            break;
        }
        r = 1.0 / frac;
    }
    let q = best.unwrap_or_else(|| Rational::from_float(x.abs()).expect("finite"));
    if x < 0.0 {
        -q
    } else {
        q
    }
}

pub fn to_f64(q: &Rational) -> f64 {
    crate::kernels::to_f64(q)
}

/// A real field on `Λ_radius` whose values are `num(x)/den` with integer `num` and `den > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactField {
    dim: usize,
    radius: usize,
    den: BigInt,
    num: Vec<BigInt>,
}

impl ExactField {
    pub fn zeros(dim: usize, radius: usize) -> Result<Self, LatticeError> {
        let len = LatticeField::checked_len(dim, radius)?;
        Ok(ExactField {
            dim,
            radius,
            den: BigInt::one(),
            num: vec![BigInt::zero(); len],
        })
    }

    pub fn delta(dim: usize) -> Self {
        ExactField {
            dim,
            radius: 0,
            den: BigInt::one(),
            num: vec![BigInt::one()],
        }
    }

    pub fn from_parts(dim: usize, radius: usize, num: Vec<BigInt>, den: BigInt) -> Result<Self, LatticeError> {
        let len = LatticeField::checked_len(dim, radius)?;
        if num.len() != len {
            return Err(LatticeError::WrongLength { got: num.len(), expected: len });
        }
        assert!(den.is_positive(), "denominator must be positive");
        Ok(ExactField { dim, radius, den, num })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn den(&self) -> &BigInt {
        &self.den
    }

    pub fn numerators(&self) -> &[BigInt] {
        &self.num
    }

    fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn index_of(&self, x: &[i32]) -> Option<usize> {
        let r = self.radius as i32;
        let side = self.side();
        x.iter().try_fold(0usize, |acc, &v| (v.abs() <= r).then(|| acc * side + (v + r) as usize))
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<i32> {
        let side = self.side();
        let mut c = vec![0i32; self.dim];
        for slot in c.iter_mut().rev() {
            *slot = (idx % side) as i32 - self.radius as i32;
            idx /= side;
        }
        c
    }

    pub fn numerator_at(&self, x: &[i32]) -> BigInt {
        self.index_of(x).map_or_else(BigInt::zero, |i| self.num[i].clone())
    }

    pub fn at(&self, x: &[i32]) -> Rational {
        Rational::new(self.numerator_at(x), self.den.clone())
    }

    /// Nonzero sites with their numerators.
    pub fn support(&self) -> impl Iterator<Item = (Vec<i32>, &BigInt)> + '_ {
        self.num
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, v)| (self.coords_of(i), v))
    }

    pub fn sum(&self) -> Rational {
        Rational::new(self.num.iter().sum(), self.den.clone())
    }

    /// Same values on a box of at least the current radius.
    pub fn grown(&self, radius: usize) -> Self {
        if radius <= self.radius {
            return self.clone();
        }
        let mut out = ExactField::zeros(self.dim, radius).expect("box fits");
        out.den = self.den.clone();
        for (c, v) in self.support() {
            let i = out.index_of(&c).expect("inside");
            out.num[i] = v.clone();
        }
        out
    }

    /// Same values with denominator `den`, which must be a multiple of the current one.
    pub fn with_den(&self, den: &BigInt) -> Self {
        let (factor, rem) = den.div_rem(&self.den);
        assert!(rem.is_zero(), "new denominator must be a multiple");
        ExactField {
            dim: self.dim,
            radius: self.radius,
            den: den.clone(),
            num: self.num.iter().map(|v| v * &factor).collect(),
        }
    }

    /// Divides out common factors of all numerators and the denominator.
    pub fn reduced(mut self) -> Self {
        let g = self.num.iter().fold(self.den.clone(), |g, v| g.gcd(v));
        if !g.is_one() && !g.is_zero() {
            self.num.iter_mut().for_each(|v| *v /= &g);
            self.den /= &g;
        }
        self
    }

    pub fn scaled(&self, q: &Rational) -> Self {
        ExactField {
            dim: self.dim,
            radius: self.radius,
            den: &self.den * q.denom(),
            num: self.num.iter().map(|v| v * q.numer()).collect(),
        }
        .reduced()
    }

    /// `a·self + b·other` on the larger box.
    pub fn combine(&self, a: &Rational, other: &ExactField, b: &Rational) -> Self {
        assert_eq!(self.dim, other.dim);
        let x = self.scaled(a);
        let y = other.scaled(b);
        let den = x.den.lcm(&y.den);
        let radius = x.radius.max(y.radius);
        let mut out = x.grown(radius).with_den(&den);
        for (c, v) in y.with_den(&den).support() {
            let i = out.index_of(&c).expect("inside");
            out.num[i] += v;
        }
        out.reduced()
    }

    /// Exact convolution.
    pub fn convolve(&self, other: &ExactField) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = ExactField::zeros(self.dim, self.radius + other.radius).expect("box fits");
        out.den = &self.den * &other.den;
        let right: Vec<(Vec<i32>, &BigInt)> = other.support().collect();
        for (a, va) in self.support() {
            for (b, vb) in &right {
                let s: Vec<i32> = a.iter().zip(b).map(|(p, q)| p + q).collect();
                let i = out.index_of(&s).expect("inside");
                out.num[i] += va * *vb;
            }
        }
        out.reduced()
    }

    /// `(self * 1_S)`, the sum of translates by every step in `steps`.
    pub fn step_sum(&self, steps: &[Vec<i32>]) -> Self {
        let reach = steps
            .iter()
            .flat_map(|s| s.iter().map(|v| v.unsigned_abs() as usize))
            .max()
            .unwrap_or(0);
        let mut out = ExactField::zeros(self.dim, self.radius + reach).expect("box fits");
        out.den = self.den.clone();
        for (a, v) in self.support() {
            for s in steps {
                let x: Vec<i32> = a.iter().zip(s).map(|(p, q)| p + q).collect();
                let i = out.index_of(&x).expect("inside");
                out.num[i] += v;
            }
        }
        out
    }

    /// Sign of `self(x) − other(x)` at each site of the larger box.
    pub fn difference_signs(&self, other: &ExactField) -> Vec<(Vec<i32>, Sign)> {
        let radius = self.radius.max(other.radius);
        BoxIter::new(self.dim, radius as i32)
            .map(|x| {
                let lhs = self.numerator_at(&x) * &other.den;
                let rhs = other.numerator_at(&x) * &self.den;
                (x, (lhs - rhs).sign())
            })
            .collect()
    }

    pub fn to_field(&self) -> LatticeField {
        let den = Rational::from_integer(self.den.clone());
        let values = self
            .num
            .iter()
            .map(|v| to_f64(&(Rational::from_integer(v.clone()) / &den)))
            .collect();
        LatticeField::from_values(self.dim, self.radius, values).expect("same shape")
    }

    pub fn is_nonnegative(&self) -> bool {
        self.num.iter().all(|v| !v.is_negative())
    }
}

impl Add for &ExactField {
    type Output = ExactField;
    fn add(self, rhs: &ExactField) -> ExactField {
        self.combine(&Rational::one(), rhs, &Rational::one())
    }
}

impl Sub for &ExactField {
    type Output = ExactField;
    fn sub(self, rhs: &ExactField) -> ExactField {
        self.combine(&Rational::one(), rhs, &-Rational::one())
    }
}

impl Mul for &ExactField {
    type Output = ExactField;
    fn mul(self, rhs: &ExactField) -> ExactField {
        self.convolve(rhs)
    }
}

/// Evaluates `Σ_k coeffs[k](x) t^k` exactly at every site of the largest box.
///
/// All coefficient fields are brought to one denominator so each site costs only integer work.
pub fn evaluate_polynomial_field(coeffs: &[ExactField], t: &Rational) -> Vec<(Vec<i32>, Rational)> {
    if coeffs.is_empty() {
        return Vec::new();
    }
    let radius = coeffs.iter().map(|c| c.radius).max().unwrap_or(0);
    let degree = coeffs.len() - 1;
    let den = coeffs.iter().fold(BigInt::one(), |acc, c| acc.lcm(&c.den));
    // t^k = a^k b^{degree−k} / b^degree.
    let (a, b) = (t.numer(), t.denom());
    let weights: Vec<BigInt> = (0..=degree)
        .map(|k| num::pow(a.clone(), k) * num::pow(b.clone(), degree - k))
        .collect();
    let scaled: Vec<ExactField> = coeffs.iter().map(|c| c.grown(radius).with_den(&den)).collect();
    let total_den = den * num::pow(b.clone(), degree);
    let probe = &scaled[0];
    (0..probe.num.len())
        .map(|i| {
            let n: BigInt = scaled.iter().zip(&weights).map(|(c, w)| &c.num[i] * w).sum();
            (probe.coords_of(i), Rational::new(n, total_den.clone()))
        })
        .collect()
}

/// A polynomial with rational coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Poly {
    pub coeffs: Vec<Rational>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: Rational) -> Self {
        Poly { coeffs: vec![c] }.trimmed()
    }

    pub fn monomial(c: Rational, degree: usize) -> Self {
        let mut coeffs = vec![Rational::zero(); degree + 1];
        coeffs[degree] = c;
        Poly { coeffs }.trimmed()
    }

    pub fn from_integers(coeffs: &[i64]) -> Self {
        Poly {
            coeffs: coeffs.iter().map(|&c| Rational::from_integer(c.into())).collect(),
        }
        .trimmed()
    }

    fn trimmed(mut self) -> Self {
        while self.coeffs.last().is_some_and(|c| c.is_zero()) {
            self.coeffs.pop();
        }
        self
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn coeff(&self, k: usize) -> Rational {
        self.coeffs.get(k).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn eval(&self, t: &Rational) -> Rational {
        self.coeffs.iter().rev().fold(Rational::zero(), |acc, c| acc * t + c)
    }

    pub fn eval_f64(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + to_f64(c))
    }

    pub fn derivative(&self) -> Poly {
        Poly {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * Rational::from_integer(k.into()))
                .collect(),
        }
        .trimmed()
    }

    /// Terms of degree at most `degree`.
    pub fn truncated(&self, degree: usize) -> Poly {
        Poly {
            coeffs: self.coeffs.iter().take(degree + 1).cloned().collect(),
        }
        .trimmed()
    }

    pub fn scaled(&self, c: &Rational) -> Poly {
        Poly {
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
        .trimmed()
    }

    /// `self · other` with terms above `degree` dropped.
    pub fn mul_truncated(&self, other: &Poly, degree: usize) -> Poly {
        let len = (self.coeffs.len() + other.coeffs.len()).saturating_sub(1).min(degree + 1);
        let mut out = vec![Rational::zero(); len];
        for (i, a) in self.coeffs.iter().enumerate().take(len) {
            for (j, b) in other.coeffs.iter().enumerate().take(len - i) {
                out[i + j] += a * b;
            }
        }
        Poly { coeffs: out }.trimmed()
    }

    pub fn has_nonnegative_coeffs(&self) -> bool {
        self.coeffs.iter().all(|c| !c.is_negative())
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Poly {
            coeffs: (0..n).map(|k| self.coeff(k) + rhs.coeff(k)).collect(),
        }
        .trimmed()
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Poly {
            coeffs: (0..n).map(|k| self.coeff(k) - rhs.coeff(k)).collect(),
        }
        .trimmed()
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        if self.coeffs.is_empty() || rhs.coeffs.is_empty() {
            return Poly::zero();
        }
        let mut out = vec![Rational::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly { coeffs: out }.trimmed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::rational;

    #[test]
    fn rationalize_finds_short_fractions() {
        assert_eq!(rationalize(0.5), rational(1, 2));
        assert_eq!(rationalize(0.15), rational(3, 20));
        assert_eq!(rationalize(-0.1), rational(-1, 10));
        assert_eq!(rationalize(1.0), rational(1, 1));
        assert_eq!(rationalize(0.0), rational(0, 1));
    }

    #[test]
    fn convolution_of_steps() {
        let steps = vec![vec![1, 0], vec![-1, 0], vec![0, 1], vec![0, -1]];
        let j = ExactField::delta(2).step_sum(&steps).scaled(&rational(1, 4));
        let jj = &j * &j;
        assert_eq!(jj.at(&[0, 0]), rational(1, 4));
        assert_eq!(jj.at(&[1, 1]), rational(1, 8));
        assert_eq!(jj.sum(), rational(1, 1));
        let diff = &jj - &jj;
        assert!(diff.numerators().iter().all(|v| v.is_zero()));
    }

    #[test]
    fn polynomial_field_evaluation() {
        let steps = vec![vec![1], vec![-1]];
        let j = ExactField::delta(1).step_sum(&steps).scaled(&rational(1, 2));
        let coeffs = vec![ExactField::delta(1), j.clone(), &j * &j];
        let vals = evaluate_polynomial_field(&coeffs, &rational(1, 3));
        let at = |x: i32| vals.iter().find(|(c, _)| c[0] == x).unwrap().1.clone();
        assert_eq!(at(0), rational(1, 1) + rational(1, 9) * rational(1, 2));
        assert_eq!(at(1), rational(1, 6));
        assert_eq!(at(2), rational(1, 36));
    }

    #[test]
    fn poly_arithmetic() {
        let p = Poly::from_integers(&[0, 1, 1, -1]);
        assert_eq!(p.eval(&rational(1, 2)), rational(5, 8));
        assert_eq!(p.derivative(), Poly::from_integers(&[1, 2, -3]));
        let sq = &p * &p;
        assert_eq!(sq.eval(&rational(1, 2)), rational(25, 64));
        assert_eq!(&(&p + &p) - &p, p);
        assert_eq!(p.truncated(1), Poly::from_integers(&[0, 1]));
    }
}
