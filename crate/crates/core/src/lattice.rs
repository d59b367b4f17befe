//! Geometry of ℤᵈ and dense symmetric fields on centred boxes.

use crate::interval::Interval;
use crate::numeric::KahanSum;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("field of radius {radius} in dimension {dim} has {sites} sites, above the limit {limit}")]
    TooLarge {
        dim: usize,
        radius: usize,
        sites: u128,
        limit: usize,
    },
    #[error("value count {got} does not match (2L+1)^d = {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("malformed field encoding: {0}")]
    Decode(String),
}

/// Largest number of sites a dense field may hold (about 1 GiB of `f64`).
pub const MAX_DENSE_SITES: usize = 1 << 27;

/// A site of ℤᵈ.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point(Vec<i32>);

impl Point {
    pub fn new(coords: Vec<i32>) -> Self {
        assert!(!coords.is_empty(), "a point needs at least one coordinate");
        Point(coords)
    }

    pub fn origin(dim: usize) -> Self {
        Point::new(vec![0; dim])
    }

    /// The unit vector along `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        Point(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Infinity norm `max_i |x_i|`.
    pub fn sup_norm(&self) -> u32 {
        sup_norm(&self.0)
    }

    /// Squared Euclidean norm.
    pub fn norm2_sq(&self) -> i64 {
        norm2_sq(&self.0)
    }

    pub fn norm2(&self) -> f64 {
        (self.norm2_sq() as f64).sqrt()
    }

    /// Orbit representative under coordinate permutations and sign flips.
    pub fn canonical(&self) -> Point {
        Point(canonical_coords(&self.0))
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl Add for &Point {
    type Output = Point;
    fn add(self, rhs: &Point) -> Point {
        assert_eq!(self.dim(), rhs.dim());
        Point(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Point {
    type Output = Point;
    fn sub(self, rhs: &Point) -> Point {
        assert_eq!(self.dim(), rhs.dim());
        Point(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point(self.0.iter().map(|a| -a).collect())
    }
}

pub fn sup_norm(c: &[i32]) -> u32 {
    c.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)
}

pub fn norm2_sq(c: &[i32]) -> i64 {
    c.iter().map(|&v| (v as i64) * (v as i64)).sum()
}

/// Sorted absolute values: the hyperoctahedral orbit representative.
pub fn canonical_coords(c: &[i32]) -> Vec<i32> {
    let mut a: Vec<i32> = c.iter().map(|v| v.abs()).collect();
    a.sort_unstable();
    a
}

/// Number of points in the hyperoctahedral orbit of `c`.
pub fn orbit_size(c: &[i32]) -> u64 {
    let canon = canonical_coords(c);
    let d = canon.len() as u64;
    let mut size: u64 = (1..=d).product();
    let mut run = 1u64;
    for i in 1..=canon.len() {
        if i < canon.len() && canon[i] == canon[i - 1] {
            run += 1;
        } else {
            size /= (1..=run).product::<u64>();
            run = 1;
        }
    }
    let nonzero = canon.iter().filter(|&&v| v != 0).count() as u32;
    size << nonzero
}

/// `Λ_k(x)`: the box of radius `k` in the infinity norm centred at `x`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub radius: u32,
    pub center: Point,
}

impl LatticeBox {
    pub fn new(center: Point, radius: u32) -> Self {
        LatticeBox { radius, center }
    }

    pub fn centred(dim: usize, radius: u32) -> Self {
        LatticeBox::new(Point::origin(dim), radius)
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn site_count(&self) -> u128 {
        (2 * self.radius as u128 + 1).pow(self.dim() as u32)
    }

    pub fn contains(&self, x: &Point) -> bool {
        (x - &self.center).sup_norm() <= self.radius
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        BoxIter::new(self.dim(), self.radius as i32).map(move |c| &Point(c) + &self.center)
    }
}

/// Iterates the coordinates of `Λ_r` in row-major order (last axis fastest).
pub struct BoxIter {
    cur: Vec<i32>,
    radius: i32,
    done: bool,
}

impl BoxIter {
    pub fn new(dim: usize, radius: i32) -> Self {
        BoxIter {
            cur: vec![-radius; dim],
            radius,
            done: dim == 0 || radius < 0,
        }
    }
}

impl Iterator for BoxIter {
    type Item = Vec<i32>;
    fn next(&mut self) -> Option<Vec<i32>> {
        if self.done {
            return None;
        }
        let out = self.cur.clone();
        let mut i = self.cur.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.cur[i] < self.radius {
                self.cur[i] += 1;
                break;
            }
            self.cur[i] = -self.radius;
        }
        Some(out)
    }
}

/// A real function on `Λ_L ⊂ ℤᵈ` stored densely in row-major order,
/// together with certified bounds on the mass and second moment outside the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeField {
    #[serde(rename = "d")]
    dim: usize,
    #[serde(rename = "L")]
    radius: usize,
    #[serde(rename = "symmetric_flag")]
    symmetric: bool,
    tail_bound: f64,
    #[serde(default)]
    moment_tail_bound: f64,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(dim: usize, radius: usize) -> Self {
        let n = Self::checked_len(dim, radius).expect("field size");
        LatticeField {
            dim,
            radius,
            symmetric: true,
            tail_bound: 0.0,
            moment_tail_bound: 0.0,
            values: vec![0.0; n],
        }
    }

    pub fn try_zeros(dim: usize, radius: usize) -> Result<Self, LatticeError> {
        let n = Self::checked_len(dim, radius)?;
        Ok(LatticeField {
            dim,
            radius,
            symmetric: true,
            tail_bound: 0.0,
            moment_tail_bound: 0.0,
            values: vec![0.0; n],
        })
    }

    pub fn checked_len(dim: usize, radius: usize) -> Result<usize, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        let sites = (2 * radius as u128 + 1).pow(dim as u32);
        if sites > MAX_DENSE_SITES as u128 {
            return Err(LatticeError::TooLarge {
                dim,
                radius,
                sites,
                limit: MAX_DENSE_SITES,
            });
        }
        Ok(sites as usize)
    }

    /// Kronecker delta at the origin.
    pub fn delta(dim: usize) -> Self {
        let mut f = Self::zeros(dim, 0);
        f.values[0] = 1.0;
        f
    }

    pub fn from_values(dim: usize, radius: usize, values: Vec<f64>) -> Result<Self, LatticeError> {
        let expected = Self::checked_len(dim, radius)?;
        if values.len() != expected {
            return Err(LatticeError::WrongLength {
                got: values.len(),
                expected,
            });
        }
        let mut f = LatticeField {
            dim,
            radius,
            symmetric: false,
            tail_bound: 0.0,
            moment_tail_bound: 0.0,
            values,
        };
        f.symmetric = f.is_symmetric(0.0);
        Ok(f)
    }

    pub fn from_fn(dim: usize, radius: usize, mut f: impl FnMut(&[i32]) -> f64) -> Self {
        let mut out = Self::zeros(dim, radius);
        for (i, c) in BoxIter::new(dim, radius as i32).enumerate() {
            out.values[i] = f(&c);
        }
        out.symmetric = out.is_symmetric(0.0);
        out
    }

    /// Builds a field of the given radius from sparse `(point, value)` pairs.
    pub fn from_sparse<'a>(
        dim: usize,
        radius: usize,
        entries: impl IntoIterator<Item = (&'a Point, f64)>,
    ) -> Self {
        let mut out = Self::zeros(dim, radius);
        for (p, v) in entries {
            let idx = out.index_of(p.coords()).expect("sparse entry outside the box");
            out.values[idx] += v;
        }
        out.symmetric = out.is_symmetric(0.0);
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.symmetric = false;
        &mut self.values
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn moment_tail_bound(&self) -> f64 {
        self.moment_tail_bound
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn with_tails(mut self, tail: f64, moment_tail: f64) -> Self {
        assert!(tail >= 0.0 && moment_tail >= 0.0, "tail bounds must be nonnegative");
        self.tail_bound = tail;
        self.moment_tail_bound = moment_tail;
        self
    }

    /// Marks the field as having no usable tail certificate.
    pub fn uncertified(mut self) -> Self {
        self.tail_bound = f64::INFINITY;
        self.moment_tail_bound = f64::INFINITY;
        self
    }

    pub fn set_symmetric_flag(&mut self, flag: bool) {
        self.symmetric = flag;
    }

    pub fn index_of(&self, c: &[i32]) -> Option<usize> {
        debug_assert_eq!(c.len(), self.dim);
        let r = self.radius as i32;
        let side = self.side();
        let mut idx = 0usize;
        for &v in c {
            if v < -r || v > r {
                return None;
            }
            idx = idx * side + (v + r) as usize;
        }
        Some(idx)
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<i32> {
        let side = self.side();
        let mut c = vec![0i32; self.dim];
        for i in (0..self.dim).rev() {
            c[i] = (idx % side) as i32 - self.radius as i32;
            idx /= side;
        }
        c
    }

    /// Value at `c`, or zero outside the stored box.
    pub fn at(&self, c: &[i32]) -> f64 {
        self.index_of(c).map_or(0.0, |i| self.values[i])
    }

    pub fn get(&self, x: &Point) -> f64 {
        self.at(x.coords())
    }

    pub fn set(&mut self, x: &Point, v: f64) {
        let i = self.index_of(x.coords()).expect("point outside the box");
        self.values[i] = v;
        self.symmetric = false;
    }

    pub fn origin_value(&self) -> f64 {
        self.values[self.values.len() / 2]
    }

    /// Iterates `(coords, value)` over every stored site.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i32>, f64)> + '_ {
        BoxIter::new(self.dim, self.radius as i32).zip(self.values.iter().copied())
    }

    /// Iterates the sites carrying a nonzero value.
    pub fn support(&self) -> impl Iterator<Item = (Vec<i32>, f64)> + '_ {
        self.iter().filter(|(_, v)| *v != 0.0)
    }

    /// Compensated sum of stored values.
    pub fn mass(&self) -> f64 {
        self.values.iter().copied().collect::<KahanSum>().value()
    }

    /// Compensated sum of `|x|₂² f(x)` over stored values.
    pub fn stored_second_moment(&self) -> f64 {
        self.iter()
            .map(|(c, v)| norm2_sq(&c) as f64 * v)
            .collect::<KahanSum>()
            .value()
    }

    /// `‖f‖₁` as `[stored, stored + tail]` (stored sum of absolute values).
    pub fn l1_norm(&self) -> Interval {
        let s = self.values.iter().map(|v| v.abs()).collect::<KahanSum>().value();
        Interval::with_tail(s, self.tail_bound)
    }

    /// `‖|x|₂² f‖₁` as `[stored, stored + moment tail]`.
    pub fn second_moment(&self) -> Interval {
        let s = self
            .iter()
            .map(|(c, v)| norm2_sq(&c) as f64 * v.abs())
            .collect::<KahanSum>()
            .value();
        Interval::with_tail(s, self.moment_tail_bound)
    }

    /// `Σ_{x ∈ Λ_k} f(x)` for `k` at most the stored radius.
    pub fn box_sum(&self, k: usize) -> f64 {
        self.iter()
            .filter(|(c, _)| sup_norm(c) as usize <= k)
            .map(|(_, v)| v)
            .collect::<KahanSum>()
            .value()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest site where the field is nonzero, in the infinity norm.
    pub fn support_radius(&self) -> usize {
        self.support().map(|(c, _)| sup_norm(&c) as usize).max().unwrap_or(0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Checks invariance under coordinate permutations and sign flips to absolute tolerance `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let mut reps: HashMap<Vec<i32>, f64> = HashMap::new();
        for (c, v) in self.iter() {
            let key = canonical_coords(&c);
            match reps.get(&key) {
                Some(&r) if (r - v).abs() > tol => return false,
                Some(_) => {}
                None => {
                    reps.insert(key, v);
                }
            }
        }
        true
    }

    /// Averages over the hyperoctahedral group; idempotent and mass-preserving.
    pub fn symmetrize(&self) -> LatticeField {
        let mut sums: HashMap<Vec<i32>, (KahanSum, u64)> = HashMap::new();
        for (c, v) in self.iter() {
            let e = sums.entry(canonical_coords(&c)).or_insert((KahanSum::new(), 0));
            e.0.add(v);
            e.1 += 1;
        }
        let means: HashMap<Vec<i32>, f64> = sums
            .into_iter()
            .map(|(k, (s, n))| (k, s.value() / n as f64))
            .collect();
        let mut out = self.clone();
        for (i, c) in BoxIter::new(self.dim, self.radius as i32).enumerate() {
            out.values[i] = means[&canonical_coords(&c)];
        }
        out.symmetric = true;
        out
    }

    /// The same function stored on a box of another radius. Shrinking moves the
    /// discarded absolute mass and moment into the tail bounds.
    pub fn resized(&self, radius: usize) -> LatticeField {
        let mut out = LatticeField::zeros(self.dim, radius);
        let mut lost = KahanSum::new();
        let mut lost_m2 = KahanSum::new();
        for (c, v) in self.iter() {
            match out.index_of(&c) {
                Some(i) => out.values[i] = v,
                None => {
                    lost.add(v.abs());
                    lost_m2.add(v.abs() * norm2_sq(&c) as f64);
                }
            }
        }
        out.symmetric = self.symmetric;
        out.tail_bound = self.tail_bound + lost.value();
        out.moment_tail_bound = self.moment_tail_bound + lost_m2.value();
        out
    }

    /// Pointwise map keeping geometry and tails.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> LatticeField {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v);
        }
        out
    }

    pub fn scaled(&self, c: f64) -> LatticeField {
        let mut out = self.map(|v| c * v);
        out.tail_bound *= c.abs();
        out.moment_tail_bound *= c.abs();
        out
    }

    /// Pointwise linear combination `a·self + b·other` on the larger of the two boxes.
    pub fn combine(&self, a: f64, other: &LatticeField, b: f64) -> Result<LatticeField, LatticeError> {
        if self.dim != other.dim {
            return Err(LatticeError::DimensionMismatch(self.dim, other.dim));
        }
        let radius = self.radius.max(other.radius);
        let mut out = LatticeField::zeros(self.dim, radius);
        for (i, c) in BoxIter::new(self.dim, radius as i32).enumerate() {
            out.values[i] = a * self.at(&c) + b * other.at(&c);
        }
        out.symmetric = self.symmetric && other.symmetric;
        out.tail_bound = a.abs() * self.tail_bound + b.abs() * other.tail_bound;
        out.moment_tail_bound = a.abs() * self.moment_tail_bound + b.abs() * other.moment_tail_bound;
        Ok(out)
    }

    /// Pointwise product on the smaller of the two boxes (outside it one factor is unknown).
    pub fn pointwise_mul(&self, other: &LatticeField) -> Result<LatticeField, LatticeError> {
        if self.dim != other.dim {
            return Err(LatticeError::DimensionMismatch(self.dim, other.dim));
        }
        let radius = self.radius.min(other.radius);
        let mut out = LatticeField::zeros(self.dim, radius);
        for (i, c) in BoxIter::new(self.dim, radius as i32).enumerate() {
            out.values[i] = self.at(&c) * other.at(&c);
        }
        out.symmetric = self.symmetric && other.symmetric;
        // Outside the smaller box, |fg| ≤ (pointwise bound on the other factor)·|smaller factor|,
        // and a pointwise bound on any field is max(stored sup, tail bound).
        let sup_bound = |h: &LatticeField| {
            h.values.iter().fold(h.tail_bound, |m, v| m.max(v.abs()))
        };
        let (small, large) = if self.radius <= other.radius { (self, other) } else { (other, self) };
        let tail = sup_bound(large) * small.tail_bound;
        let mtail = sup_bound(large) * small.moment_tail_bound;
        out.tail_bound = tail;
        out.moment_tail_bound = mtail;
        Ok(out)
    }

    /// `x ↦ f(−x)`.
    pub fn reflected(&self) -> LatticeField {
        let mut out = self.clone();
        let n = self.values.len();
        for i in 0..n {
            out.values[i] = self.values[n - 1 - i];
        }
        out
    }

    /// Largest pointwise absolute difference, comparing over the union of boxes.
    pub fn max_abs_diff(&self, other: &LatticeField) -> f64 {
        let radius = self.radius.max(other.radius);
        BoxIter::new(self.dim, radius as i32)
            .map(|c| (self.at(&c) - other.at(&c)).abs())
            .fold(0.0, f64::max)
    }

    /// Binary layout: magic, d, L, flag, tail, moment tail (little endian), then row-major values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.values.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.radius as u64).to_le_bytes());
        out.push(self.symmetric as u8);
        out.extend_from_slice(&self.tail_bound.to_le_bytes());
        out.extend_from_slice(&self.moment_tail_bound.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LatticeError> {
        let err = |m: &str| LatticeError::Decode(m.to_string());
        let rest = bytes.strip_prefix(BINARY_MAGIC).ok_or_else(|| err("bad magic"))?;
        if rest.len() < 33 {
            return Err(err("truncated header"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(rest[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(rest[o..o + 8].try_into().unwrap());
        let dim = u64_at(0) as usize;
        let radius = u64_at(8) as usize;
        let symmetric = rest[16] != 0;
        let tail = f64_at(17);
        let mtail = f64_at(25);
        let n = Self::checked_len(dim, radius)?;
        let body = &rest[33..];
        if body.len() != 8 * n {
            return Err(LatticeError::WrongLength {
                got: body.len() / 8,
                expected: n,
            });
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(LatticeField {
            dim,
            radius,
            symmetric,
            tail_bound: tail,
            moment_tail_bound: mtail,
            values,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("field serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LatticeError> {
        let f: LatticeField = serde_json::from_str(s).map_err(|e| LatticeError::Decode(e.to_string()))?;
        let expected = Self::checked_len(f.dim, f.radius)?;
        if f.values.len() != expected {
            return Err(LatticeError::WrongLength {
                got: f.values.len(),
                expected,
            });
        }
        Ok(f)
    }
}

const BINARY_MAGIC: &[u8] = b"MFLF\x01";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_points() {
        let x = Point::new(vec![3, -4, 1]);
        assert_eq!(x.sup_norm(), 4);
        assert_eq!(x.norm2_sq(), 26);
        assert_eq!(x.canonical(), Point::new(vec![1, 3, 4]));
    }

    #[test]
    fn box_counts_and_translation() {
        let b = LatticeBox::new(Point::new(vec![5, -2]), 2);
        assert_eq!(b.site_count(), 25);
        assert_eq!(b.points().count(), 25);
        assert!(b.contains(&Point::new(vec![7, 0])));
        assert!(!b.contains(&Point::new(vec![8, 0])));
    }

    #[test]
    fn orbit_sizes() {
        assert_eq!(orbit_size(&[0, 0]), 1);
        assert_eq!(orbit_size(&[1, 0]), 4);
        assert_eq!(orbit_size(&[1, 1]), 4);
        assert_eq!(orbit_size(&[1, 2]), 8);
        assert_eq!(orbit_size(&[1, 1, 2]), 24);
        assert_eq!(orbit_size(&[0, 1, 2]), 24);
        // Every site of Λ_3 in d = 3 is counted once.
        let total: u64 = BoxIter::new(3, 3)
            .filter(|c| *c == canonical_coords(c))
            .map(|c| orbit_size(&c))
            .sum();
        assert_eq!(total, 343);
    }

    #[test]
    fn index_round_trip() {
        let f = LatticeField::zeros(3, 2);
        for (i, c) in BoxIter::new(3, 2).enumerate() {
            assert_eq!(f.index_of(&c), Some(i));
            assert_eq!(f.coords_of(i), c);
        }
        assert_eq!(f.index_of(&[3, 0, 0]), None);
    }

    #[test]
    fn delta_norms() {
        let f = LatticeField::delta(4);
        assert_eq!(f.l1_norm(), Interval::point(1.0));
        assert_eq!(f.second_moment(), Interval::point(0.0));
        assert_eq!(f.origin_value(), 1.0);
    }

    #[test]
    fn symmetrize_unit_vector() {
        let e1 = Point::unit(2, 0);
        let f = LatticeField::from_sparse(2, 1, [(&e1, 1.0)]);
        assert!(!f.symmetric());
        let s = f.symmetrize();
        for p in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert!((s.at(&p) - 0.25).abs() < 1e-15);
        }
        assert_eq!(s.at(&[1, 1]), 0.0);
        assert_eq!(s.symmetrize(), s);
    }

    #[test]
    fn resize_moves_mass_to_tail() {
        let f = LatticeField::from_fn(1, 3, |c| if c[0].abs() == 3 { 0.5 } else { 0.0 });
        let g = f.resized(2);
        assert_eq!(g.mass(), 0.0);
        assert_eq!(g.tail_bound(), 1.0);
        assert_eq!(g.moment_tail_bound(), 9.0);
        assert_eq!(g.resized(3).tail_bound(), 1.0);
    }

    #[test]
    fn serialization_round_trips() {
        let f = LatticeField::from_fn(2, 2, |c| (c[0] * 3 + c[1]) as f64 * 0.125).with_tails(1e-3, 2e-3);
        assert_eq!(LatticeField::from_bytes(&f.to_bytes()).unwrap(), f);
        assert_eq!(LatticeField::from_json(&f.to_json()).unwrap(), f);
        assert!(LatticeField::from_bytes(b"nope").is_err());
    }

    #[test]
    fn oversize_field_is_refused() {
        assert!(matches!(
            LatticeField::try_zeros(7, 16),
            Err(LatticeError::TooLarge { .. })
        ));
    }
}
