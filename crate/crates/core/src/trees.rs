//! Lattice trees: exhaustive enumeration, one- and two-point generating polynomials, the
//! change of variables `β = p·g_p`, and the inequality checks in degree-truncated arithmetic.
//!
//! All series are exact polynomials in `p` through degree `B`, the bond limit of the
//! enumeration.

use crate::conv::convolve;
use crate::exact::{rationalize, to_f64, Poly};
use crate::kernels::{AdmissibleKernel, Rational};
use crate::lattice::{LatticeError, LatticeField};
use crate::numeric::linear_grid;
use crate::report::{InequalityReport, Location, ResidualTracker};
use num::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use thiserror::Error;

/// Largest number of search nodes [`enumerate_trees`] will visit.
pub const MAX_TREE_NODES: u64 = 200_000_000;

const CHECK_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("enumeration exceeded {MAX_TREE_NODES} search nodes; lower the bond limit")]
    TooCostly,
    #[error("beta = {beta} is outside the validated range [0, {max}]")]
    BetaOutOfRange { beta: f64, max: f64 },
    #[error("need beta' <= beta, got {low} > {high}")]
    InvertedPair { low: f64, high: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Exact generating polynomials of lattice trees containing the origin with at most `B` bonds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeSeries {
    pub dim: usize,
    pub kernel_label: String,
    pub max_bonds: usize,
    /// Kernel steps with exact weights.
    pub steps: Vec<(Vec<i32>, Rational)>,
    /// Number of trees containing the origin, by bond count.
    pub tree_counts: Vec<u64>,
    /// Sites with a nonzero `ρ_p`, sorted.
    pub sites: Vec<Vec<i32>>,
    /// `ρ_p(x) = Σ_{T ∋ 0,x} (pJ)^T`, aligned with `sites`.
    pub rho: Vec<Poly>,
    /// `Σ_{T ∋ 0,x, deg_T(x)=1} (pJ)^T` for `x ≠ 0`, and `1` at the origin.
    pub reduced: Vec<Poly>,
}

struct Geometry {
    side: usize,
    radius: i32,
    dim: usize,
    origin: usize,
    /// `(edge id, other endpoint)` for every vertex.
    adjacency: Vec<Vec<(usize, usize)>>,
    /// Endpoints of every edge id.
    endpoints: Vec<(usize, usize)>,
    /// Positive-step index of every edge id.
    edge_step: Vec<usize>,
}

fn is_positive(s: &[i32]) -> bool {
    s.iter().find(|v| **v != 0).is_some_and(|v| *v > 0)
}

impl Geometry {
    fn new(dim: usize, radius: i32, positive: &[Vec<i32>]) -> Self {
        let side = (2 * radius + 1) as usize;
        let sites = side.pow(dim as u32);
        let coords = |mut i: usize| {
            let mut c = vec![0i32; dim];
            for slot in c.iter_mut().rev() {
                *slot = (i % side) as i32 - radius;
                i /= side;
            }
            c
        };
        let index = |c: &[i32]| -> Option<usize> {
            c.iter().try_fold(0usize, |acc, &v| (v.abs() <= radius).then(|| acc * side + (v + radius) as usize))
        };
        let p = positive.len();
        let mut endpoints = vec![(usize::MAX, usize::MAX); sites * p];
        let mut edge_step = vec![0; sites * p];
        let mut adjacency = vec![Vec::new(); sites];
        for v in 0..sites {
            let c = coords(v);
            for (k, s) in positive.iter().enumerate() {
                let w: Vec<i32> = c.iter().zip(s).map(|(a, b)| a + b).collect();
                if let Some(w) = index(&w) {
                    let id = v * p + k;
                    endpoints[id] = (v, w);
                    edge_step[id] = k;
                    adjacency[v].push((id, w));
                    adjacency[w].push((id, v));
                }
            }
        }
        Geometry {
            side,
            radius,
            dim,
            origin: index(&vec![0; dim]).expect("origin in box"),
            adjacency,
            endpoints,
            edge_step,
        }
    }

    fn coords(&self, mut i: usize) -> Vec<i32> {
        let mut c = vec![0i32; self.dim];
        for slot in c.iter_mut().rev() {
            *slot = (i % self.side) as i32 - self.radius;
            i /= self.side;
        }
        c
    }
}

/// Per-vertex, per-bond-count tallies of tree weights.
enum Tally {
    /// Uniform kernels: every tree with `k` bonds weighs `J^k`, so integer counts suffice.
    Counts { rho: Vec<u64>, reduced: Vec<u64> },
    Weights { rho: Vec<Rational>, reduced: Vec<Rational> },
}

impl Tally {
    fn new(uniform: bool, len: usize) -> Self {
        if uniform {
            Tally::Counts {
                rho: vec![0; len],
                reduced: vec![0; len],
            }
        } else {
            Tally::Weights {
                rho: vec![Rational::zero(); len],
                reduced: vec![Rational::zero(); len],
            }
        }
    }

    fn merge(self, other: Tally) -> Tally {
        match (self, other) {
            (Tally::Counts { mut rho, mut reduced }, Tally::Counts { rho: r2, reduced: d2 }) => {
                rho.iter_mut().zip(r2).for_each(|(a, b)| *a += b);
                reduced.iter_mut().zip(d2).for_each(|(a, b)| *a += b);
                Tally::Counts { rho, reduced }
            }
            (Tally::Weights { mut rho, mut reduced }, Tally::Weights { rho: r2, reduced: d2 }) => {
                rho.iter_mut().zip(r2).for_each(|(a, b)| *a += b);
                reduced.iter_mut().zip(d2).for_each(|(a, b)| *a += b);
                Tally::Weights { rho, reduced }
            }
            _ => unreachable!("tallies share a kind"),
        }
    }
}

struct Search<'a> {
    geo: &'a Geometry,
    weights: &'a [Rational],
    max_bonds: usize,
    marked: Vec<bool>,
    degree: Vec<u8>,
    vertices: Vec<usize>,
    weight_stack: Vec<Rational>,
    tally: Tally,
    tree_counts: Vec<u64>,
    nodes: u64,
    counter: &'a AtomicU64,
    abort: &'a AtomicBool,
}

impl Search<'_> {
    fn in_tree(&self, v: usize) -> bool {
        v == self.geo.origin || self.degree[v] > 0
    }

    fn emit(&mut self) {
        let k = self.vertices.len() - 1;
        let stride = self.max_bonds + 1;
        self.tree_counts[k] += 1;
        let origin = self.geo.origin;
        match &mut self.tally {
            Tally::Counts { rho, reduced } => {
                for &v in &self.vertices {
                    rho[v * stride + k] += 1;
                    if v != origin && self.degree[v] == 1 {
                        reduced[v * stride + k] += 1;
                    }
                }
            }
            Tally::Weights { rho, reduced } => {
                let w = self.weight_stack.last().expect("weight stack");
                for &v in &self.vertices {
                    rho[v * stride + k] += w;
                    if v != origin && self.degree[v] == 1 {
                        reduced[v * stride + k] += w;
                    }
                }
            }
        }
    }

    /// Redelmeier-style search over connected bond sets containing the origin; bond sets with
    /// a cycle are pruned, since every extension keeps the cycle.
    fn explore(&mut self, untried: &mut Vec<usize>, only_first: bool) {
        while let Some(e) = untried.pop() {
            self.nodes += 1;
            if self.nodes.is_multiple_of(4096) {
                let total = self.counter.fetch_add(4096, Ordering::Relaxed) + 4096;
                if total > MAX_TREE_NODES {
                    self.abort.store(true, Ordering::Relaxed);
                }
            }
            if self.abort.load(Ordering::Relaxed) {
                return;
            }
            let (a, b) = self.geo.endpoints[e];
            let (a_in, b_in) = (self.in_tree(a), self.in_tree(b));
            if a_in && b_in {
                if only_first {
                    return;
                }
                continue;
            }
            let fresh = if a_in { b } else { a };
            self.degree[a] += 1;
            self.degree[b] += 1;
            self.vertices.push(fresh);
            if let Some(w) = self.weight_stack.last() {
                let next = w * &self.weights[self.geo.edge_step[e]];
                self.weight_stack.push(next);
            }
            self.emit();
            if self.vertices.len() <= self.max_bonds {
                let mut next = untried.clone();
                let mut newly = Vec::new();
                for &(e2, _) in &self.geo.adjacency[fresh] {
                    if !self.marked[e2] {
                        self.marked[e2] = true;
                        newly.push(e2);
                        next.push(e2);
                    }
                }
                self.explore(&mut next, false);
                for e2 in newly {
                    self.marked[e2] = false;
                }
            }
            if !self.weight_stack.is_empty() {
                self.weight_stack.pop();
            }
            self.vertices.pop();
            self.degree[a] -= 1;
            self.degree[b] -= 1;
            if only_first {
                return;
            }
        }
    }
}

/// Enumerates every lattice tree containing the origin with at most `max_bonds` bonds.
pub fn enumerate_trees(kernel: &AdmissibleKernel, max_bonds: usize) -> Result<TreeSeries, TreeError> {
    let dim = kernel.dim();
    let steps: Vec<(Vec<i32>, Rational)> = kernel
        .steps()
        .iter()
        .map(|(p, w)| (p.coords().to_vec(), kernel.uniform_value().unwrap_or_else(|| rationalize(*w))))
        .collect();
    let positive: Vec<(Vec<i32>, Rational)> = steps.iter().filter(|(s, _)| is_positive(s)).cloned().collect();
    let positive_steps: Vec<Vec<i32>> = positive.iter().map(|(s, _)| s.clone()).collect();
    let weights: Vec<Rational> = positive.iter().map(|(_, w)| w.clone()).collect();
    let uniform = kernel.uniform_value();
    let radius = (max_bonds as i32 * kernel.range() as i32).max(1);
    let geo = Geometry::new(dim, radius, &positive_steps);
    let sites = geo.adjacency.len();
    let stride = max_bonds + 1;
    let counter = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let initial: Vec<usize> = geo.adjacency[geo.origin].iter().map(|&(e, _)| e).collect();
    let new_search = || {
        let mut marked = vec![false; geo.endpoints.len()];
        for &e in &initial {
            marked[e] = true;
        }
        Search {
            geo: &geo,
            weights: &weights,
            max_bonds,
            marked,
            degree: vec![0; sites],
            vertices: vec![geo.origin],
            weight_stack: if uniform.is_some() { Vec::new() } else { vec![Rational::one()] },
            tally: Tally::new(uniform.is_some(), sites * stride),
            tree_counts: vec![0; stride],
            nodes: 0,
            counter: &counter,
            abort: &abort,
        }
    };
    // The single-vertex tree.
    let mut base = new_search();
    base.emit();
    let branches: Vec<(Tally, Vec<u64>)> = if max_bonds == 0 {
        Vec::new()
    } else {
        (0..initial.len())
            .into_par_iter()
            .map(|i| {
                let mut search = new_search();
                let mut untried = initial[..=i].to_vec();
                search.explore(&mut untried, true);
                (search.tally, search.tree_counts)
            })
            .collect()
    };
    if abort.load(Ordering::Relaxed) {
        return Err(TreeError::TooCostly);
    }
    let (tally, tree_counts) = branches.into_iter().fold((base.tally, base.tree_counts), |(t, c), (t2, c2)| {
        (t.merge(t2), c.iter().zip(c2).map(|(a, b)| a + b).collect())
    });
    let powers: Vec<Rational> = match &uniform {
        Some(j) => (0..=max_bonds).map(|k| num::pow(j.clone(), k)).collect(),
        None => Vec::new(),
    };
    let poly_at = |table: &Tally, v: usize, reduced: bool| -> Poly {
        let coeffs: Vec<Rational> = (0..=max_bonds)
            .map(|k| match table {
                Tally::Counts { rho, reduced: red } => {
                    let n = if reduced { red[v * stride + k] } else { rho[v * stride + k] };
                    &powers[k] * Rational::from_integer(n.into())
                }
                Tally::Weights { rho, reduced: red } => {
                    if reduced {
                        red[v * stride + k].clone()
                    } else {
                        rho[v * stride + k].clone()
                    }
                }
            })
            .collect();
        &Poly { coeffs } + &Poly::zero()
    };
    let mut entries: Vec<(Vec<i32>, Poly, Poly)> = (0..sites)
        .filter_map(|v| {
            let rho = poly_at(&tally, v, false);
            rho.degree()?;
            let reduced = if v == geo.origin {
                Poly::constant(Rational::one())
            } else {
                poly_at(&tally, v, true)
            };
            Some((geo.coords(v), rho, reduced))
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let (sites, (rho, reduced)): (Vec<_>, (Vec<_>, Vec<_>)) = entries.into_iter().map(|(s, r, g)| (s, (r, g))).unzip();
    Ok(TreeSeries {
        dim,
        kernel_label: kernel.label(),
        max_bonds,
        steps,
        tree_counts,
        sites,
        rho,
        reduced,
    })
}

type SiteMap<T> = BTreeMap<Vec<i32>, T>;

impl TreeSeries {
    fn find(&self, x: &[i32]) -> Option<usize> {
        self.sites.binary_search_by(|s| s.as_slice().cmp(x)).ok()
    }

    /// `g_p = ρ_p(0)`.
    pub fn one_point(&self) -> Poly {
        self.find(&vec![0; self.dim]).map_or_else(|| Poly::constant(Rational::one()), |i| self.rho[i].clone())
    }

    pub fn rho_at(&self, x: &[i32]) -> Poly {
        self.find(x).map_or_else(Poly::zero, |i| self.rho[i].clone())
    }

    pub fn reduced_at(&self, x: &[i32]) -> Poly {
        self.find(x).map_or_else(Poly::zero, |i| self.reduced[i].clone())
    }

    /// `χ̂(p) = Σ_x ρ_p(x)`.
    pub fn chi_hat(&self) -> Poly {
        self.rho.iter().fold(Poly::zero(), |acc, p| &acc + p)
    }

    /// `β(p) = p·g_p`, exact through degree `B + 1`.
    pub fn beta_poly(&self) -> Poly {
        &Poly::monomial(Rational::one(), 1) * &self.one_point()
    }

    fn reduced_map(&self, degree: usize) -> SiteMap<Poly> {
        self.sites
            .iter()
            .zip(&self.reduced)
            .map(|(s, p)| (s.clone(), p.truncated(degree)))
            .filter(|(_, p)| p.degree().is_some())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("series serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// `d(p·g_p)/dp = χ̂(p)`, compared coefficientwise through degree `B`, where both sides are exact.
pub fn check_dg_identity(series: &TreeSeries) -> InequalityReport {
    let mut tracker = ResidualTracker::new("lt_dg", "d(p g_p)/dp = chi_hat(p), coefficientwise", 0.0);
    tracker
        .param("kernel", &series.kernel_label)
        .param("max_bonds", series.max_bonds)
        .param("degrees_compared", format!("0..={}", series.max_bonds));
    let lhs = series.beta_poly().derivative();
    let rhs = series.chi_hat();
    for k in 0..=series.max_bonds {
        let diff = to_f64(&(lhs.coeff(k) - rhs.coeff(k)).abs());
        tracker.observe(0.0 - diff, || Location::default().with_label(format!("p^{k}")));
    }
    let chi: Vec<f64> = (0..=series.max_bonds).map(|k| to_f64(&rhs.coeff(k))).collect();
    let log_convex = chi.windows(3).all(|w| w[1] * w[1] <= w[0] * w[2]);
    tracker.note(format!("chi_hat coefficients log-convex: {log_convex}"));
    tracker.finish()
}

/// The map `β = p·g_p`, inverted by bisection on `[0, p_max]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaMap {
    pub beta_poly: Poly,
    pub p_max: f64,
    pub beta_max: f64,
    /// Ratio estimate `χ̂_{B−1}/χ̂_B` of the critical point.
    pub p_c_estimate: f64,
}

impl BetaMap {
    /// Validated range: half the ratio estimate of `p_c`, cut back to the largest point of a
    /// 256-point grid where `dβ/dp > 0`.
    pub fn new(series: &TreeSeries) -> Self {
        let beta_poly = series.beta_poly();
        let chi = series.chi_hat();
        let b = series.max_bonds;
        let p_c_estimate = if b == 0 {
            1.0
        } else {
            to_f64(&chi.coeff(b - 1)) / to_f64(&chi.coeff(b))
        };
        let slope = beta_poly.derivative();
        let cap = 0.5 * p_c_estimate;
        let p_max = linear_grid(0.0, cap, 256)
            .into_iter()
            .take_while(|&p| slope.eval_f64(p) > 0.0)
            .last()
            .unwrap_or(0.0);
        let beta_max = beta_poly.eval_f64(p_max);
        BetaMap {
            beta_poly,
            p_max,
            beta_max,
            p_c_estimate,
        }
    }

    pub fn beta(&self, p: f64) -> f64 {
        self.beta_poly.eval_f64(p)
    }

    pub fn p_of_beta(&self, beta: f64) -> Result<f64, TreeError> {
        if !(0.0..=self.beta_max).contains(&beta) {
            return Err(TreeError::BetaOutOfRange { beta, max: self.beta_max });
        }
        let (mut lo, mut hi) = (0.0, self.p_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.beta(mid) < beta {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `G_β` from the reduced table at `p(β)`.
pub fn two_point_beta(series: &TreeSeries, map: &BetaMap, beta: f64) -> Result<LatticeField, TreeError> {
    let p = map.p_of_beta(beta)?;
    let radius = series.sites.iter().flat_map(|s| s.iter().map(|c| c.unsigned_abs() as usize)).max().unwrap_or(0);
    let mut field = LatticeField::zeros(series.dim, radius);
    for (s, g) in series.sites.iter().zip(&series.reduced) {
        let i = field.index_of(s).expect("site inside box");
        field.values_mut()[i] = g.eval_f64(p);
    }
    Ok(field.uncertified())
}

/// Truncated polynomial arithmetic shared by one- and two-variable series.
trait Truncated: Clone {
    fn zero() -> Self;
    fn is_zero(&self) -> bool;
    fn plus(&self, other: &Self) -> Self;
    fn minus(&self, other: &Self) -> Self;
    fn times(&self, other: &Self, degree: usize) -> Self;
    fn scale(&self, c: &Rational) -> Self;
}

impl Truncated for Poly {
    fn zero() -> Self {
        Poly::zero()
    }
    fn is_zero(&self) -> bool {
        self.degree().is_none()
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn minus(&self, other: &Self) -> Self {
        self - other
    }
    fn times(&self, other: &Self, degree: usize) -> Self {
        self.mul_truncated(other, degree)
    }
    fn scale(&self, c: &Rational) -> Self {
        self.scaled(c)
    }
}

/// Polynomial in `(s, t)`; entry `j` holds the coefficient of `t^j` as a polynomial in `s`.
#[derive(Clone, Debug, PartialEq)]
struct BiPoly(Vec<Poly>);

impl BiPoly {
    /// `f(s + t)` through total degree `degree`.
    fn shifted(f: &Poly, degree: usize) -> Self {
        let mut out = vec![Poly::zero(); degree + 1];
        for (k, a) in f.coeffs.iter().enumerate().take(degree + 1) {
            let mut binom = Rational::one();
            for (j, slot) in out.iter_mut().enumerate().take(k + 1) {
                *slot = &*slot + &Poly::monomial(a * &binom, k - j);
                binom = binom * Rational::from_integer((k - j).into()) / Rational::from_integer((j + 1).into());
            }
        }
        BiPoly(out).trimmed()
    }

    fn lower(f: &Poly, degree: usize) -> Self {
        BiPoly(vec![f.truncated(degree)]).trimmed()
    }

    fn trimmed(mut self) -> Self {
        while self.0.last().is_some_and(|p| p.degree().is_none()) {
            self.0.pop();
        }
        self
    }

    fn coefficients(&self) -> impl Iterator<Item = (usize, usize, &Rational)> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(j, p)| p.coeffs.iter().enumerate().map(move |(i, c)| (i, j, c)))
    }

    fn eval(&self, s: &Rational, t: &Rational) -> Rational {
        self.0.iter().rev().fold(Rational::zero(), |acc, p| acc * t + p.eval(s))
    }
}

impl Truncated for BiPoly {
    fn zero() -> Self {
        BiPoly(Vec::new())
    }
    fn is_zero(&self) -> bool {
        self.0.is_empty()
    }
    fn plus(&self, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        let z = Poly::zero();
        BiPoly((0..n).map(|j| self.0.get(j).unwrap_or(&z) + other.0.get(j).unwrap_or(&z)).collect()).trimmed()
    }
    fn minus(&self, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        let z = Poly::zero();
        BiPoly((0..n).map(|j| self.0.get(j).unwrap_or(&z) - other.0.get(j).unwrap_or(&z)).collect()).trimmed()
    }
    fn times(&self, other: &Self, degree: usize) -> Self {
        let mut out = vec![Poly::zero(); degree + 1];
        for (j1, a) in self.0.iter().enumerate() {
            for (j2, b) in other.0.iter().enumerate() {
                if j1 + j2 <= degree {
                    out[j1 + j2] = &out[j1 + j2] + &a.mul_truncated(b, degree - j1 - j2);
                }
            }
        }
        BiPoly(out).trimmed()
    }
    fn scale(&self, c: &Rational) -> Self {
        BiPoly(self.0.iter().map(|p| p.scaled(c)).collect()).trimmed()
    }
}

fn add_into<T: Truncated>(map: &mut SiteMap<T>, x: Vec<i32>, v: T) {
    if v.is_zero() {
        return;
    }
    match map.get_mut(&x) {
        Some(slot) => *slot = slot.plus(&v),
        None => {
            map.insert(x, v);
        }
    }
}

fn shift(a: &[i32], b: &[i32]) -> Vec<i32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn conv<T: Truncated + Send + Sync>(a: &SiteMap<T>, b: &SiteMap<T>, degree: usize) -> SiteMap<T> {
    let mut out = SiteMap::new();
    let parts: Vec<(Vec<i32>, T)> = a
        .par_iter()
        .flat_map_iter(|(x, pa)| b.iter().map(move |(y, pb)| (shift(x, y), pa.times(pb, degree))))
        .collect();
    for (x, v) in parts {
        add_into(&mut out, x, v);
    }
    out
}

fn conv_kernel<T: Truncated>(a: &SiteMap<T>, steps: &[(Vec<i32>, Rational)]) -> SiteMap<T> {
    let mut out = SiteMap::new();
    for (x, pa) in a {
        for (s, w) in steps {
            add_into(&mut out, shift(x, s), pa.scale(w));
        }
    }
    out
}

fn pointwise<T: Truncated>(a: &SiteMap<T>, b: &SiteMap<T>, degree: usize) -> SiteMap<T> {
    a.iter()
        .filter_map(|(x, pa)| b.get(x).map(|pb| (x.clone(), pa.times(pb, degree))))
        .filter(|(_, v)| !v.is_zero())
        .collect()
}

fn combine<T: Truncated>(a: &SiteMap<T>, b: &SiteMap<T>, subtract: bool) -> SiteMap<T> {
    let mut out = a.clone();
    for (x, v) in b {
        let v = if subtract { T::zero().minus(v) } else { v.clone() };
        add_into(&mut out, x.clone(), v);
    }
    out
}

fn describe(tracker: &mut ResidualTracker, series: &TreeSeries) {
    tracker
        .param("kernel", &series.kernel_label)
        .param("max_bonds", series.max_bonds);
}

/// `(β−β')(G_{β'}*J*G_β)(x) + G_{β'}(x) − G_β(x)` as a polynomial in `(p', t = p − p')`,
/// exact through total degree `B`.
fn i1_residuals(series: &TreeSeries) -> SiteMap<BiPoly> {
    let b = series.max_bonds;
    let reduced = series.reduced_map(b);
    let low: SiteMap<BiPoly> = reduced.iter().map(|(x, p)| (x.clone(), BiPoly::lower(p, b))).collect();
    let high: SiteMap<BiPoly> = reduced.iter().map(|(x, p)| (x.clone(), BiPoly::shifted(p, b))).collect();
    let beta = series.beta_poly();
    let gap = BiPoly::shifted(&beta, b).minus(&BiPoly::lower(&beta, b));
    let chain = conv(&conv_kernel(&low, &series.steps), &high, b);
    let mut out: SiteMap<BiPoly> = chain.into_iter().map(|(x, v)| (x, gap.times(&v, b))).collect();
    out = combine(&out, &low, false);
    combine(&out, &high, true)
}

/// Exact coefficientwise check of `G_β ≤ G_{β'} + (β−β')(G_{β'}*J*G_β)` in `(p', p − p')`
/// through total degree `B`, then evaluation of the same truncated polynomial at each pair.
pub fn check_i1_lt(series: &TreeSeries, map: &BetaMap, pairs: &[(f64, f64)]) -> Result<InequalityReport, TreeError> {
    let mut tracker = ResidualTracker::new(
        "lt_I1",
        "G_b(x) <= G_b'(x) + (b-b')(G_b' * J * G_b)(x), b = p g_p, truncated at total degree B in (p', p-p')",
        CHECK_TOL,
    );
    describe(&mut tracker, series);
    let points: Vec<(f64, f64, Rational, Rational)> = pairs
        .iter()
        .map(|&(lo, hi)| {
            if lo > hi {
                return Err(TreeError::InvertedPair { low: lo, high: hi });
            }
            let (p_lo, p_hi) = (map.p_of_beta(lo)?, map.p_of_beta(hi)?);
            let s = rationalize(p_lo);
            let t = (rationalize(p_hi) - &s).max(Rational::zero());
            Ok((lo, hi, s, t))
        })
        .collect::<Result<_, TreeError>>()?;
    let residuals = i1_residuals(series);
    let mut min_coeff = f64::INFINITY;
    for (x, r) in &residuals {
        for (i, j, c) in r.coefficients() {
            let v = to_f64(c);
            min_coeff = min_coeff.min(v);
            tracker.observe(v, || Location::default().with_site(x).with_label(format!("coefficient p'^{i} t^{j}")));
        }
        for (lo, hi, s, t) in &points {
            let v = to_f64(&r.eval(s, t));
            tracker.observe(v, || Location::pair(*lo, *hi).with_site(x));
        }
    }
    tracker.fitted("min_coefficient", if min_coeff.is_finite() { min_coeff } else { 0.0 });
    Ok(tracker.finish())
}

/// `H_β = ([G·(G*G*G)] − δ)*J + (J*G)·(G*G*G) + (G*J*G)·(G*G)` through degree `degree`.
fn h_map(g: &SiteMap<Poly>, steps: &[(Vec<i32>, Rational)], dim: usize, degree: usize) -> SiteMap<Poly> {
    let gg = conv(g, g, degree);
    let ggg = conv(&gg, g, degree);
    let mut first = pointwise(g, &ggg, degree);
    add_into(&mut first, vec![0; dim], Poly::constant(-Rational::one()));
    let first = conv_kernel(&first, steps);
    let jg = conv_kernel(g, steps);
    let second = pointwise(&jg, &ggg, degree);
    let gjg = conv(&jg, g, degree);
    let third = pointwise(&gjg, &gg, degree);
    combine(&combine(&first, &second, false), &third, false)
}

/// `dG/dp − χ̂(p)·(G*(J − H)*G)` for every site, exact through degree `B − 1`. Since
/// `dβ/dp = χ̂`, its sign is that of `∂_βG − G*(J−H)*G`.
fn i2_residuals(series: &TreeSeries) -> SiteMap<Poly> {
    let b = series.max_bonds;
    if b == 0 {
        return SiteMap::new();
    }
    let degree = b - 1;
    let g = series.reduced_map(degree);
    let h = h_map(&g, &series.steps, series.dim, degree);
    let jg = conv_kernel(&g, &series.steps);
    let gjg = conv(&g, &jg, degree);
    let ghg = conv(&conv(&g, &h, degree), &g, degree);
    let bracket = combine(&gjg, &ghg, true);
    let chi = series.chi_hat().truncated(degree);
    let mut out: SiteMap<Poly> = bracket
        .into_iter()
        .map(|(x, v)| (x, Poly::zero().minus(&chi.mul_truncated(&v, degree))))
        .collect();
    for (x, p) in series.sites.iter().zip(&series.reduced) {
        add_into(&mut out, x.clone(), p.derivative().truncated(degree));
    }
    out
}

/// Coefficientwise check of the lower differential inequality with the lattice-tree `H`
/// through degree `B − 1`, then evaluation at each `β` (divided by `χ̂`).
pub fn check_i2_lt(series: &TreeSeries, map: &BetaMap, betas: &[f64]) -> Result<InequalityReport, TreeError> {
    let mut tracker = ResidualTracker::new(
        "lt_I2",
        "dG_b/db >= G_b * (J - H_b) * G_b with the lattice-tree H, truncated at degree B-1 in p",
        CHECK_TOL,
    );
    describe(&mut tracker, series);
    let points: Vec<(f64, Rational, f64)> = betas
        .iter()
        .map(|&b| {
            let p = map.p_of_beta(b)?;
            Ok((b, rationalize(p), p))
        })
        .collect::<Result<_, TreeError>>()?;
    let chi = series.chi_hat();
    let residuals = i2_residuals(series);
    let mut min_coeff = f64::INFINITY;
    for (x, r) in &residuals {
        for (k, c) in r.coeffs.iter().enumerate() {
            let v = to_f64(c);
            min_coeff = min_coeff.min(v);
            tracker.observe(v, || Location::default().with_site(x).with_label(format!("coefficient p^{k}")));
        }
        for (beta, p, pf) in &points {
            let v = to_f64(&r.eval(p)) / chi.eval_f64(*pf);
            tracker.observe(v, || Location::at_beta(*beta).with_site(x));
        }
    }
    tracker.fitted("min_coefficient", if min_coeff.is_finite() { min_coeff } else { 0.0 });
    Ok(tracker.finish())
}

/// `G_β(x) ≤ ρ_p(x) ≤ G_β(x)(1 + max_{J_z>0} G_β(z))^{(2R+1)^d}` at `p = p(β)`.
pub fn check_sandwich(series: &TreeSeries, map: &BetaMap, betas: &[f64]) -> Result<InequalityReport, TreeError> {
    let mut tracker = ResidualTracker::new(
        "lt_sandwich",
        "G_b(x) <= rho_p(x) <= G_b(x) (1 + max_{J_z>0} G_b(z))^((2R+1)^d), p = p(b)",
        CHECK_TOL,
    );
    describe(&mut tracker, series);
    let range = series.steps.iter().flat_map(|(s, _)| s.iter().map(|c| c.unsigned_abs())).max().unwrap_or(0);
    let exponent = (2 * range as i32 + 1).pow(series.dim as u32);
    for &beta in betas {
        let p = map.p_of_beta(beta)?;
        let near = series
            .steps
            .iter()
            .map(|(s, _)| series.reduced_at(s).eval_f64(p))
            .fold(0.0, f64::max);
        let factor = (1.0 + near).powi(exponent);
        for (x, (rho, g)) in series.sites.iter().zip(series.rho.iter().zip(&series.reduced)) {
            let (rho, g) = (rho.eval_f64(p), g.eval_f64(p));
            tracker.observe(rho - g, || Location::at_beta(beta).with_site(x).with_label("lower"));
            tracker.observe(g * factor - rho, || Location::at_beta(beta).with_site(x).with_label("upper"));
        }
    }
    Ok(tracker.finish())
}

/// Default grid of `n` values in `[0, β_max]`.
pub fn default_beta_grid(map: &BetaMap, n: usize) -> Vec<f64> {
    linear_grid(0.0, map.beta_max, n)
}

/// `H_β` for lattice trees on a box, from a two-point field.
pub fn h_lattice_trees(kernel: &AdmissibleKernel, g: &LatticeField) -> Result<LatticeField, TreeError> {
    let j = kernel.field();
    let gg = convolve(g, g)?;
    let ggg = convolve(&gg, g)?;
    let common = g.radius().max(ggg.radius());
    let mut first = g.resized(common).pointwise_mul(&ggg.resized(common))?;
    let origin = first.index_of(&vec![0; g.dim()]).expect("origin");
    first.values_mut()[origin] -= 1.0;
    let first = convolve(&first, j)?;
    let jg = convolve(j, g)?;
    let r2 = jg.radius().max(ggg.radius());
    let second = jg.resized(r2).pointwise_mul(&ggg.resized(r2))?;
    let gjg = convolve(&jg, g)?;
    let r3 = gjg.radius().max(gg.radius());
    let third = gjg.resized(r3).pointwise_mul(&gg.resized(r3))?;
    let r = first.radius().max(second.radius()).max(third.radius());
    Ok(first.resized(r).combine(1.0, &second.resized(r), 1.0)?.combine(1.0, &third.resized(r), 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{nearest_neighbour, rational, uniform_spread_out};

    fn series(d: usize, b: usize) -> TreeSeries {
        enumerate_trees(&nearest_neighbour(d).unwrap(), b).unwrap()
    }

    #[test]
    fn single_vertex_tree() {
        let s = series(2, 0);
        assert_eq!(s.one_point(), Poly::constant(rational(1, 1)));
        assert_eq!(s.sites, vec![vec![0, 0]]);
    }

    #[test]
    fn chain_one_point_and_susceptibility() {
        let s = series(1, 2);
        assert_eq!(s.one_point(), Poly { coeffs: vec![rational(1, 1), rational(1, 1), rational(3, 4)] });
        assert_eq!(s.chi_hat(), Poly { coeffs: vec![rational(1, 1), rational(2, 1), rational(9, 4)] });
        // In one dimension trees are intervals: k+1 of length k contain the origin.
        let s = series(1, 6);
        assert_eq!(s.tree_counts, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    /// Trees with `k` bonds containing the origin, among bond subsets of `near`.
    fn brute_force_count(near: &[([i32; 2], [i32; 2])], k: usize) -> u64 {
        fn is_tree(bonds: &[([i32; 2], [i32; 2])]) -> bool {
            let mut reached = vec![[0, 0]];
            let mut grew = true;
            while grew {
                grew = false;
                for (a, c) in bonds {
                    if reached.contains(a) != reached.contains(c) {
                        reached.push(if reached.contains(a) { *c } else { *a });
                        grew = true;
                    }
                }
            }
            // Connected with one more vertex than bonds.
            reached.len() == bonds.len() + 1 && bonds.iter().all(|(a, c)| reached.contains(a) && reached.contains(c))
        }
        fn rec(near: &[([i32; 2], [i32; 2])], start: usize, k: usize, picked: &mut Vec<([i32; 2], [i32; 2])>) -> u64 {
            if picked.len() == k {
                return is_tree(picked) as u64;
            }
            (start..near.len())
                .map(|i| {
                    picked.push(near[i]);
                    let n = rec(near, i + 1, k, picked);
                    picked.pop();
                    n
                })
                .sum()
        }
        rec(near, 0, k, &mut Vec::new())
    }

    #[test]
    fn square_lattice_counts_match_brute_force() {
        let b = 3;
        let s = series(2, b);
        let l1 = |v: &[i32; 2]| v[0].abs() + v[1].abs();
        let near: Vec<([i32; 2], [i32; 2])> = (-3..=3)
            .flat_map(|x| (-3..=3).flat_map(move |y| [([x, y], [x + 1, y]), ([x, y], [x, y + 1])]))
            .filter(|(a, c)| l1(a) <= b as i32 && l1(c) <= b as i32)
            .collect();
        let counts: Vec<u64> = (0..=b).map(|k| brute_force_count(&near, k)).collect();
        assert_eq!(s.tree_counts, counts);
        assert_eq!(&s.tree_counts[..3], &[1, 4, 18]);
    }

    #[test]
    fn dg_identity_exact() {
        for (d, b) in [(1, 4), (2, 4)] {
            let r = check_dg_identity(&series(d, b));
            assert!(r.pass && r.worst_residual == 0.0, "{r}");
        }
        let so = enumerate_trees(&uniform_spread_out(1, 2).unwrap(), 3).unwrap();
        assert!(check_dg_identity(&so).pass);
    }

    #[test]
    fn reduced_two_point_basics() {
        let s = series(2, 3);
        assert_eq!(s.reduced_at(&[0, 0]), Poly::constant(rational(1, 1)));
        // One bond to a neighbour, weight p/4; rho counts every tree through it.
        assert_eq!(s.reduced_at(&[1, 0]).coeff(1), rational(1, 4));
        for (rho, g) in s.rho.iter().zip(&s.reduced) {
            assert!((rho - g).has_nonnegative_coeffs() || g == &Poly::constant(rational(1, 1)));
        }
    }

    #[test]
    fn beta_map_inverts() {
        let s = series(2, 4);
        let map = BetaMap::new(&s);
        assert!(map.p_max > 0.0);
        for beta in linear_grid(0.0, map.beta_max, 7) {
            let p = map.p_of_beta(beta).unwrap();
            assert!((map.beta(p) - beta).abs() < 1e-12);
        }
        let g = two_point_beta(&s, &map, 0.0).unwrap();
        assert_eq!(g.origin_value(), 1.0);
        assert_eq!(g.mass(), 1.0);
        assert!(map.p_of_beta(map.beta_max * 2.0).is_err());
    }

    #[test]
    fn inequalities_hold_in_truncated_arithmetic() {
        for (d, b) in [(1, 4), (2, 3)] {
            let s = series(d, b);
            let map = BetaMap::new(&s);
            let grid = linear_grid(0.0, map.beta_max.min(0.2), 5);
            let pairs: Vec<(f64, f64)> = grid.iter().flat_map(|&a| grid.iter().filter(move |&&c| c >= a).map(move |&c| (a, c))).collect();
            let r1 = check_i1_lt(&s, &map, &pairs).unwrap();
            assert!(r1.pass, "{r1}");
            let r2 = check_i2_lt(&s, &map, &grid).unwrap();
            assert!(r2.pass, "{r2}");
            let sw = check_sandwich(&s, &map, &grid).unwrap();
            assert!(sw.pass, "{sw}");
        }
    }

    #[test]
    fn shifted_bipoly_expands_binomially() {
        let f = Poly::from_integers(&[0, 0, 1]);
        let b = BiPoly::shifted(&f, 4);
        // (s+t)² = s² + 2st + t².
        assert_eq!(b.0[0], Poly::from_integers(&[0, 0, 1]));
        assert_eq!(b.0[1], Poly::from_integers(&[0, 2]));
        assert_eq!(b.0[2], Poly::from_integers(&[1]));
    }

    #[test]
    fn series_json_round_trip() {
        let s = series(2, 2);
        let back = TreeSeries::from_json(&s.to_json()).unwrap();
        assert_eq!(back.rho, s.rho);
        assert_eq!(back.sites, s.sites);
    }

    #[test]
    fn lattice_tree_h_is_symmetric() {
        let k = nearest_neighbour(2).unwrap();
        let s = series(2, 3);
        let map = BetaMap::new(&s);
        let g = two_point_beta(&s, &map, map.beta_max * 0.5).unwrap();
        let h = h_lattice_trees(&k, &g).unwrap();
        assert!(h.is_symmetric(1e-14));
    }
}
