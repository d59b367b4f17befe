//! Weakly and strictly self-avoiding walks: exact degree-truncated two-point series.
//!
//! `c_n(x) = Σ_{|γ|=n, γ:0→x} J^γ ρ(γ)` with `ρ(γ) = Π_{s<t}(1 − λ·1{γ(s)=γ(t)})`.
//! For uniform kernels every coefficient is an integer combination of powers of `1 − λ`
//! over a power of the support size, so all checks below run in exact arithmetic.

use crate::conv::convolve;
use crate::exact::{evaluate_polynomial_field, rationalize, to_f64, ExactField};
use crate::interval::Interval;
use crate::kernels::{AdmissibleKernel, Rational};
use crate::lattice::{LatticeError, LatticeField};
use crate::numeric::KahanSum;
use crate::report::{InequalityReport, Location, ResidualTracker};
use num::{BigInt, Integer, One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Largest number of search nodes [`enumerate`] accepts.
pub const MAX_NODES: f64 = 1e9;

/// Absolute tolerance for series built from floating-point kernel weights.
const FLOAT_SERIES_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SawError {
    #[error("enumeration would visit about {estimate:.3e} nodes, above the limit {limit:.0e}")]
    TooCostly { estimate: f64, limit: f64 },
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("beta must be nonnegative, got {0}")]
    NegativeBeta(f64),
    #[error("need beta' <= beta, got {low} > {high}")]
    InvertedPair { low: f64, high: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Degree-truncated two-point series `G^{(N)}_β(x) = Σ_{n≤N} c_n(x) βⁿ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoPointSeries {
    dim: usize,
    kernel_label: String,
    /// The step distribution `J`.
    kernel: LatticeField,
    /// `J` with exact values.
    kernel_exact: ExactField,
    lambda: f64,
    lambda_exact: Rational,
    max_degree: usize,
    /// True when the coefficients are exact; otherwise they carry float rounding from the kernel.
    exact: bool,
    coeffs_exact: Vec<ExactField>,
    coeffs: Vec<LatticeField>,
}

/// Bracket for `β_c = 1/lim c_n^{1/n}` from the first `N` totals.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CriticalEstimate {
    /// `max_n c_n^{−1/n}`, a rigorous lower bound since `c_n^{1/n}` decreases to its limit.
    pub beta_c_lower: f64,
    /// Ratio estimate `c_{N−1}/c_N`, raised to the lower bound if needed. Not rigorous.
    pub beta_c_upper: f64,
    pub source_degree: usize,
}

/// Upper estimate of the search size: `Σ_n Sⁿ`, or `Σ_n S(S−1)^{n−1}` when `λ = 1`.
pub fn estimated_nodes(support: usize, lambda: f64, max_degree: usize) -> f64 {
    let s = support as f64;
    (0..=max_degree)
        .map(|n| match n {
            0 => 1.0,
            _ if lambda >= 1.0 => s * (s - 1.0).powi(n as i32 - 1),
            _ => s.powi(n as i32),
        })
        .sum()
}

/// Per-branch tallies: `(site, coincidences) ↦ count` per length, plus weight sums for
/// non-uniform kernels.
struct Tally {
    counts: Vec<HashMap<(usize, usize), u64>>,
    weights: Vec<HashMap<(usize, usize), f64>>,
}

struct Search<'a> {
    steps: &'a [(Vec<i32>, f64)],
    uniform: bool,
    lambda_one: bool,
    track_coincidences: bool,
    confine: i32,
    side: usize,
    max_degree: usize,
    visits: Vec<u8>,
    pos: Vec<i32>,
    tally: Tally,
}

impl Search<'_> {
    fn index(&self) -> usize {
        let r = self.confine;
        self.pos.iter().fold(0usize, |acc, &v| acc * self.side + (v + r) as usize)
    }

    fn record(&mut self, n: usize, coincidences: usize, weight: f64) {
        let key = (self.index(), coincidences);
        *self.tally.counts[n].entry(key).or_insert(0) += 1;
        if !self.uniform {
            *self.tally.weights[n].entry(key).or_insert(0.0) += weight;
        }
    }

    fn descend(&mut self, n: usize, coincidences: usize, weight: f64) {
        self.record(n, coincidences, weight);
        if n == self.max_degree {
            return;
        }
        for s in 0..self.steps.len() {
            let (step, w) = (&self.steps[s].0, self.steps[s].1);
            let inside = self.pos.iter().zip(step).all(|(p, d)| (p + d).abs() <= self.confine);
            if !inside {
                continue;
            }
            self.pos.iter_mut().zip(step).for_each(|(p, d)| *p += d);
            let idx = self.index();
            let seen = self.visits[idx] as usize;
            if !(self.lambda_one && seen > 0) {
                self.visits[idx] += 1;
                let k = if self.track_coincidences { coincidences + seen } else { 0 };
                self.descend(n + 1, k, weight * w);
                self.visits[idx] -= 1;
            }
            self.pos.iter_mut().zip(step).for_each(|(p, d)| *p -= d);
        }
    }
}

/// Exact enumeration of `c_n(x)` for `n ≤ max_degree`.
///
/// With `confine = Some(L)` walks must stay in `Λ_L`; by default nothing is excluded.
pub fn enumerate(
    kernel: &AdmissibleKernel,
    lambda: f64,
    max_degree: usize,
    confine: Option<usize>,
) -> Result<TwoPointSeries, SawError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SawError::BadLambda(lambda));
    }
    let steps: Vec<(Vec<i32>, f64)> = kernel.steps().iter().map(|(p, w)| (p.coords().to_vec(), *w)).collect();
    let estimate = estimated_nodes(steps.len(), lambda, max_degree);
    if estimate > MAX_NODES {
        return Err(SawError::TooCostly {
            estimate,
            limit: MAX_NODES,
        });
    }
    let dim = kernel.dim();
    let full = max_degree * kernel.range() as usize;
    let reach = confine.map_or(full, |c| c.min(full));
    let side = 2 * reach + 1;
    let sites = LatticeField::checked_len(dim, reach)?;
    let uniform = steps.iter().all(|(_, w)| *w == steps[0].1);
    let lambda_exact = rationalize(lambda);
    let lambda_one = lambda_exact.is_one();
    let track_coincidences = !lambda_exact.is_zero() && !lambda_one;
    let empty = || Tally {
        counts: vec![HashMap::new(); max_degree + 1],
        weights: vec![HashMap::new(); max_degree + 1],
    };
    let origin_idx = (sites - 1) / 2;
    let run = |first: Option<usize>| -> Tally {
        let mut search = Search {
            steps: &steps,
            uniform,
            lambda_one,
            track_coincidences,
            confine: reach as i32,
            side,
            max_degree,
            visits: vec![0u8; sites],
            pos: vec![0; dim],
            tally: empty(),
        };
        search.visits[origin_idx] = 1;
        match first {
            None => search.record(0, 0, 1.0),
            Some(s) => {
                let (step, w) = (&steps[s].0, steps[s].1);
                if step.iter().all(|d| d.abs() <= reach as i32) {
                    search.pos.copy_from_slice(step);
                    let idx = search.index();
                    search.visits[idx] += 1;
                    search.descend(1, 0, w);
                }
            }
        }
        search.tally
    };
    let branches: Vec<Option<usize>> = if max_degree == 0 {
        vec![None]
    } else {
        std::iter::once(None).chain((0..steps.len()).map(Some)).collect()
    };
    let tallies: Vec<Tally> = branches.into_par_iter().map(run).collect();
    // The `None` branch records only the empty walk; its descend is not run.
    let mut merged = empty();
    for t in tallies {
        for (n, map) in t.counts.into_iter().enumerate() {
            for (k, v) in map {
                *merged.counts[n].entry(k).or_insert(0) += v;
            }
        }
        for (n, map) in t.weights.into_iter().enumerate() {
            for (k, v) in map {
                *merged.weights[n].entry(k).or_insert(0.0) += v;
            }
        }
    }
    let support = steps.len() as u64;
    let coeffs_exact: Vec<ExactField> = (0..=max_degree)
        .map(|n| {
            let radius = (n * kernel.range() as usize).min(reach);
            if uniform {
                exact_coefficient(dim, radius, reach, &merged.counts[n], support, n, &lambda_exact)
            } else {
                float_coefficient(dim, radius, reach, &merged.weights[n], lambda)
            }
        })
        .collect::<Result<_, _>>()?;
    let coeffs = coeffs_exact.iter().map(|c| c.to_field()).collect();
    let kernel_exact = if uniform {
        let offsets: Vec<Vec<i32>> = steps.iter().map(|(s, _)| s.clone()).collect();
        ExactField::delta(dim)
            .step_sum(&offsets)
            .scaled(&Rational::new(BigInt::one(), BigInt::from(support)))
    } else {
        binary_exact(kernel.field())?
    };
    Ok(TwoPointSeries {
        dim,
        kernel_label: kernel.label(),
        kernel: kernel.field().clone(),
        kernel_exact,
        lambda,
        lambda_exact,
        max_degree,
        exact: uniform,
        coeffs_exact,
        coeffs,
    })
}

/// `Σ_k N_k (q−p)^k q^{K−k} / (Sⁿ q^K)` with `λ = p/q` and `K` the largest coincidence count.
fn exact_coefficient(
    dim: usize,
    radius: usize,
    reach: usize,
    counts: &HashMap<(usize, usize), u64>,
    support: u64,
    n: usize,
    lambda: &Rational,
) -> Result<ExactField, SawError> {
    let out = ExactField::zeros(dim, radius)?;
    let (p, q) = (lambda.numer().clone(), lambda.denom().clone());
    let kmax = counts.keys().map(|(_, k)| *k).max().unwrap_or(0);
    let keep = &q - &p;
    let weights: Vec<BigInt> = (0..=kmax)
        .map(|k| num::pow(keep.clone(), k) * num::pow(q.clone(), kmax - k))
        .collect();
    let mut num_vec = out.numerators().to_vec();
    let big_side = 2 * reach + 1;
    for (&(site, k), &count) in counts {
        let coords = decode(site, dim, big_side, reach as i32);
        if let Some(i) = out.index_of(&coords) {
            num_vec[i] += BigInt::from(count) * &weights[k];
        }
    }
    let den = num::pow(BigInt::from(support), n) * num::pow(q, kmax);
    Ok(ExactField::from_parts(dim, radius, num_vec, den)?.reduced())
}

fn float_coefficient(
    dim: usize,
    radius: usize,
    reach: usize,
    weights: &HashMap<(usize, usize), f64>,
    lambda: f64,
) -> Result<ExactField, SawError> {
    let mut field = LatticeField::zeros(dim, radius);
    let big_side = 2 * reach + 1;
    let mut keys: Vec<_> = weights.iter().collect();
    keys.sort_by_key(|(k, _)| **k);
    for (&(site, k), &w) in keys {
        let coords = decode(site, dim, big_side, reach as i32);
        if let Some(i) = field.index_of(&coords) {
            field.values_mut()[i] += w * (1.0 - lambda).powi(k as i32);
        }
    }
    binary_exact(&field)
}

fn decode(mut idx: usize, dim: usize, side: usize, radius: i32) -> Vec<i32> {
    let mut c = vec![0i32; dim];
    for slot in c.iter_mut().rev() {
        *slot = (idx % side) as i32 - radius;
        idx /= side;
    }
    c
}

/// Exact binary value of every entry of a float field.
pub fn binary_exact(field: &LatticeField) -> Result<ExactField, SawError> {
    let rationals: Vec<Rational> = field
        .values()
        .iter()
        .map(|&v| Rational::from_float(v).unwrap_or_else(Rational::zero))
        .collect();
    let den = rationals.iter().fold(BigInt::one(), |acc, r| acc.lcm(r.denom()));
    let num = rationals.iter().map(|r| r.numer() * (&den / r.denom())).collect();
    Ok(ExactField::from_parts(field.dim(), field.radius(), num, den)?)
}

impl TwoPointSeries {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_exact(&self) -> &Rational {
        &self.lambda_exact
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn kernel_label(&self) -> &str {
        &self.kernel_label
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// `c_n` as floats.
    pub fn coeff(&self, n: usize) -> &LatticeField {
        &self.coeffs[n]
    }

    pub fn coeff_exact(&self, n: usize) -> &ExactField {
        &self.coeffs_exact[n]
    }

    /// `c_n = Σ_x c_n(x)`.
    pub fn total(&self, n: usize) -> Rational {
        self.coeffs_exact[n].sum()
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..=self.max_degree).map(|n| to_f64(&self.total(n))).collect()
    }

    fn tolerance(&self) -> f64 {
        if self.exact {
            0.0
        } else {
            FLOAT_SERIES_TOL
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("series serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// `G^{(N)}_β = Σ_{n≤N} c_n βⁿ`, flagged uncertified for `β > 0` since the tail is unknown.
pub fn eval(series: &TwoPointSeries, beta: f64) -> Result<LatticeField, SawError> {
    if beta < 0.0 {
        return Err(SawError::NegativeBeta(beta));
    }
    let radius = series.coeffs.last().map_or(0, |c| c.radius());
    let mut out = LatticeField::zeros(series.dim, radius);
    let mut power = 1.0;
    for c in &series.coeffs {
        out = out.combine(1.0, c, power)?;
        power *= beta;
    }
    Ok(if beta > 0.0 { out.uncertified() } else { out })
}

/// `χ^{(N)}(β)`, a lower bound on `χ(β)` without a tail certificate.
pub fn chi_series(series: &TwoPointSeries, beta: f64) -> Result<Interval, SawError> {
    if beta < 0.0 {
        return Err(SawError::NegativeBeta(beta));
    }
    let sum: KahanSum = series
        .totals()
        .iter()
        .enumerate()
        .map(|(n, c)| c * beta.powi(n as i32))
        .collect();
    Ok(Interval::lower_bound(sum.value()))
}

/// `B°(β) = (G*J*G)(0)` built from the truncated series; a lower bound.
pub fn bubble(series: &TwoPointSeries, beta: f64) -> Result<Interval, SawError> {
    let g = eval(series, beta)?;
    let jg = convolve(&series.kernel, &g)?;
    let value: KahanSum = g.iter().map(|(x, v)| v * jg.at(&x)).collect();
    Ok(Interval::lower_bound(value.value()))
}

/// Fekete bracket for the critical point.
pub fn critical_estimate(series: &TwoPointSeries) -> CriticalEstimate {
    let totals = series.totals();
    let lower = totals
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| **c > 0.0)
        .map(|(n, c)| c.powf(-1.0 / n as f64))
        .fold(0.0, f64::max);
    let n = series.max_degree;
    let ratio = if n >= 2 && totals[n] > 0.0 {
        totals[n - 1] / totals[n]
    } else {
        f64::INFINITY
    };
    CriticalEstimate {
        beta_c_lower: lower,
        beta_c_upper: ratio.max(lower),
        source_degree: n,
    }
}

/// Exact products shared by both checks.
struct Products {
    /// `(c_i*J*c_j)` for `i + j ≤ N−1`, keyed by `(i, j)`.
    open: HashMap<(usize, usize), ExactField>,
}

impl Products {
    fn new(series: &TwoPointSeries) -> Self {
        let n = series.max_degree;
        let jc: Vec<ExactField> = series
            .coeffs_exact
            .iter()
            .take(n)
            .map(|c| c.convolve(&series.kernel_exact))
            .collect();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n - i).map(move |j| (i, j))).collect();
        let open = pairs
            .into_par_iter()
            .map(|(i, j)| ((i, j), series.coeffs_exact[i].convolve(&jc[j])))
            .collect();
        Products { open }
    }

    /// `b_m = Σ_{i+j=m} (c_i*J*c_j)(0)`.
    fn bubble_coefficients(&self, max: usize) -> Vec<Rational> {
        let origin = vec![0i32; self.open.values().next().map_or(1, |f| f.dim())];
        (0..=max)
            .map(|m| {
                (0..=m)
                    .filter_map(|i| self.open.get(&(i, m - i)))
                    .map(|f| f.at(&origin))
                    .fold(Rational::zero(), |a, b| a + b)
            })
            .collect()
    }
}

fn rational_or_error(beta: f64) -> Result<Rational, SawError> {
    if beta < 0.0 || beta.is_nan() {
        return Err(SawError::NegativeBeta(beta));
    }
    Ok(rationalize(beta))
}

/// Degree-matched check of `G_β ≤ G_{β'} + (β−β')(G_{β'}*J*G_β)` at one pair.
pub fn check_i1_truncated(series: &TwoPointSeries, beta_low: f64, beta_high: f64) -> Result<InequalityReport, SawError> {
    check_i1_grid(series, &[(beta_low, beta_high)])
}

/// As [`check_i1_truncated`] over several pairs.
///
/// The difference of the two sides is `(β−β') Σ_{i+j≤N−1} D_{ij}(x) β'^i β^j` with
/// `D_{ij} = c_i*J*c_j − c_{i+j+1}`; the coefficients are checked too and their minimum is
/// reported as `min_coefficient`.
pub fn check_i1_grid(series: &TwoPointSeries, pairs: &[(f64, f64)]) -> Result<InequalityReport, SawError> {
    for &(lo, hi) in pairs {
        if lo > hi {
            return Err(SawError::InvertedPair { low: lo, high: hi });
        }
    }
    let products = Products::new(series);
    let mut tracker = ResidualTracker::new(
        "saw_I1",
        "G_b(x) <= G_b'(x) + (b-b')(G_b' * J * G_b)(x), degree-matched at N",
        series.tolerance(),
    );
    describe(&mut tracker, series);
    let n = series.max_degree;
    let mut diffs: Vec<((usize, usize), ExactField)> = Vec::new();
    let mut min_coeff = f64::INFINITY;
    for i in 0..n {
        for j in 0..n - i {
            let d = &products.open[&(i, j)] - &series.coeffs_exact[i + j + 1];
            let worst = d
                .numerators()
                .iter()
                .min()
                .map_or(0.0, |v| to_f64(&Rational::new(v.clone(), d.den().clone())));
            min_coeff = min_coeff.min(worst);
            diffs.push(((i, j), d));
        }
    }
    if !min_coeff.is_finite() {
        min_coeff = 0.0;
    }
    tracker.fitted("min_coefficient", min_coeff);
    if n == 0 {
        // Both sides are δ₀.
        for &(lo, hi) in pairs {
            tracker.observe(0.0, || Location::pair(lo, hi));
        }
        return Ok(tracker.finish());
    }
    for &(lo, hi) in pairs {
        let (s, t) = (rational_or_error(lo)?, rational_or_error(hi)?);
        let gap = &t - &s;
        let values = bivariate_eval(&diffs, &s, &t, n - 1);
        for (x, v) in values {
            let r = to_f64(&(&gap * &v));
            tracker.observe(r, || Location::pair(lo, hi).with_site(&x));
        }
    }
    Ok(tracker.finish())
}

/// `Σ_{(i,j)} D_{ij}(x) s^i t^j` at every site, exactly.
fn bivariate_eval(terms: &[((usize, usize), ExactField)], s: &Rational, t: &Rational, degree: usize) -> Vec<(Vec<i32>, Rational)> {
    let dim = terms[0].1.dim();
    let radius = terms.iter().map(|(_, f)| f.radius()).max().unwrap_or(0);
    let den = terms.iter().fold(BigInt::one(), |acc, (_, f)| acc.lcm(f.den()));
    let weight = |i: usize, j: usize| {
        num::pow(s.numer().clone(), i)
            * num::pow(s.denom().clone(), degree - i)
            * num::pow(t.numer().clone(), j)
            * num::pow(t.denom().clone(), degree - j)
    };
    let scaled: Vec<(BigInt, ExactField)> = terms
        .iter()
        .map(|((i, j), f)| (weight(*i, *j), f.grown(radius).with_den(&den)))
        .collect();
    let total_den = den * num::pow(s.denom().clone(), degree) * num::pow(t.denom().clone(), degree);
    let probe = ExactField::zeros(dim, radius).expect("box fits");
    (0..probe.numerators().len())
        .map(|k| {
            let v: BigInt = scaled.iter().map(|(w, f)| &f.numerators()[k] * w).sum();
            (probe.coords_of(k), Rational::new(v, total_den.clone()))
        })
        .collect()
}

/// Coefficient fields `R_n`, `n ≤ N−1`, of `∂_βG − G*(J−H_β)*G` with `H_β = λB°(β)δ₀`:
/// `R_n = (n+1)c_{n+1} − Σ_{i+j=n} c_i*J*c_j + λ Σ_{m+k+l=n} b_m (c_k*c_l)`.
fn i2_coefficients(series: &TwoPointSeries, products: &Products) -> Vec<ExactField> {
    let n = series.max_degree;
    let bubble = products.bubble_coefficients(n.saturating_sub(1));
    let lambda = &series.lambda_exact;
    let plain: HashMap<(usize, usize), ExactField> = if lambda.is_zero() {
        HashMap::new()
    } else {
        (0..n)
            .flat_map(|k| (0..n - k).map(move |l| (k, l)))
            .filter(|(k, l)| k <= l)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(k, l)| ((k, l), series.coeffs_exact[k].convolve(&series.coeffs_exact[l])))
            .collect()
    };
    (0..n)
        .map(|deg| {
            let mut acc = series.coeffs_exact[deg + 1].scaled(&Rational::from_integer(BigInt::from(deg + 1)));
            for i in 0..=deg {
                acc = acc.combine(&Rational::one(), &products.open[&(i, deg - i)], &-Rational::one());
            }
            if !lambda.is_zero() {
                for (m, b) in bubble.iter().enumerate().take(deg + 1) {
                    if b.is_zero() {
                        continue;
                    }
                    let weight = lambda * b;
                    for k in 0..=deg - m {
                        let l = deg - m - k;
                        let key = (k.min(l), k.max(l));
                        acc = acc.combine(&Rational::one(), &plain[&key], &weight);
                    }
                }
            }
            acc
        })
        .collect()
}

/// Degree-matched check of `∂_βG_β ≥ G_β*(J − H_β)*G_β` with `H_β = λB°(β)δ₀`.
pub fn check_i2_truncated(series: &TwoPointSeries, beta: f64) -> Result<InequalityReport, SawError> {
    check_i2_grid(series, &[beta])
}

pub fn check_i2_grid(series: &TwoPointSeries, betas: &[f64]) -> Result<InequalityReport, SawError> {
    let products = Products::new(series);
    let coeffs = i2_coefficients(series, &products);
    let mut tracker = ResidualTracker::new(
        "saw_I2",
        "d/db G_b(x) >= (G_b * (J - H_b) * G_b)(x), H_b = lambda B(b) delta_0, degree-matched at N",
        series.tolerance(),
    );
    describe(&mut tracker, series);
    let min_coeff = coeffs
        .iter()
        .flat_map(|c| c.numerators().iter().map(move |v| (v, c.den())))
        .filter(|(v, _)| v.is_negative())
        .map(|(v, d)| to_f64(&Rational::new(v.clone(), d.clone())))
        .fold(0.0, f64::min);
    tracker.fitted("min_coefficient", min_coeff);
    for &beta in betas {
        let t = rational_or_error(beta)?;
        if coeffs.is_empty() {
            tracker.observe(0.0, || Location::at_beta(beta));
            continue;
        }
        for (x, v) in evaluate_polynomial_field(&coeffs, &t) {
            tracker.observe(to_f64(&v), || Location::at_beta(beta).with_site(&x));
        }
    }
    Ok(tracker.finish())
}

fn describe(tracker: &mut ResidualTracker, series: &TwoPointSeries) {
    tracker
        .param("kernel", &series.kernel_label)
        .param("lambda", series.lambda)
        .param("N", series.max_degree)
        .param("arithmetic", if series.exact { "exact" } else { "float" });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{nearest_neighbour, rational, uniform_spread_out};

    #[test]
    fn low_degrees() {
        let k = nearest_neighbour(2).unwrap();
        for (lambda, expected) in [(1.0, rational(3, 4)), (0.5, rational(7, 8)), (0.0, rational(1, 1))] {
            let s = enumerate(&k, lambda, 2, None).unwrap();
            assert_eq!(s.total(0), rational(1, 1));
            assert_eq!(s.coeff_exact(0).at(&[0, 0]), rational(1, 1));
            assert_eq!(s.total(1), rational(1, 1));
            assert_eq!(s.total(2), expected, "lambda={lambda}");
        }
    }

    #[test]
    fn two_step_totals_closed_form() {
        for d in [2usize, 3] {
            for (lambda, q) in [(0.5, rational(1, 2)), (1.0, rational(1, 1))] {
                let s = enumerate(&nearest_neighbour(d).unwrap(), lambda, 2, None).unwrap();
                let two_d = rational(2 * d as i64, 1);
                let expected = (&two_d - rational(1, 1)) / &two_d + (rational(1, 1) - q) / &two_d;
                assert_eq!(s.total(2), expected);
            }
        }
    }

    #[test]
    fn known_saw_counts() {
        // Square-lattice SAW counts 4, 12, 36, 100, 284, 780.
        let s = enumerate(&nearest_neighbour(2).unwrap(), 1.0, 6, None).unwrap();
        let counts = [1, 4, 12, 36, 100, 284, 780];
        for (n, c) in counts.iter().enumerate() {
            assert_eq!(s.total(n), rational(*c, 4i64.pow(n as u32)));
        }
    }

    #[test]
    fn free_walk_matches_kernel_powers() {
        let k = uniform_spread_out(1, 2).unwrap();
        let s = enumerate(&k, 0.0, 4, None).unwrap();
        let mut power = LatticeField::delta(1);
        for n in 0..=4 {
            assert!(s.coeff(n).max_abs_diff(&power) < 1e-15, "n={n}");
            power = convolve(&power, k.field()).unwrap();
        }
    }

    #[test]
    fn cost_guard() {
        let k = nearest_neighbour(5).unwrap();
        assert!(matches!(enumerate(&k, 1.0, 12, None), Err(SawError::TooCostly { .. })));
        assert!(matches!(enumerate(&k, 1.5, 2, None), Err(SawError::BadLambda(_))));
    }

    #[test]
    fn confinement_removes_walks() {
        let k = nearest_neighbour(1).unwrap();
        let s = enumerate(&k, 0.0, 3, Some(1)).unwrap();
        let allowed = |len: u32| {
            (0..1u32 << len)
                .filter(|bits| {
                    let mut p = 0i32;
                    (0..len).all(|i| {
                        p += if bits >> i & 1 == 1 { 1 } else { -1 };
                        p.abs() <= 1
                    })
                })
                .count() as i64
        };
        assert_eq!(s.total(2), rational(allowed(2), 4));
        assert_eq!(s.total(3), rational(allowed(3), 8));
    }

    #[test]
    fn checks_pass_in_exact_arithmetic() {
        let s = enumerate(&nearest_neighbour(2).unwrap(), 1.0, 6, None).unwrap();
        let r1 = check_i1_truncated(&s, 0.1, 0.2).unwrap();
        assert!(r1.pass && r1.tolerance == 0.0, "{r1}");
        let r2 = check_i2_truncated(&s, 0.15).unwrap();
        assert!(r2.pass, "{r2}");
        assert!(r2.fitted["min_coefficient"] >= 0.0);
        let same = check_i1_truncated(&s, 0.2, 0.2).unwrap();
        assert_eq!(same.worst_residual, 0.0);
    }

    #[test]
    fn free_walk_is_the_equality_case() {
        let s = enumerate(&nearest_neighbour(2).unwrap(), 0.0, 5, None).unwrap();
        let r1 = check_i1_grid(&s, &[(0.1, 0.3), (0.0, 0.4)]).unwrap();
        assert_eq!(r1.worst_residual, 0.0);
        assert_eq!(r1.fitted["min_coefficient"], 0.0);
        let r2 = check_i2_grid(&s, &[0.2, 0.4]).unwrap();
        assert_eq!(r2.worst_residual, 0.0);
    }

    #[test]
    fn detects_a_corrupted_coefficient() {
        let mut s = enumerate(&nearest_neighbour(2).unwrap(), 1.0, 4, None).unwrap();
        let boosted = s.coeffs_exact[3].scaled(&rational(3, 2));
        s.coeffs_exact[3] = boosted;
        assert!(!check_i1_truncated(&s, 0.1, 0.3).unwrap().pass);
    }

    #[test]
    fn chi_and_bubble_at_zero() {
        let k = nearest_neighbour(3).unwrap();
        let s = enumerate(&k, 1.0, 3, None).unwrap();
        assert_eq!(chi_series(&s, 0.0).unwrap().lo, 1.0);
        let b = bubble(&s, 0.0).unwrap();
        assert_eq!(b.lo, 0.0);
        let g = eval(&s, 0.0).unwrap();
        assert_eq!(g.origin_value(), 1.0);
        assert_eq!(g.mass(), 1.0);
    }

    #[test]
    fn fekete_bracket() {
        let s = enumerate(&nearest_neighbour(2).unwrap(), 1.0, 8, None).unwrap();
        let est = critical_estimate(&s);
        assert!(est.beta_c_lower >= 1.0);
        assert!(est.beta_c_lower <= est.beta_c_upper);
        // 4/μ with μ ≈ 2.638 lies inside the loose bracket.
        assert!(est.beta_c_lower < 4.0 / 2.638 && 4.0 / 2.638 < est.beta_c_upper + 0.1);
    }

    #[test]
    fn serialization_round_trip() {
        let s = enumerate(&nearest_neighbour(2).unwrap(), 0.5, 3, None).unwrap();
        let back = TwoPointSeries::from_json(&s.to_json()).unwrap();
        assert_eq!(back.total(3), s.total(3));
    }
}
