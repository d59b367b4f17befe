//! Effective random walks: step laws, moment generating functions, regularity,
//! anti-concentration and box-averaged Green functions.

use crate::conv::convolve;
use crate::green::GreenField;
use crate::interval::Interval;
use crate::kernels::AdmissibleKernel;
use crate::lattice::{LatticeError, LatticeField};
use crate::numeric::{linear_fit, log_grid, KahanSum};
use crate::orbit::{OrbitField, OrbitIndex, OrbitStencil};
use crate::rng::{run_blocks, SiteSampler};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest exponent accepted by [`mgf`] before reporting overflow.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Error)]
pub enum RwError {
    #[error("mgf overflows at s = {s}; largest admissible s is {max_s}")]
    Overflow { s: f64, max_s: f64 },
    #[error("no admissible c on the grid: M({floor}) = {value} exceeds C = {target}")]
    CertificateNotFound { floor: f64, value: f64, target: f64 },
    #[error("C_target must exceed 1, got {0}")]
    BadTarget(f64),
    #[error("step distribution has zero mass")]
    Empty,
    #[error("at least 10^4 trials are required, got {0}")]
    TooFewTrials(usize),
    #[error("mu must lie in [0, 1], got {0}")]
    MuOutOfRange(f64),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Transition law of a symmetric random walk with its standard deviation `σ = ξ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepDistribution {
    field: LatticeField,
    sigma_eff: f64,
    source: String,
}

impl StepDistribution {
    /// Normalises a nonnegative field; `σ² = Σ|x|²P(x)`.
    pub fn from_field(field: &LatticeField, source: impl Into<String>) -> Result<Self, RwError> {
        let mass = field.mass();
        if !(mass > 0.0) {
            return Err(RwError::Empty);
        }
        let mut f = field.scaled(1.0 / mass).with_tails(field.tail_bound() / mass, field.moment_tail_bound() / mass);
        f.set_symmetric_flag(field.symmetric());
        let sigma_eff = f.stored_second_moment().sqrt();
        Ok(StepDistribution {
            field: f,
            sigma_eff,
            source: source.into(),
        })
    }

    /// The `J`-walk.
    pub fn from_kernel(kernel: &AdmissibleKernel) -> Self {
        StepDistribution {
            field: kernel.field().clone(),
            sigma_eff: kernel.sigma(),
            source: format!("J-walk {}", kernel.label()),
        }
    }

    /// The effective walk `F_β/χ(β)` of the Green-function model, restricted to `Λ_radius`.
    pub fn from_green(green: &GreenField, radius: usize) -> Result<Self, RwError> {
        let f = green.smoothed_field(radius)?;
        let chi = green.chi().mid();
        let mut field = f.scaled(1.0 / chi).with_tails(f.tail_bound() / chi, f.moment_tail_bound() / chi);
        field.set_symmetric_flag(true);
        Ok(StepDistribution {
            field,
            sigma_eff: green.xi_sq().mid().sqrt(),
            source: format!("green {} beta={}", green.kernel().label(), green.beta()),
        })
    }

    /// Steps `±N e_i` with probability `1/(2d)` each.
    pub fn axis_walk(dim: usize, step: i32) -> Self {
        let field = LatticeField::from_fn(dim, step as usize, |c| {
            let nonzero: Vec<i32> = c.iter().copied().filter(|v| *v != 0).collect();
            if nonzero.len() == 1 && nonzero[0].abs() == step {
                1.0 / (2 * dim) as f64
            } else {
                0.0
            }
        });
        StepDistribution {
            field,
            sigma_eff: step as f64,
            source: format!("axis walk N={step}"),
        }
    }

    pub fn field(&self) -> &LatticeField {
        &self.field
    }

    pub fn sigma_eff(&self) -> f64 {
        self.sigma_eff
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn sampler(&self) -> SiteSampler {
        SiteSampler::new(self.field.support())
    }

    pub fn support_radius(&self) -> usize {
        self.field.support_radius()
    }

    /// Restriction to the smallest box holding all but `eps` of the mass; the rest moves to the tail.
    ///
    /// `σ_eff` is kept, so the walk stays on the scale of the full step law.
    pub fn truncated(&self, eps: f64) -> Self {
        let full = self.support_radius();
        let total = self.field.mass();
        let radius = (0..=full).find(|&k| total - self.field.box_sum(k) <= eps).unwrap_or(full);
        StepDistribution {
            field: self.field.resized(radius),
            sigma_eff: self.sigma_eff,
            source: format!("{} truncated {eps:e}", self.source),
        }
    }
}

/// `M(s) = Σ_x e^{s x₁/σ} P[X₁ = x]` over the stored support.
pub fn mgf(step: &StepDistribution, s: f64) -> Result<f64, RwError> {
    let reach = step.support_radius() as f64 / step.sigma_eff;
    if s.abs() * reach > MAX_EXPONENT {
        return Err(RwError::Overflow {
            s,
            max_s: MAX_EXPONENT / reach,
        });
    }
    let sigma = step.sigma_eff;
    Ok(step
        .field
        .support()
        .map(|(c, p)| (s * c[0] as f64 / sigma).exp() * p)
        .collect::<KahanSum>()
        .value())
}

/// `(c, C)` with `M(c) ≤ C`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RegularityCertificate {
    pub c_reg: f64,
    pub big_c_reg: f64,
    pub mgf_value: f64,
}

pub const DEFAULT_C_TARGET: f64 = 3.0;
const C_FLOOR: f64 = 1e-3;
const C_CEIL: f64 = 16.0;

/// Largest grid point `c` with `M(c) ≤ C_target`, by bisection on the log grid `[10⁻³, 16]`.
pub fn certify_regular(step: &StepDistribution, c_target: f64) -> Result<RegularityCertificate, RwError> {
    if !(c_target > 1.0) {
        return Err(RwError::BadTarget(c_target));
    }
    let grid = log_grid(C_FLOOR, C_CEIL, 256);
    let admissible = |s: f64| -> Result<Option<f64>, RwError> {
        match mgf(step, s) {
            Ok(v) if v <= c_target => Ok(Some(v)),
            Ok(_) | Err(RwError::Overflow { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let Some(first) = admissible(grid[0])? else {
        return Err(RwError::CertificateNotFound {
            floor: grid[0],
            value: mgf(step, grid[0]).unwrap_or(f64::INFINITY),
            target: c_target,
        });
    };
    // M is even and convex, hence nondecreasing on s ≥ 0.
    let (mut lo, mut hi) = (0usize, grid.len());
    let mut best = (grid[0], first);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        match admissible(grid[mid])? {
            Some(v) => {
                lo = mid;
                best = (grid[mid], v);
            }
            None => hi = mid,
        }
    }
    Ok(RegularityCertificate {
        c_reg: best.0,
        big_c_reg: c_target,
        mgf_value: best.1,
    })
}

/// Largest mass of a box `B_σ(y)` over real `y`, given the law of `X_m` on a box.
///
/// A window `[y−σ, y+σ]` holds at most `⌊2σ⌋+1` consecutive integers per axis, so sliding
/// windows of that width realise the supremum over all `y ∈ ℝ^d`.
pub fn max_box_mass(dist: &LatticeField, sigma: f64) -> (f64, Vec<i32>) {
    let width = (2.0 * sigma + 1e-12).floor() as usize + 1;
    let dim = dist.dim();
    let side = dist.side();
    let mut values = dist.values().to_vec();
    let mut extent = vec![side; dim];
    // Separable sliding sums; after the pass along `axis` its length is side − width + 1.
    for axis in 0..dim {
        let len = extent[axis];
        if width > len {
            return (dist.mass(), vec![0; dim]);
        }
        let new_len = len - width + 1;
        let stride: usize = extent[axis + 1..].iter().product();
        let outer: usize = extent[..axis].iter().product();
        let mut next = vec![0.0; outer * new_len * stride];
        for o in 0..outer {
            for s in 0..stride {
                let at = |k: usize| values[(o * len + k) * stride + s];
                let mut window: f64 = (0..width).map(at).sum();
                for k in 0..new_len {
                    next[(o * new_len + k) * stride + s] = window;
                    if k + width < len {
                        window += at(k + width) - at(k);
                    }
                }
            }
        }
        values = next;
        extent[axis] = new_len;
    }
    let (best, v) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    // Decode the window's lower corner and report its centre.
    let mut idx = best;
    let mut corner = vec![0i32; dim];
    for axis in (0..dim).rev() {
        corner[axis] = (idx % extent[axis]) as i32;
        idx /= extent[axis];
    }
    let r = dist.radius() as i32;
    let centre = corner.iter().map(|c| c - r + (width as i32 - 1) / 2).collect();
    (v, centre)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Occupancy {
    pub steps: usize,
    pub trials: usize,
    /// Estimated `sup_y P[X_m ∈ B_σ(y)]`.
    pub sup: f64,
    pub std_error: f64,
    pub argmax: Vec<i32>,
}

/// Monte Carlo estimate of `sup_y P[X_m ∈ B_σ(y)]` from the endpoint histogram.
pub fn empirical_box_occupancy(step: &StepDistribution, m: usize, trials: usize, seed: u64) -> Result<Occupancy, RwError> {
    if trials < 10_000 {
        return Err(RwError::TooFewTrials(trials));
    }
    let dim = step.dim();
    if m == 0 {
        return Ok(Occupancy {
            steps: 0,
            trials,
            sup: 1.0,
            std_error: 0.0,
            argmax: vec![0; dim],
        });
    }
    let radius = m * step.support_radius();
    let counts = LatticeField::checked_len(dim, radius)?;
    let sampler = step.sampler();
    let side = 2 * radius + 1;
    let histograms = run_blocks(trials, seed, |rng, count| {
        let mut pos = vec![0i32; dim];
        let mut hist: Vec<(usize, u32)> = Vec::with_capacity(count);
        for _ in 0..count {
            sampler.walk(m, rng, &mut pos);
            let idx = pos.iter().fold(0usize, |acc, &v| acc * side + (v + radius as i32) as usize);
            hist.push((idx, 1));
        }
        hist
    });
    let mut total = vec![0u32; counts];
    for block in histograms {
        for (i, c) in block {
            total[i] += c;
        }
    }
    let n = trials as f64;
    let field = LatticeField::from_values(dim, radius, total.iter().map(|&c| c as f64 / n).collect())?;
    let (sup, argmax) = max_box_mass(&field, step.sigma_eff);
    Ok(Occupancy {
        steps: m,
        trials,
        sup,
        std_error: (sup * (1.0 - sup) / n).sqrt(),
        argmax,
    })
}

/// Exact law of `X_m` by repeated convolution.
pub fn exact_step_law(step: &StepDistribution, m: usize) -> Result<LatticeField, RwError> {
    let mut law = LatticeField::delta(step.dim());
    for _ in 0..m {
        law = convolve(&law, &step.field)?;
    }
    Ok(law)
}

/// `𝔾_μ(B_σ(y)) = Σ_m μ^m P[X_m ∈ B_σ(y)]` with certified truncation for `μ < 1`.
///
/// The `m`-step laws are computed exactly on orbit storage; probability that leaves the box
/// or is missing from a truncated step law is added to the upper end, together with the series tail `μ^{K+1}/(1−μ)`.
pub fn green_box_average(step: &StepDistribution, mu: f64, y: &[i32], order: usize) -> Result<Interval, RwError> {
    let profile = green_box_profile(step, mu, &[y.to_vec()], order)?;
    Ok(profile[0])
}

/// [`green_box_average`] at several centres, sharing one ladder.
pub fn green_box_profile(step: &StepDistribution, mu: f64, centres: &[Vec<i32>], order: usize) -> Result<Vec<Interval>, RwError> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(RwError::MuOutOfRange(mu));
    }
    let dim = step.dim();
    let half = step.sigma_eff.floor() as i32;
    let far = centres.iter().flat_map(|c| c.iter().map(|v| v.unsigned_abs() as usize)).max().unwrap_or(0);
    let radius = (order * step.support_radius()).min(far + half as usize + 2 * step.support_radius() + 8).max(1);
    let index = OrbitIndex::new(dim, radius)?;
    let steps: Vec<(Vec<i32>, f64)> = step.field.support().collect();
    let stencil = OrbitStencil::new(index.clone(), &steps);
    let boxes: Vec<Vec<Vec<i32>>> = centres
        .iter()
        .map(|c| crate::lattice::BoxIter::new(dim, half).map(|o| o.iter().zip(c).map(|(a, b)| a + b).collect()).collect())
        .collect();
    let mut sums = vec![KahanSum::new(); centres.len()];
    let mut lost = KahanSum::new();
    let mut current = OrbitField::delta(index);
    let mut weight = 1.0;
    for m in 0..=order {
        if m > 0 {
            current = stencil.apply(&current);
            weight *= mu;
        }
        for (acc, sites) in sums.iter_mut().zip(&boxes) {
            acc.add(weight * sites.iter().map(|s| current.at(s)).sum::<f64>());
        }
        lost.add(weight * (1.0 - current.mass()).max(0.0));
        if weight == 0.0 {
            break;
        }
    }
    let tail = if mu < 1.0 {
        mu.powi(order as i32 + 1) / (1.0 - mu)
    } else {
        f64::INFINITY
    };
    Ok(sums
        .iter()
        .map(|s| Interval::with_tail(s.value(), lost.value() + tail))
        .collect())
}

/// Decay rate `ĉ` fitted to `log 𝔾_μ(B_σ(y)) ≈ const − ĉ√(1−μ)|y|/σ` along an axis.
pub fn fit_box_decay(step: &StepDistribution, mu: f64, distances: &[i32], order: usize) -> Result<f64, RwError> {
    let dim = step.dim();
    let centres: Vec<Vec<i32>> = distances
        .iter()
        .map(|&r| {
            let mut c = vec![0; dim];
            c[0] = r;
            c
        })
        .collect();
    let profile = green_box_profile(step, mu, &centres, order)?;
    let scale = (1.0 - mu).sqrt() / step.sigma_eff;
    let xs: Vec<f64> = distances.iter().map(|&r| r as f64 * scale).collect();
    let ys: Vec<f64> = profile.iter().map(|i| i.lo.max(f64::MIN_POSITIVE).ln()).collect();
    Ok(linear_fit(&xs, &ys).map(|(slope, _)| -slope).unwrap_or(f64::NAN))
}

/// Constants `(c_rw, C_rw)` fitted to box-averaged Green values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WalkEstimateConstants {
    pub c_rw: f64,
    pub big_c_rw: f64,
    pub provenance: String,
}

/// Right side of the box-averaged Green bound without `C_rw`:
/// `(σ/(σ∨|y|))^{d−2} exp(−c√(1−μ)|y|/σ)`.
pub fn green_box_profile_shape(dim: usize, sigma: f64, mu: f64, y: &[i32], c_rw: f64) -> f64 {
    let r = y.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    (sigma / sigma.max(r)).powi(dim as i32 - 2) * (-c_rw * (1.0 - mu).sqrt() * r / sigma).exp()
}

/// Fits `(c_rw, C_rw)` over the given centres: for each `c` on a log grid the smallest valid
/// `C(c)` is the largest ratio of the upper Green value to the shape; `c_rw` is the largest
/// grid point with `C(c) ≤ 2·C(c_min)`.
pub fn fit_walk_constants(
    step: &StepDistribution,
    mu: f64,
    centres: &[Vec<i32>],
    order: usize,
) -> Result<WalkEstimateConstants, RwError> {
    let profile = green_box_profile(step, mu, centres, order)?;
    let dim = step.dim();
    let sigma = step.sigma_eff;
    let big_c = |c: f64| {
        profile
            .iter()
            .zip(centres)
            .map(|(g, y)| g.hi / green_box_profile_shape(dim, sigma, mu, y, c))
            .fold(0.0, f64::max)
    };
    let grid = log_grid(0.01, 4.0, 40);
    let floor = big_c(grid[0]);
    let c_rw = grid
        .iter()
        .copied()
        .filter(|&c| big_c(c) <= 2.0 * floor)
        .fold(grid[0], f64::max);
    Ok(WalkEstimateConstants {
        c_rw,
        big_c_rw: big_c(c_rw),
        provenance: format!("fitted: {} mu={mu} order={order}", step.source),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{nearest_neighbour, uniform_spread_out};

    #[test]
    fn mgf_basics() {
        let k = nearest_neighbour(3).unwrap();
        let step = StepDistribution::from_kernel(&k);
        assert!((mgf(&step, 0.0).unwrap() - 1.0).abs() < 1e-15);
        for s in [0.3f64, 1.0, 2.5] {
            let expected = 2.0 / 3.0 + s.cosh() / 3.0;
            assert!((mgf(&step, s).unwrap() - expected).abs() < 1e-12);
            assert!((mgf(&step, s).unwrap() - mgf(&step, -s).unwrap()).abs() < 1e-12);
        }
        assert!(matches!(mgf(&step, 1e4), Err(RwError::Overflow { .. })));
    }

    #[test]
    fn axis_walk_mgf() {
        let step = StepDistribution::axis_walk(3, 5);
        assert_eq!(step.sigma_eff(), 5.0);
        let m1 = mgf(&step, 1.0).unwrap();
        assert!((m1 - (2.0 / 3.0 + 1f64.cosh() / 3.0)).abs() < 1e-12);
        assert!(m1 <= 1.0 + std::f64::consts::E);
    }

    #[test]
    fn certificates() {
        for k in [nearest_neighbour(3).unwrap(), uniform_spread_out(3, 2).unwrap()] {
            let step = StepDistribution::from_kernel(&k);
            let c = certify_regular(&step, (2.0 / k.c0()).exp()).unwrap();
            assert!(c.c_reg >= 2.0);
            assert!(c.mgf_value <= c.big_c_reg);
        }
        let step = StepDistribution::from_kernel(&nearest_neighbour(2).unwrap());
        assert!(matches!(certify_regular(&step, 1.0), Err(RwError::BadTarget(_))));
    }

    #[test]
    fn max_box_matches_brute_force() {
        let f = LatticeField::from_fn(2, 3, |c| ((c[0] * 3 + c[1] * 5).rem_euclid(7)) as f64);
        for sigma in [0.5, 1.0, 1.5] {
            let (v, centre) = max_box_mass(&f, sigma);
            let w = (2.0 * sigma).floor() as i32 + 1;
            let mut best = 0.0f64;
            for x0 in -3..=3 - (w - 1) {
                for x1 in -3..=3 - (w - 1) {
                    let mut s = 0.0;
                    for a in 0..w {
                        for b in 0..w {
                            s += f.at(&[x0 + a, x1 + b]);
                        }
                    }
                    best = best.max(s);
                }
            }
            assert!((v - best).abs() < 1e-12, "sigma={sigma}: {v} vs {best}");
            assert_eq!(centre.len(), 2);
        }
    }

    #[test]
    fn occupancy_matches_exact_law() {
        let k = nearest_neighbour(2).unwrap();
        let step = StepDistribution::from_kernel(&k);
        for m in [1, 3, 6] {
            let exact = exact_step_law(&step, m).unwrap();
            let (p, _) = max_box_mass(&exact, step.sigma_eff());
            let occ = empirical_box_occupancy(&step, m, 40_000, 11).unwrap();
            assert!((occ.sup - p).abs() < 3.0 * occ.std_error + 1e-3, "m={m}: {} vs {p}", occ.sup);
        }
        assert_eq!(empirical_box_occupancy(&step, 0, 10_000, 1).unwrap().sup, 1.0);
    }

    #[test]
    fn box_green_at_mu_zero() {
        let step = StepDistribution::from_kernel(&nearest_neighbour(3).unwrap());
        let at_origin = green_box_average(&step, 0.0, &[0, 0, 0], 5).unwrap();
        assert_eq!(at_origin, Interval::point(1.0));
        let away = green_box_average(&step, 0.0, &[3, 0, 0], 5).unwrap();
        assert_eq!(away, Interval::point(0.0));
    }

    #[test]
    fn axis_walk_defeats_pointwise_bounds() {
        // The Green function at N e₁ stays above 1/(2d) however large N is.
        for n in [2, 4, 8] {
            let step = StepDistribution::axis_walk(3, n);
            let g = green_box_profile(&step, 1.0, &[vec![n, 0, 0]], 1).unwrap();
            assert!(g[0].lo >= 1.0 / 6.0);
        }
    }
    #[test]
    fn axis_walk_is_uniformly_regular() {
        let step = StepDistribution::axis_walk(3, 7);
        let m1 = mgf(&step, 1.0).unwrap();
        assert!(m1 <= 1.0 + std::f64::consts::E);
        let cert = certify_regular(&step, 1.0 + std::f64::consts::E).unwrap();
        assert!(cert.c_reg >= 1.0);
    }

    #[test]
    fn green_walk_is_regular_and_symmetric() {
        let k = nearest_neighbour(3).unwrap();
        let g = crate::green::green_function_with(&k, 0.9, &Default::default()).unwrap();
        let step = StepDistribution::from_green(&g, g.radius()).unwrap();
        let f = step.field();
        assert!((f.mass() - 1.0).abs() < 1e-8);
        let odd: f64 = f.support().map(|(c, p)| c[0] as f64 * p).sum();
        assert!(odd.abs() < 1e-12);
        let axis: f64 = f.support().map(|(c, p)| (c[0] as f64).powi(2) * p).sum();
        assert!((axis / step.sigma_eff().powi(2) - 1.0 / 3.0).abs() < 1e-8);
        let cert = certify_regular(&step, DEFAULT_C_TARGET).unwrap();
        assert!(cert.mgf_value <= 3.0 && cert.c_reg > 0.1);
    }

    #[test]
    fn beta_zero_walk_is_the_kernel() {
        let k = uniform_spread_out(2, 2).unwrap();
        let g = crate::green::green_function_with(&k, 0.0, &Default::default()).unwrap();
        let step = StepDistribution::from_green(&g, 4).unwrap();
        assert!(step.field().resized(2).max_abs_diff(k.field()) < 1e-15);
    }

    #[test]
    fn box_green_decay_fit() {
        let k = nearest_neighbour(3).unwrap();
        let g = crate::green::green_function_with(&k, 0.5, &Default::default()).unwrap();
        let step = StepDistribution::from_green(&g, g.radius()).unwrap().truncated(1e-6);
        assert!(step.support_radius() < g.radius());
        let mu = 0.5;
        let rate = fit_box_decay(&step, mu, &[2, 4, 6, 8], 30).unwrap();
        assert!(rate > 0.0, "{rate}");
        let centres: Vec<Vec<i32>> = (0..8).map(|r| vec![r, 0, 0]).collect();
        let fit = fit_walk_constants(&step, mu, &centres, 30).unwrap();
        assert!(fit.c_rw > 0.0 && fit.big_c_rw > 0.0);
    }
}
