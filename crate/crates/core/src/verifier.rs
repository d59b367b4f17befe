//! Checks of the model-independent inequalities on computed data, and fits of the constants in
//! the main two-point bound.

use crate::conv::{convolve, convolve_at};
use crate::green::{green_function_with, GreenError, GreenOptions, DEFAULT_TAIL, FLOAT_TOL};
use crate::interval::Interval;
use crate::kernels::AdmissibleKernel;
use crate::lattice::{sup_norm, LatticeError, LatticeField};
use crate::observables::{beta_of_delta, ErrorSweep, Observables, ObservablesError, ZFactor};
use crate::report::{InequalityReport, Location, ResidualTracker};
use crate::rng::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("need at least one grid point")]
    EmptyGrid,
    #[error("beta' = {low} must not exceed beta = {high}")]
    InvertedPair { low: f64, high: f64 },
    #[error("the infinite expansion needs Z < 1, got Z ≤ {0}")]
    NotContracting(f64),
    #[error("xi = {xi:.3} at beta' = {beta} does not fit in the stored box of radius {radius}")]
    XiOutsideBox { beta: f64, xi: f64, radius: usize },
    #[error("a constant grid must be nonempty and positive")]
    BadGrid,
    #[error(transparent)]
    Observables(#[from] ObservablesError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

fn scale_tol(values: &[f64]) -> f64 {
    FLOAT_TOL * values.iter().fold(1.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { m })
}

/// Index pairs `(i, j)` with `i ≤ j`.
fn ordered_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |j| (0..=j).map(move |i| (i, j)))
}

/// `(β−β′)(1−E(β)) ≤ 1/χ(β′) − 1/χ(β) ≤ β−β′` for every ordered pair of the sweep.
///
/// Each side is evaluated at the end of its interval that makes the inequality easiest, so a
/// failure contradicts every value compatible with the computed intervals.
pub fn check_chi_sandwich(sweep: &ErrorSweep) -> InequalityReport {
    let mut t = ResidualTracker::new(
        "chi_sandwich",
        "(b-b')(1-E(b)) <= 1/chi(b') - 1/chi(b) <= b-b'",
        0.0,
    );
    t.param("model", sweep.points.first().map_or(String::new(), |p| p.model.id()));
    t.param("grid_points", sweep.points.len());
    for (i, j) in ordered_pairs(sweep.points.len()) {
        let (lo, hi) = (&sweep.points[i], &sweep.points[j]);
        let gap = hi.beta - lo.beta;
        let middle_max = 1.0 / lo.chi.lo - 1.0 / hi.chi.hi;
        let middle_min = 1.0 / lo.chi.hi - 1.0 / hi.chi.lo;
        let lower = gap * (1.0 - hi.e.hi.min(1.0));
        let tol = scale_tol(&[gap, middle_max]);
        t.observe((middle_max - lower + tol) / tol - 1.0, || {
            Location::pair(lo.beta, hi.beta).with_label("lower")
        });
        t.observe((gap - middle_min + tol) / tol - 1.0, || {
            Location::pair(lo.beta, hi.beta).with_label("upper")
        });
    }
    t.note("residuals are in units of the float tolerance; values ≥ -1 pass");
    let mut r = t.finish();
    r.pass = r.worst_residual >= -1.0;
    r.tolerance = 1.0;
    r
}

/// `a = (ξ′/ξ)²`, `b = χ′/χ`, each as the widest interval compatible with the inputs.
fn ratios(lo: &Observables, hi: &Observables) -> (Interval, Interval) {
    let a = Interval::new(lo.xi_sq.lo / hi.xi_sq.hi, lo.xi_sq.hi / hi.xi_sq.lo);
    let b = Interval::new(lo.chi.lo / hi.chi.hi, (lo.chi.hi / hi.chi.lo).min(1.0).max(lo.chi.lo / hi.chi.hi));
    (a, b)
}

/// `(χ′/χ)^{(1+E)/(1−E)} ≤ (ξ′/ξ)² ≤ (χ′/χ)^{1−2E}` when `E(β) < 1`, and the factor-two
/// comparison `½χ′/χ ≤ (ξ′/ξ)² ≤ 2χ′/χ` on pairs where `E ≤ ¼χ′/χ` or `E ≤ ¼(ξ′/ξ)²`.
pub fn check_xi_chi_comparison(sweep: &ErrorSweep) -> InequalityReport {
    let mut t = ResidualTracker::new(
        "xi_chi_comparison",
        "(chi'/chi)^((1+E)/(1-E)) <= (xi'/xi)^2 <= (chi'/chi)^(1-2E); 1/2 chi'/chi <= (xi'/xi)^2 <= 2 chi'/chi when E small",
        FLOAT_TOL,
    );
    t.param("model", sweep.points.first().map_or(String::new(), |p| p.model.id()));
    let mut skipped = 0usize;
    for (i, j) in ordered_pairs(sweep.points.len()) {
        let (lo, hi) = (&sweep.points[i], &sweep.points[j]);
        let e = hi.e.hi;
        if !(e < 1.0) {
            skipped += 1;
            continue;
        }
        let (a, b) = ratios(lo, hi);
        let at = || Location::pair(lo.beta, hi.beta);
        t.observe(a.hi - b.lo.powf((1.0 + e) / (1.0 - e)), || at().with_label("lower"));
        t.observe(b.hi.powf(1.0 - 2.0 * e) - a.lo, || at().with_label("upper"));
        if e <= 0.25 * b.lo || e <= 0.25 * a.lo {
            t.observe(a.hi - 0.5 * b.lo, || at().with_label("factor-two lower"));
            t.observe(2.0 * b.hi - a.lo, || at().with_label("factor-two upper"));
        }
    }
    if skipped > 0 {
        t.note(format!("{skipped} pairs with E >= 1 are vacuous"));
    }
    t.finish()
}

/// The three sandwiches on `Z_{β′,β} = (β−β′)χ(β′)`, each on the pairs meeting its hypothesis,
/// plus `Z_{0,β} = β` wherever the grid contains `β′ = 0`.
pub fn check_z_bounds(sweep: &ErrorSweep) -> InequalityReport {
    let mut t = ResidualTracker::new(
        "z_bounds",
        "1-chi'/chi <= Z <= (1-chi'/chi)/(1-min(1,E)); Z <= 1 - chi'/(2chi) if E <= chi'/(4chi); \
         1-2(xi'/xi)^2 <= Z <= 1-(xi'/xi)^2/4 if E <= min((xi'/xi)^2/8, 1/2)",
        FLOAT_TOL,
    );
    t.param("model", sweep.points.first().map_or(String::new(), |p| p.model.id()));
    for (i, j) in ordered_pairs(sweep.points.len()) {
        let (lo, hi) = (&sweep.points[i], &sweep.points[j]);
        let z = ZFactor::new(lo.beta, hi.beta, lo.chi).value;
        let (a, b) = ratios(lo, hi);
        let e = hi.e.hi;
        let at = || Location::pair(lo.beta, hi.beta);
        if lo.beta == 0.0 && lo.chi == Interval::point(1.0) {
            t.observe(-(z.lo - hi.beta).abs().max((z.hi - hi.beta).abs()), || at().with_label("Z(0,b) = b"));
        }
        t.observe(z.hi - (1.0 - b.hi), || at().with_label("lower"));
        if e < 1.0 {
            t.observe((1.0 - b.lo) / (1.0 - e) - z.lo, || at().with_label("upper"));
        }
        if e <= 0.25 * b.lo {
            t.observe(1.0 - 0.5 * b.lo - z.lo, || at().with_label("small-E upper"));
        }
        if e <= (a.lo / 8.0).min(0.5) {
            t.observe(z.hi - (1.0 - 2.0 * a.hi), || at().with_label("xi lower"));
            t.observe(1.0 - 0.25 * a.lo - z.lo, || at().with_label("xi upper"));
        }
    }
    t.finish()
}

/// How many terms of the walk expansion to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionForm {
    /// `T` terms plus the remainder `Z^T E′[G_β(x−X_T)]`.
    Steps(usize),
    /// The full series `Σ_k Z^k E′[G_{β′}(x−X_k)]`, which needs `Z < 1`.
    Infinite,
}

/// The iterated finite-difference bound on `G_β` and `F_β`, with the effective walk of step law
/// `F_{β′}/χ(β′)` evaluated by repeated convolution on the common stored box.
///
/// Mass pushed out of the box by a convolution can only lower the computed right side; the
/// pointwise deficit it causes is at most the lost mass times `sup P` and is added as slack.
/// Fields without a tail certificate are treated as exact finite objects.
pub fn check_iterated_sl(
    kernel: &AdmissibleKernel,
    beta_low: f64,
    g_low: &LatticeField,
    beta_high: f64,
    g_high: &LatticeField,
    form: ExpansionForm,
) -> Result<InequalityReport, VerifierError> {
    if beta_low > beta_high {
        return Err(VerifierError::InvertedPair {
            low: beta_low,
            high: beta_high,
        });
    }
    let exact = |g: &LatticeField| {
        if g.tail_bound().is_finite() {
            g.clone()
        } else {
            g.clone().with_tails(0.0, 0.0)
        }
    };
    let (g_low, g_high) = (exact(g_low), exact(g_high));
    let radius = g_low.radius().min(g_high.radius());
    let f_low = convolve(kernel.field(), &g_low)?;
    let f_high = convolve(kernel.field(), &g_high)?;
    let chi_low = f_low.l1_norm();
    let z = ZFactor::new(beta_low, beta_high, chi_low).value.hi;
    let step = f_low.map(|v| v / chi_low.lo).with_tails(0.0, 0.0);
    let sup_step = step.max_value();
    // Relative error from normalising by the stored mass instead of χ(β′).
    let norm_slack = f_low.tail_bound() / chi_low.lo;

    let mut t = ResidualTracker::new(
        "iterated_sl",
        match form {
            ExpansionForm::Steps(_) => "G_b(x) <= sum_{k<T} Z^k E'[G_b'(x-X_k)] + Z^T E'[G_b(x-X_T)], same for F",
            ExpansionForm::Infinite => "G_b(x) <= sum_k Z^k E'[G_b'(x-X_k)], same for F",
        },
        0.0,
    );
    t.param("beta_low", beta_low).param("beta", beta_high).param("Z", z);
    let terms = match form {
        ExpansionForm::Steps(n) => n,
        ExpansionForm::Infinite => {
            if z >= 1.0 {
                return Err(VerifierError::NotContracting(z));
            }
            let sup_low = g_low.max_value().max(f_low.max_value());
            // Stop once Z^K/(1−Z)·sup G′ is negligible, or at 400 terms.
            (1..=400).find(|&k| z.powi(k as i32) / (1.0 - z) * sup_low < 1e-12).unwrap_or(400)
        }
    };
    t.param("terms", terms);

    for (label, low, high) in [("G", &g_low, &g_high), ("F", &f_low, &f_high)] {
        let low = low.resized(radius);
        let high = high.resized(radius);
        let mut rhs = LatticeField::zeros(low.dim(), radius);
        let mut walk = low.clone();
        let mut lost = low.tail_bound();
        let mut slack = 0.0;
        let mut zk = 1.0;
        for k in 0..terms {
            rhs = rhs.combine(1.0, &walk, zk)?;
            if k > 0 {
                slack += zk * lost * sup_step;
            }
            let next = convolve(&walk.clone().with_tails(0.0, 0.0), &step)?;
            let kept = next.resized(radius);
            lost += kept.tail_bound();
            walk = kept.with_tails(lost, 0.0);
            zk *= z;
        }
        let remainder_slack = match form {
            ExpansionForm::Steps(_) => {
                let mut tail = high.clone().with_tails(0.0, 0.0);
                let mut tail_lost = high.tail_bound();
                for _ in 0..terms {
                    let next = convolve(&tail, &step)?.resized(radius);
                    tail_lost += next.tail_bound();
                    tail = next.with_tails(0.0, 0.0);
                }
                rhs = rhs.combine(1.0, &tail, zk)?;
                zk * tail_lost * sup_step
            }
            ExpansionForm::Infinite => {
                let sup_low = low.values().iter().fold(low.tail_bound(), |m, v| m.max(v.abs()));
                zk / (1.0 - z) * sup_low
            }
        };
        for (x, lhs) in high.iter() {
            let r = rhs.at(&x);
            let allowed = r * (1.0 + terms as f64 * norm_slack) + slack + remainder_slack;
            let tol = FLOAT_TOL * lhs.abs().max(r.abs()).max(1e-300);
            t.observe(allowed - lhs + tol, || {
                Location::pair(beta_low, beta_high).with_site(&x).with_label(label)
            });
        }
    }
    Ok(t.finish())
}

/// Smoothed two-point function at one `β`, for fits and stability.
#[derive(Clone, Debug)]
pub struct BoundSample {
    pub beta: f64,
    pub field: LatticeField,
    pub xi_sq: f64,
}

impl BoundSample {
    /// `F_β = J*G_β` with `ξ²` from its own moments.
    pub fn from_two_point(kernel: &AdmissibleKernel, beta: f64, g: &LatticeField) -> Result<Self, VerifierError> {
        let field = convolve(kernel.field(), g)?;
        let chi = field.mass();
        Ok(BoundSample {
            beta,
            xi_sq: field.stored_second_moment() / chi,
            field,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundScope {
    pub model: String,
    pub beta_min: f64,
    pub beta_max: f64,
    pub radius: usize,
}

/// Fitted constants of `F_β(x) ≤ C σ^{−d} (σ/(σ∨|x|))^{d−2−ε} e^{−c|x|/ξ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_fit: f64,
    pub big_c_fit: f64,
    pub epsilon: f64,
    pub scope: BoundScope,
    /// `(c, sup f)` for every decay rate on the grid.
    pub table: Vec<(f64, f64)>,
    /// `(β, sup_x f(β; x))` at the fitted rate.
    pub profile: Vec<(f64, f64)>,
    /// Largest relative change of the profile between neighbouring grid points.
    pub max_relative_jump: f64,
}

impl BoundConstants {
    /// `C σ^{−d} (σ/(σ∨|x|))^{d−2−ε} e^{−c|x|/ξ}`.
    pub fn bound(&self, dim: usize, sigma: f64, xi: f64, x: &[i32]) -> f64 {
        envelope(dim, sigma, xi, x, self.epsilon, self.c_fit) * self.big_c_fit
    }

    /// The profile never moves by more than `max_jump` between neighbouring grid points.
    pub fn continuous(&self, max_jump: f64) -> bool {
        self.max_relative_jump <= max_jump
    }
}

fn envelope(dim: usize, sigma: f64, xi: f64, x: &[i32], epsilon: f64, c: f64) -> f64 {
    let r = sup_norm(x) as f64;
    sigma.powi(-(dim as i32)) * (sigma / sigma.max(r)).powf(dim as f64 - 2.0 - epsilon) * (-c * r / xi).exp()
}

/// Decay rates tried by [`fit_main_bound`].
pub fn default_decay_grid() -> Vec<f64> {
    (0..=16).map(|i| i as f64 / 16.0).collect()
}

/// Profile `f(β;x) = F_β(x) σ^d ((σ∨|x|)/σ)^{d−2−ε} e^{c|x|/ξ(β)}` and its suprema.
///
/// For every `c` on the grid `C(c) = sup_{β,x} f`. The fitted rate is the largest `c` whose
/// constant is at most twice that of the smallest rate on the grid.
pub fn fit_main_bound(
    model: &str,
    kernel: &AdmissibleKernel,
    samples: &[BoundSample],
    epsilon: f64,
    decay_grid: &[f64],
) -> Result<BoundConstants, VerifierError> {
    if samples.is_empty() {
        return Err(VerifierError::EmptyGrid);
    }
    if decay_grid.is_empty() || decay_grid.iter().any(|c| !(*c >= 0.0)) {
        return Err(VerifierError::BadGrid);
    }
    let dim = kernel.dim();
    let sigma = kernel.sigma();
    let sup_at = |s: &BoundSample, c: f64| -> f64 {
        let xi = s.xi_sq.sqrt();
        s.field
            .support()
            .map(|(x, v)| v / envelope(dim, sigma, xi, &x, epsilon, c))
            .fold(0.0, f64::max)
    };
    let mut grid = decay_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let table: Vec<(f64, f64)> = grid
        .iter()
        .map(|&c| (c, samples.iter().map(|s| sup_at(s, c)).fold(0.0, f64::max)))
        .collect();
    let base = table[0].1;
    let (c_fit, big_c_fit) = table
        .iter()
        .rev()
        .find(|(_, big)| *big <= 2.0 * base)
        .copied()
        .unwrap_or(table[0]);
    let mut ordered: Vec<&BoundSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let profile: Vec<(f64, f64)> = ordered.iter().map(|s| (s.beta, sup_at(s, c_fit))).collect();
    let max_relative_jump = profile
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).abs() / w[0].1.max(w[1].1).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(BoundConstants {
        c_fit,
        big_c_fit,
        epsilon,
        scope: BoundScope {
            model: model.to_string(),
            beta_min: profile.first().map_or(0.0, |p| p.0),
            beta_max: profile.last().map_or(0.0, |p| p.0),
            radius: samples.iter().map(|s| s.field.radius()).max().unwrap_or(0),
        },
        table,
        profile,
        max_relative_jump,
    })
}

/// Checks a fitted bound on every sample in its scope.
pub fn check_main_bound(constants: &BoundConstants, kernel: &AdmissibleKernel, samples: &[BoundSample]) -> InequalityReport {
    let mut t = ResidualTracker::new(
        "main_bound",
        "F_b(x) <= C/sigma^d (sigma/(sigma v |x|))^(d-2-eps) exp(-c|x|/xi)",
        FLOAT_TOL,
    );
    t.param("c", constants.c_fit).param("C", constants.big_c_fit).param("epsilon", constants.epsilon);
    let (dim, sigma) = (kernel.dim(), kernel.sigma());
    for s in samples {
        let xi = s.xi_sq.sqrt();
        for (x, v) in s.field.iter() {
            let b = constants.bound(dim, sigma, xi, &x);
            t.observe((b - v) / b.max(f64::MIN_POSITIVE), || Location::at_beta(s.beta).with_site(&x));
        }
    }
    t.finish()
}

/// Fits `ℂ_β − δ₀ ≤ C σ^{−d}(σ/(σ∨|x|))^{d−2} e^{−c|x|/ξ}` with `ξ² = σ²/(1−β)` on a `β` grid.
pub fn fit_green_constants(
    kernel: &AdmissibleKernel,
    betas: &[f64],
    radius: usize,
) -> Result<BoundConstants, VerifierError> {
    let samples = betas
        .iter()
        .map(|&beta| {
            let opts = GreenOptions {
                radius: Some(radius),
                ..Default::default()
            };
            let mut field = green_function_with(kernel, beta, &opts)?.field(radius)?;
            let origin = field.len() / 2;
            field.values_mut()[origin] -= 1.0;
            Ok(BoundSample {
                beta,
                field,
                xi_sq: kernel.sigma_sq() / (1.0 - beta),
            })
        })
        .collect::<Result<Vec<_>, VerifierError>>()?;
    fit_main_bound("green", kernel, &samples, 0.0, &default_decay_grid())
}

/// The initialisation bound `G_β ≤ δ₀ + 2C σ^{−d}(σ/(σ∨|x|))^{d−2} e^{−(c/2)|x|/ξ(β)}` with Green
/// constants, on samples with `β ≤ (1−δ) ∧ β(δ)`.
pub fn check_initialisation(
    green: &BoundConstants,
    kernel: &AdmissibleKernel,
    delta: f64,
    beta_delta: f64,
    samples: &[(f64, LatticeField, f64)],
) -> InequalityReport {
    let mut t = ResidualTracker::new(
        "initialisation",
        "G_b(x) <= delta_0(x) + 2C/sigma^d (sigma/(sigma v |x|))^(d-2) exp(-(c/2)|x|/xi) for b <= (1-delta) ^ beta(delta)",
        FLOAT_TOL,
    );
    t.param("delta", delta).param("beta_delta", beta_delta);
    let (dim, sigma) = (kernel.dim(), kernel.sigma());
    let limit = (1.0 - delta).min(beta_delta);
    for (beta, g, xi_sq) in samples.iter().filter(|s| s.0 <= limit) {
        let xi = xi_sq.sqrt();
        for (x, v) in g.iter() {
            let delta0 = if x.iter().all(|c| *c == 0) { 1.0 } else { 0.0 };
            let bound = delta0 + 2.0 * green.big_c_fit * envelope(dim, sigma, xi, &x, 0.0, green.c_fit / 2.0);
            t.observe((bound - v) / bound.max(1.0), || Location::at_beta(*beta).with_site(&x));
        }
    }
    t.finish()
}

/// `χ_k(β) = Σ_{x∈Λ_k} F_β(x)` at `k = ⌈ξ(β′)⌉` against `χ(β′)`, over every ordered pair.
/// The fitted `C_stab` is the largest ratio seen.
pub fn check_stability(samples: &[BoundSample]) -> Result<InequalityReport, VerifierError> {
    if samples.is_empty() {
        return Err(VerifierError::EmptyGrid);
    }
    let mut ordered: Vec<&BoundSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let mut worst = 0.0f64;
    let mut ratios = Vec::new();
    for (i, j) in ordered_pairs(ordered.len()) {
        let (lo, hi) = (ordered[i], ordered[j]);
        let xi = lo.xi_sq.sqrt();
        let k = xi.ceil() as usize;
        if k > hi.field.radius() {
            return Err(VerifierError::XiOutsideBox {
                beta: lo.beta,
                xi,
                radius: hi.field.radius(),
            });
        }
        let ratio = hi.field.box_sum(k) / lo.field.mass();
        worst = worst.max(ratio);
        ratios.push((lo.beta, hi.beta, ratio));
    }
    let mut t = ResidualTracker::new("stability", "chi_{xi(b')}(b) <= C_stab chi(b')", 0.0);
    t.fitted("C_stab", worst);
    for (b_low, b, ratio) in ratios {
        t.observe(worst - ratio, || Location::pair(b_low, b));
    }
    Ok(t.finish())
}

/// Parameters of one randomised instance of the annulus convolution lemma.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnnulusParams {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma: f64,
    pub xi: f64,
    pub mu: f64,
    pub epsilon: f64,
}

/// `(2/μ)^{d−2} Σ_{k≥0} e^{−a2^kμ} 2^{k(2+ε)}`, with `μ` replaced by `½` when `μ ≥ 1`.
pub fn annulus_constant(dim: usize, a: f64, mu: f64, epsilon: f64) -> f64 {
    let mu = if mu >= 1.0 { 0.5 } else { mu };
    let mut sum = 0.0;
    for k in 0.. {
        let term = (-a * 2f64.powi(k) * mu).exp() * 2f64.powf(k as f64 * (2.0 + epsilon));
        sum += term;
        if k > 4 && term < 1e-17 * sum {
            break;
        }
    }
    (2.0 / mu).powi(dim as i32 - 2) * sum
}

/// Box radius of the randomised lemma fields.
const LEMMA_RADIUS: usize = 20;
const POINTS_PER_INSTANCE: usize = 4;

/// Randomised checks of both convolution lemmas in dimension `dim`, `instances` draws each.
///
/// Fields are the hypothesis envelope times independent uniforms. For the box hypothesis on `g`
/// the envelope is `env(|y| + ⌊ξ⌋)/|Λ_ξ|`, whose box sums never exceed `env`.
pub fn check_convolution_lemmas(dim: usize, instances: usize, seed: u64) -> Result<Vec<InequalityReport>, VerifierError> {
    Ok(vec![
        check_annulus_lemma(dim, instances, seed)?,
        check_split_lemma(dim, instances, seed.wrapping_add(1))?,
    ])
}

fn uniform_times(dim: usize, radius: usize, rng: &mut impl Rng, envelope: impl Fn(f64) -> f64) -> LatticeField {
    LatticeField::from_fn(dim, radius, |x| rng.gen::<f64>() * envelope(sup_norm(x) as f64))
}

fn random_site(dim: usize, min: f64, max: usize, rng: &mut impl Rng) -> Vec<i32> {
    let lo = min.ceil().max(1.0) as i32;
    let hi = max as i32;
    let mut x: Vec<i32> = (0..dim).map(|_| rng.gen_range(-hi..=hi)).collect();
    let axis = rng.gen_range(0..dim);
    let r = rng.gen_range(lo..=hi.max(lo));
    x[axis] = if rng.gen::<bool>() { r } else { -r };
    for (i, c) in x.iter_mut().enumerate() {
        if i != axis {
            *c = (*c).clamp(-r, r);
        }
    }
    x
}

/// Sum of `f(y) g(x−y)` over `y` outside `Λ_{μξ}`.
fn annulus_sum(f: &LatticeField, g: &LatticeField, x: &[i32], inner: f64) -> f64 {
    let mut diff = vec![0i32; x.len()];
    let mut sum = 0.0;
    for (y, v) in f.support() {
        if sup_norm(&y) as f64 <= inner {
            continue;
        }
        for i in 0..x.len() {
            diff[i] = x[i] - y[i];
        }
        sum += v * g.at(&diff);
    }
    sum
}

/// Random `f`, `g` meeting the pointwise and box hypotheses of the annulus lemma.
fn annulus_fields(dim: usize, p: &AnnulusParams, rng: &mut impl Rng) -> (LatticeField, LatticeField) {
    let d = dim as f64;
    let f = uniform_times(dim, LEMMA_RADIUS, rng, |r| {
        p.c1 / p.sigma.powf(d) * (p.sigma / p.sigma.max(r)).powf(d - 2.0 - p.epsilon) * (-p.a * r / p.xi).exp()
    });
    let xi_floor = p.xi.floor();
    let box_volume = (2.0 * xi_floor + 1.0).powf(d);
    let g = uniform_times(dim, LEMMA_RADIUS, rng, |r| {
        let s = r + xi_floor;
        p.c2 * (p.xi / p.xi.max(s)).powf(d - 2.0) * (-p.b * s / p.xi).exp() / box_volume
    });
    (f, g)
}

pub fn check_annulus_lemma(dim: usize, instances: usize, seed: u64) -> Result<InequalityReport, VerifierError> {
    let mut t = ResidualTracker::new(
        "convolution_annulus",
        "sum_{y not in box(mu xi)} f(y)g(x-y) <= c1/(sigma^2|x|^(d-2)) (|x|/sigma)^eps \
         (2^d |g|_1 e^{-a|x|/2xi} + c2 C(a,mu) (xi/|x|)^eps e^{-b|x|/2xi}) for |x| >= 2(sigma v xi)",
        FLOAT_TOL,
    );
    t.param("dim", dim).param("instances", instances).param("seed", seed);
    let d = dim as f64;
    for i in 0..instances {
        let mut rng = stream_rng(seed, i as u64);
        let p = AnnulusParams {
            a: rng.gen_range(0.2..2.0),
            b: rng.gen_range(0.2..2.0),
            c1: rng.gen_range(0.5..2.0),
            c2: rng.gen_range(0.5..2.0),
            sigma: rng.gen_range(1.0..3.0),
            xi: rng.gen_range(1.0..5.0),
            mu: rng.gen_range(0.05..1.5),
            epsilon: rng.gen_range(0.0..=1.0),
        };
        let (f, g) = annulus_fields(dim, &p, &mut rng);
        let g_mass = g.mass();
        let constant = annulus_constant(dim, p.a, p.mu, p.epsilon);
        for _ in 0..POINTS_PER_INSTANCE {
            let x = random_site(dim, 2.0 * p.sigma.max(p.xi), LEMMA_RADIUS, &mut rng);
            let r = sup_norm(&x) as f64;
            let lhs = annulus_sum(&f, &g, &x, p.mu * p.xi);
            let rhs = p.c1 / (p.sigma * p.sigma * r.powf(d - 2.0))
                * (r / p.sigma).powf(p.epsilon)
                * (2f64.powf(d) * g_mass * (-p.a * r / (2.0 * p.xi)).exp()
                    + p.c2 * constant * (p.xi / r).powf(p.epsilon) * (-p.b * r / (2.0 * p.xi)).exp());
            t.observe((rhs - lhs) / rhs, || {
                Location::default().with_site(&x).with_label(format!("instance {i}"))
            });
        }
    }
    Ok(t.finish())
}

pub fn check_split_lemma(dim: usize, instances: usize, seed: u64) -> Result<InequalityReport, VerifierError> {
    let mut t = ResidualTracker::new(
        "convolution_split",
        "(f1*f2)(x) <= a/(1 v |x|)^p (k^-p |f1|_1 + 2^p sum_{y in box(k|x|)} (f1(y)+f2(y))) for x != 0",
        FLOAT_TOL,
    );
    t.param("dim", dim).param("instances", instances).param("seed", seed);
    for i in 0..instances {
        let mut rng = stream_rng(seed, i as u64);
        let a: f64 = rng.gen_range(0.5..2.0);
        let p: f64 = rng.gen_range(0.5..(2.0 * dim as f64));
        // Every fifth instance uses k = 1.
        let k: f64 = if i % 5 == 0 { 1.0 } else { rng.gen_range(1.0..4.0) };
        let radius = LEMMA_RADIUS - 4;
        let env = |r: f64| a * r.max(1.0).powf(-p);
        let f1 = uniform_times(dim, radius, &mut rng, env);
        let f2 = uniform_times(dim, radius, &mut rng, env);
        let f1_mass = f1.mass();
        for _ in 0..POINTS_PER_INSTANCE {
            let x = random_site(dim, 1.0, radius, &mut rng);
            let r = sup_norm(&x) as f64;
            let lhs = convolve_at(&f1, &f2, &x);
            let inner = (k * r).floor() as usize;
            let rhs = a / r.max(1.0).powf(p) * (f1_mass / k.powf(p) + 2f64.powf(p) * (f1.box_sum(inner) + f2.box_sum(inner)));
            t.observe((rhs - lhs) / rhs, || {
                Location::default().with_site(&x).with_label(format!("instance {i}, k = {k:.3}, p = {p:.3}"))
            });
        }
    }
    Ok(t.finish())
}

/// The finite-`β(δ)` sandwiches for `β ≤ β(δ)` with `E = E(β(δ))`:
/// `1/(χ(β_δ)⁻¹ + (β_δ−β)) ≤ χ(β) ≤ 1/(χ(β_δ)⁻¹ + (β_δ−β)(1−E))` and
/// `χ(β)^{1−2E} ≤ ξ(β)²/σ² ≤ χ(β)^{(1+E)/(1−E)}`.
pub fn gamma_nu_check(sweep: &ErrorSweep, sigma_sq: f64, delta: f64) -> Result<InequalityReport, VerifierError> {
    let bd = beta_of_delta(sweep, delta)?;
    let top = sweep
        .points
        .iter()
        .rev()
        .find(|p| p.beta <= bd.beta)
        .ok_or(VerifierError::EmptyGrid)?;
    let e = top.e.hi;
    let mut t = ResidualTracker::new(
        "gamma_nu",
        "1/(1/chi(bd) + (bd-b)) <= chi(b) <= 1/(1/chi(bd) + (bd-b)(1-E)); chi^(1-2E) <= xi^2/sigma^2 <= chi^((1+E)/(1-E))",
        FLOAT_TOL,
    );
    t.param("delta", delta).param("beta_delta", bd.beta).param("E", e);
    if bd.saturated {
        t.note("E < delta on the whole grid; beta(delta) is the grid maximum");
    }
    if !(e < 1.0) {
        t.note("E(beta(delta)) >= 1; vacuous");
        return Ok(t.finish());
    }
    for p in sweep.points.iter().filter(|p| p.beta <= bd.beta) {
        let gap = bd.beta - p.beta;
        let at = || Location::pair(p.beta, bd.beta);
        let lower = 1.0 / (1.0 / top.chi.lo + gap);
        let upper = 1.0 / (1.0 / top.chi.hi + gap * (1.0 - e));
        let tol = scale_tol(&[p.chi.hi, upper]);
        t.observe((p.chi.hi - lower) / tol.max(1.0), || at().with_label("chi lower"));
        t.observe((upper - p.chi.lo) / tol.max(1.0), || at().with_label("chi upper"));
        let ratio_lo = p.xi_sq.lo / sigma_sq;
        let ratio_hi = p.xi_sq.hi / sigma_sq;
        t.observe(ratio_hi - p.chi.lo.powf(1.0 - 2.0 * e), || at().with_label("xi lower"));
        t.observe(p.chi.hi.powf((1.0 + e) / (1.0 - e)) - ratio_lo, || at().with_label("xi upper"));
    }
    Ok(t.finish())
}

/// The Green model's exact mean-field forms: `χ(β)(1−β) = 1`, `ξ²(1−β)/σ² = 1`, with `β_c = 1`
/// and `E = 0` making every sandwich an equality.
pub fn green_exponent_check(kernel: &AdmissibleKernel, betas: &[f64], tol: f64) -> Result<InequalityReport, VerifierError> {
    let mut t = ResidualTracker::new(
        "green_gamma_nu",
        "chi(b)(1-b) = 1 and xi(b)^2 (1-b)/sigma^2 = 1 (beta_c = 1, E = 0)",
        tol,
    );
    t.param("kernel", kernel.label());
    let sigma_sq = kernel.sigma_sq();
    for &beta in betas {
        let target = (1e-3 * tol * beta).clamp(1e-15, DEFAULT_TAIL);
        let opts = GreenOptions {
            tail_target: target,
            box_target: target,
            ..Default::default()
        };
        let green = green_function_with(kernel, beta, &opts)?;
        let chi = green.chi();
        let xi_sq = green.xi_sq();
        let scaled_chi = chi.scale(1.0 - beta);
        let scaled_xi = xi_sq.scale((1.0 - beta) / sigma_sq);
        t.observe(-scaled_chi.rel_error(1.0), || Location::at_beta(beta).with_label("chi (1-b)"));
        t.observe(-scaled_xi.rel_error(1.0), || Location::at_beta(beta).with_label("xi^2 (1-b)/sigma^2"));
    }
    Ok(t.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::green_function;
    use crate::kernels::{nearest_neighbour, uniform_spread_out};
    use crate::observables::{compute, green_observables, Model};
    use crate::saw;

    fn green_sweep(betas: &[f64]) -> ErrorSweep {
        let k = nearest_neighbour(3).unwrap();
        ErrorSweep::new(betas.iter().map(|&b| green_observables(&k, b, 4).unwrap()).collect())
    }

    fn saw_sweep(betas: &[f64]) -> (AdmissibleKernel, ErrorSweep, saw::TwoPointSeries) {
        let k = nearest_neighbour(2).unwrap();
        let series = saw::enumerate(&k, 1.0, 10, None).unwrap();
        let pts = betas
            .iter()
            .map(|&b| compute(&Model::Saw { lambda: 1.0 }, &saw::eval(&series, b).unwrap(), &k, b).unwrap())
            .collect();
        (k, ErrorSweep::new(pts), series)
    }

    #[test]
    fn green_chi_sandwich_is_tight() {
        let r = check_chi_sandwich(&green_sweep(&[0.0, 0.3, 0.6, 0.9]));
        assert!(r.pass, "{r}");
        assert_eq!(r.evaluations, 20);
    }

    #[test]
    fn green_ratios_agree() {
        let s = green_sweep(&[0.0, 0.2, 0.5, 0.8]);
        assert!(check_xi_chi_comparison(&s).pass);
        let z = check_z_bounds(&s);
        assert!(z.pass, "{z}");
    }

    #[test]
    fn saw_truncated_bounds_hold_at_small_beta() {
        let (_, s, _) = saw_sweep(&[0.0, 0.05, 0.1, 0.15]);
        for r in [check_chi_sandwich(&s), check_xi_chi_comparison(&s), check_z_bounds(&s)] {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn iterated_sl_is_near_equality_for_green() {
        let k = nearest_neighbour(3).unwrap();
        let g_low = green_function(&k, 0.3, 120).unwrap().field(8).unwrap();
        let g_high = green_function(&k, 0.6, 120).unwrap().field(8).unwrap();
        let r = check_iterated_sl(&k, 0.3, &g_low, 0.6, &g_high, ExpansionForm::Steps(5)).unwrap();
        assert!(r.pass, "{r}");
        assert!(r.worst_residual < 1e-3, "{r}");
        let one = check_iterated_sl(&k, 0.3, &g_low, 0.6, &g_high, ExpansionForm::Steps(1)).unwrap();
        assert!(one.pass, "{one}");
    }

    #[test]
    fn iterated_sl_for_truncated_saw() {
        let (k, _, series) = saw_sweep(&[0.0]);
        let g_low = saw::eval(&series, 0.05).unwrap();
        let g_high = saw::eval(&series, 0.12).unwrap();
        let r = check_iterated_sl(&k, 0.05, &g_low, 0.12, &g_high, ExpansionForm::Steps(3)).unwrap();
        assert!(r.pass, "{r}");
        let inf = check_iterated_sl(&k, 0.05, &g_low, 0.12, &g_high, ExpansionForm::Infinite).unwrap();
        assert!(inf.pass, "{inf}");
    }

    #[test]
    fn infinite_form_needs_contraction() {
        let k = nearest_neighbour(3).unwrap();
        let g = green_function(&k, 0.9, 200).unwrap().field(4).unwrap();
        let g0 = LatticeField::delta(3);
        assert!(check_iterated_sl(&k, 0.0, &g0, 0.9, &g, ExpansionForm::Infinite).is_ok());
        assert!(matches!(
            check_iterated_sl(&k, 0.5, &g, 0.9, &g, ExpansionForm::Infinite),
            Err(VerifierError::NotContracting(_))
        ));
    }

    fn green_samples(k: &AdmissibleKernel, betas: &[f64], radius: usize) -> Vec<BoundSample> {
        betas
            .iter()
            .map(|&b| {
                let g = green_function(k, b, 300).unwrap().field(radius).unwrap();
                BoundSample::from_two_point(k, b, &g).unwrap()
            })
            .collect()
    }

    #[test]
    fn green_profile_is_finite_and_stable() {
        let k = nearest_neighbour(3).unwrap();
        let samples = green_samples(&k, &[0.2, 0.4, 0.6, 0.7, 0.8], 10);
        let fit = fit_main_bound("green", &k, &samples, 0.0, &default_decay_grid()).unwrap();
        assert!(fit.big_c_fit.is_finite() && fit.big_c_fit > 0.0);
        assert!(check_main_bound(&fit, &k, &samples).pass);
        let loose = fit_main_bound("green", &k, &samples, 1.0, &[fit.c_fit]).unwrap();
        let tight = fit_main_bound("green", &k, &samples, 0.1, &[fit.c_fit]).unwrap();
        assert!(loose.big_c_fit <= tight.big_c_fit);
    }

    #[test]
    fn stability_constant_is_finite() {
        let k = nearest_neighbour(3).unwrap();
        let samples = green_samples(&k, &[0.1, 0.5, 0.8], 10);
        let r = check_stability(&samples).unwrap();
        let c = r.fitted["C_stab"];
        assert!(r.pass && c.is_finite() && c > 0.0);
    }

    #[test]
    fn initialisation_holds_for_saw() {
        let k = nearest_neighbour(3).unwrap();
        let green = fit_green_constants(&k, &[0.1, 0.2, 0.3, 0.4, 0.5], 8).unwrap();
        let series = saw::enumerate(&k, 1.0, 6, None).unwrap();
        let samples: Vec<_> = [0.05, 0.1, 0.15]
            .iter()
            .map(|&b| {
                let g = saw::eval(&series, b).unwrap();
                let s = BoundSample::from_two_point(&k, b, &g).unwrap();
                (b, g, s.xi_sq)
            })
            .collect();
        let r = check_initialisation(&green, &k, 0.5, 0.2, &samples);
        assert!(r.pass, "{r}");
    }

    #[test]
    fn annulus_constant_is_the_proof_series() {
        let c = annulus_constant(3, 1.0, 0.5, 0.0);
        let direct: f64 = (0..40).map(|k| (-(2f64.powi(k)) * 0.5).exp() * 4f64.powi(k)).sum::<f64>() * 4.0;
        assert!((c - direct).abs() < 1e-12 * direct);
        assert_eq!(annulus_constant(3, 1.0, 2.0, 0.0), annulus_constant(3, 1.0, 0.5, 0.0));
    }

    #[test]
    fn zero_fields_satisfy_the_lemmas() {
        let f = LatticeField::zeros(3, 4);
        assert_eq!(annulus_sum(&f, &f, &[4, 0, 0], 1.0), 0.0);
        assert_eq!(convolve_at(&f, &f, &[2, 1, 0]), 0.0);
    }

    #[test]
    fn annulus_fields_meet_the_box_hypothesis() {
        let p = AnnulusParams {
            a: 0.5,
            b: 0.7,
            c1: 1.0,
            c2: 1.5,
            sigma: 1.5,
            xi: 2.7,
            mu: 0.4,
            epsilon: 0.3,
        };
        let mut rng = stream_rng(3, 0);
        let (_, g) = annulus_fields(3, &p, &mut rng);
        let k = p.xi.floor() as i32;
        for x in [[0, 0, 0], [3, 1, 0], [7, -7, 2], [12, 0, 5]] {
            let sum: f64 = g
                .iter()
                .filter(|(y, _)| y.iter().zip(&x).all(|(a, b)| (a - b).abs() <= k))
                .map(|(_, v)| v)
                .sum();
            let r = sup_norm(&x) as f64;
            let env = p.c2 * (p.xi / p.xi.max(r)).powi(1) * (-p.b * r / p.xi).exp();
            assert!(sum <= env, "{x:?}: {sum} > {env}");
        }
    }

    #[test]
    fn convolution_lemmas_hold() {
        for r in check_convolution_lemmas(3, 10, 7).unwrap() {
            assert!(r.pass, "{r}");
            assert_eq!(r.evaluations, 10 * POINTS_PER_INSTANCE);
        }
    }

    #[test]
    fn green_exponents_are_mean_field() {
        let k = uniform_spread_out(3, 2).unwrap();
        let r = green_exponent_check(&k, &[0.1, 0.5, 0.9], 1e-8).unwrap();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn gamma_nu_sandwich_for_green_and_saw() {
        let s = green_sweep(&[0.0, 0.3, 0.6, 0.9]);
        let r = gamma_nu_check(&s, nearest_neighbour(3).unwrap().sigma_sq(), 0.1).unwrap();
        assert!(r.pass, "{r}");
        let (k, s, _) = saw_sweep(&[0.0, 0.05, 0.1, 0.15, 0.2]);
        let r = gamma_nu_check(&s, k.sigma_sq(), 0.2).unwrap();
        assert!(r.pass, "{r}");
    }
}
