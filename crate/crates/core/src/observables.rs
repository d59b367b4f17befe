//! Model-independent observables: `χ`, `ξ²`, open diagrams, the error field `H_β` and `E(β)`.

use crate::conv::convolve;
use crate::green::{green_function_with, GreenError, GreenOptions, MixtureParams, UniformPowers};
use crate::interval::Interval;
use crate::ising::{h_ising, IsingError};
use crate::kernels::{spread_out_sigma_sq, to_f64, AdmissibleKernel};
use crate::lattice::{LatticeError, LatticeField};
use crate::numeric::{linear_fit, log_grid, KahanSum};
use crate::trees::{h_lattice_trees, TreeError};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObservablesError {
    #[error("two-point field has d = {field}, kernel has d = {kernel}")]
    DimensionMismatch { field: usize, kernel: usize },
    #[error("susceptibility vanishes; the field carries no mass")]
    ZeroSusceptibility,
    #[error("the {diagram} is finite only above d = {critical}; refusing d = {dim}")]
    BelowCriticalDimension {
        diagram: OpenDiagram,
        critical: usize,
        dim: usize,
    },
    #[error("scaling fit needs at least two distinct ranges")]
    DegenerateFit,
    #[error("beta = {0} must lie in [0, 1) for the Green function")]
    BetaOutOfRange(f64),
    #[error("empty beta grid")]
    EmptyGrid,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Ising(#[from] IsingError),
    #[error(transparent)]
    Trees(#[from] TreeError),
}

/// Which model a two-point function belongs to; selects the error field `H_β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    /// The random-walk Green function, with `H = 0`.
    Green,
    Saw { lambda: f64 },
    Percolation,
    Ising,
    LatticeTrees,
}

impl Model {
    pub fn id(&self) -> String {
        match self {
            Model::Green => "green".into(),
            Model::Saw { lambda } => format!("saw(lambda={lambda})"),
            Model::Percolation => "percolation".into(),
            Model::Ising => "ising".into(),
            Model::LatticeTrees => "lattice_trees".into(),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Observables of one model at one `β`.
///
/// `e0` and `e2` are the pointwise terms `‖H_β‖₁` and `‖|x|²H_β‖₁/ξ²`; `e` is their sum until
/// an [`ErrorSweep`] replaces it by the running supremum over the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Observables {
    pub model: Model,
    pub beta: f64,
    pub chi: Interval,
    pub xi_sq: Interval,
    pub open_bubble: Interval,
    pub open_triangle: Interval,
    pub open_square: Interval,
    pub h_field: LatticeField,
    pub e0: Interval,
    pub e2: Interval,
    pub e: Interval,
    /// `G_β(0)`.
    pub one_point: f64,
    /// False when some tail was unknown and upper ends are infinite.
    pub certified: bool,
}

impl Observables {
    pub const CSV_HEADER: &'static str =
        "model,beta,chi_lo,chi_hi,xi2_lo,xi2_hi,bubble_lo,bubble_hi,triangle_lo,triangle_hi,square_lo,square_hi,e0_lo,e0_hi,e2_lo,e2_hi,e_lo,e_hi,one_point,certified";

    pub fn csv_row(&self) -> String {
        let mut cols = vec![format!("\"{}\"", self.model.id()), fmt_num(self.beta)];
        for iv in [
            self.chi,
            self.xi_sq,
            self.open_bubble,
            self.open_triangle,
            self.open_square,
            self.e0,
            self.e2,
            self.e,
        ] {
            cols.push(fmt_num(iv.lo));
            cols.push(fmt_num(iv.hi));
        }
        cols.push(fmt_num(self.one_point));
        cols.push(self.certified.to_string());
        cols.join(",")
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "inf".into()
    }
}

/// `Σ_x a(x) b(−x)`, with the part outside the smaller box bounded by the tails.
pub fn origin_pairing(a: &LatticeField, b: &LatticeField) -> Interval {
    let (small, large) = if a.radius() <= b.radius() { (a, b) } else { (b, a) };
    let mut neg = vec![0i32; a.dim()];
    let mut sum = KahanSum::new();
    let mut signed = false;
    for (c, v) in small.support() {
        for (n, x) in neg.iter_mut().zip(&c) {
            *n = -x;
        }
        let w = large.at(&neg);
        signed |= v < 0.0 || w < 0.0;
        sum.add(v * w);
    }
    let sup_large = large.values().iter().fold(large.tail_bound(), |m, v| m.max(v.abs()));
    let sup_small = small.values().iter().fold(small.tail_bound(), |m, v| m.max(v.abs()));
    // Outside the small box the small factor has mass at most its tail; the large factor's
    // own tail only meets the small factor's tail there.
    let missing = sup_large * small.tail_bound() + sup_small.min(small.tail_bound()) * large.tail_bound();
    let missing = if missing.is_nan() { f64::INFINITY } else { missing };
    let s = sum.value();
    if signed {
        Interval::new(s - missing, s + missing)
    } else {
        Interval::with_tail(s, missing)
    }
}

/// Computes every observable of `g` at `β`.
pub fn compute(
    model: &Model,
    g: &LatticeField,
    kernel: &AdmissibleKernel,
    beta: f64,
) -> Result<Observables, ObservablesError> {
    if g.dim() != kernel.dim() {
        return Err(ObservablesError::DimensionMismatch {
            field: g.dim(),
            kernel: kernel.dim(),
        });
    }
    let f = convolve(kernel.field(), g)?;
    let chi = f.l1_norm();
    if chi.lo <= 0.0 {
        return Err(ObservablesError::ZeroSusceptibility);
    }
    let xi_sq = f.second_moment().div_pos(chi);
    let gf = convolve(g, &f)?;
    let gg = convolve(g, g)?;
    let open_bubble = origin_pairing(g, &f);
    let open_triangle = origin_pairing(&gf, g);
    let open_square = origin_pairing(&gg, &gf);

    let h_field = match model {
        Model::Green => LatticeField::zeros(g.dim(), 0),
        Model::Saw { lambda } => {
            let tail = lambda * open_bubble.width();
            LatticeField::delta(g.dim())
                .scaled(lambda * open_bubble.lo)
                .with_tails(if tail.is_nan() { f64::INFINITY } else { tail }, 0.0)
        }
        Model::Percolation => g.pointwise_mul(&gf)?,
        Model::Ising => h_ising(kernel, g, beta)?,
        Model::LatticeTrees => h_lattice_trees(kernel, g)?,
    };
    let e0 = h_field.l1_norm();
    let e2 = nonneg_ratio(h_field.second_moment(), xi_sq);
    let e = e0 + e2;
    let certified = [chi, xi_sq, open_bubble, e0, e2].iter().all(Interval::is_certified);
    Ok(Observables {
        model: model.clone(),
        beta,
        chi,
        xi_sq,
        open_bubble,
        open_triangle,
        open_square,
        h_field,
        e0,
        e2,
        e,
        one_point: g.origin_value(),
        certified,
    })
}

/// Observables of `ℂ_β` with diagrams and `H` on `Λ_radius`, and `χ`, `ξ²` from a series whose
/// own box is chosen for the default loss targets.
pub fn green_observables(kernel: &AdmissibleKernel, beta: f64, radius: usize) -> Result<Observables, ObservablesError> {
    let green = green_function_with(kernel, beta, &GreenOptions::default())?;
    let mut obs = compute(&Model::Green, &green.field(radius)?, kernel, beta)?;
    obs.chi = green.chi();
    obs.xi_sq = green.xi_sq();
    Ok(obs)
}

/// `num/den` for nonnegative intervals, with `0/0 = 0` and `x/0 = +inf`.
fn nonneg_ratio(num: Interval, den: Interval) -> Interval {
    let lo = if num.lo == 0.0 { 0.0 } else { num.lo / den.hi };
    let hi = if num.hi == 0.0 { 0.0 } else { num.hi / den.lo };
    Interval::new(lo, if hi.is_nan() { f64::INFINITY } else { hi })
}

/// Relative residual of `‖|x|²G‖₁ = ‖|x|²F‖₁ − σ²χ` on the stored values of `g`.
pub fn second_moment_identity_residual(g: &LatticeField, kernel: &AdmissibleKernel) -> Result<f64, ObservablesError> {
    let stored = g.clone().with_tails(0.0, 0.0);
    let f = convolve(kernel.field(), &stored)?;
    let lhs = stored.stored_second_moment();
    let rhs = f.stored_second_moment() - kernel.sigma_sq() * f.mass();
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0))
}

/// `Z_{β′,β} = (β−β′)·χ(β′)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZFactor {
    pub beta_low: f64,
    pub beta_high: f64,
    pub value: Interval,
}

impl ZFactor {
    pub fn new(beta_low: f64, beta_high: f64, chi_low: Interval) -> Self {
        ZFactor {
            beta_low,
            beta_high,
            value: if beta_high == beta_low {
                Interval::point(0.0)
            } else {
                chi_low.scale(beta_high - beta_low)
            },
        }
    }
}

/// Observables along a `β` grid, with `E` replaced by its running supremum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorSweep {
    pub points: Vec<Observables>,
}

impl ErrorSweep {
    pub fn new(mut points: Vec<Observables>) -> Self {
        points.sort_by(|a, b| a.beta.total_cmp(&b.beta));
        let mut sup = Interval::point(0.0);
        for p in &mut points {
            let here = p.e0 + p.e2;
            sup = Interval::new(sup.lo.max(here.lo), sup.hi.max(here.hi));
            p.e = sup;
        }
        ErrorSweep { points }
    }

    pub fn betas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.beta).collect()
    }

    /// `E` at the largest grid point not above `beta`.
    pub fn e_at(&self, beta: f64) -> Option<Interval> {
        self.points.iter().rev().find(|p| p.beta <= beta).map(|p| p.e)
    }

    pub fn last(&self) -> Option<&Observables> {
        self.points.last()
    }
}

/// The grid surrogate for `β(δ) = sup{β : E(β) < δ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaOfDelta {
    pub delta: f64,
    pub beta: f64,
    /// Last grid point with `E < δ` and first with `E ≥ δ`, when both exist.
    pub bracket: Option<(f64, f64)>,
    /// `E < δ` on the whole grid, so `beta` is only the grid maximum.
    pub saturated: bool,
    /// Whether certified upper ends of `E` were used.
    pub certified: bool,
}

/// Largest grid `β` with `E(β) < δ`, using upper ends of `E` when certified.
pub fn beta_of_delta(sweep: &ErrorSweep, delta: f64) -> Result<BetaOfDelta, ObservablesError> {
    if sweep.points.is_empty() {
        return Err(ObservablesError::EmptyGrid);
    }
    let certified = sweep.points.iter().all(|p| p.e.is_certified());
    let value = |p: &Observables| if certified { p.e.hi } else { p.e.lo };
    if delta <= 0.0 {
        return Ok(BetaOfDelta {
            delta,
            beta: 0.0,
            bracket: None,
            saturated: false,
            certified,
        });
    }
    match sweep.points.iter().position(|p| value(p) >= delta) {
        None => Ok(BetaOfDelta {
            delta,
            beta: sweep.points.last().map_or(0.0, |p| p.beta),
            bracket: None,
            saturated: true,
            certified,
        }),
        Some(0) => Ok(BetaOfDelta {
            delta,
            beta: 0.0,
            bracket: Some((0.0, sweep.points[0].beta)),
            saturated: false,
            certified,
        }),
        Some(i) => Ok(BetaOfDelta {
            delta,
            beta: sweep.points[i - 1].beta,
            bracket: Some((sweep.points[i - 1].beta, sweep.points[i].beta)),
            saturated: false,
            certified,
        }),
    }
}

/// Whether two sweeps of different resolution agree on the final `E` within `rel_tol`.
pub fn refinement_agrees(coarse: &ErrorSweep, fine: &ErrorSweep, rel_tol: f64) -> bool {
    match (coarse.last(), fine.last()) {
        (Some(a), Some(b)) => {
            let (x, y) = (a.e.lo, b.e.lo);
            (x - y).abs() <= rel_tol * x.abs().max(y.abs()) || x.max(y) == 0.0
        }
        _ => false,
    }
}

/// Zero followed by `n − 1` log-spaced points up to `beta_max`.
pub fn default_beta_grid(beta_max: f64, n: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    if n > 1 {
        grid.extend(log_grid(beta_max * 1e-3, beta_max, n - 1));
    }
    grid
}

/// Open diagrams of the Green function used for scaling probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenDiagram {
    /// `(ℂ*J*ℂ)(0)`.
    Bubble,
    /// `(ℂ*J*ℂ*ℂ)(0)`.
    Triangle,
}

impl OpenDiagram {
    pub fn critical_dimension(self) -> usize {
        match self {
            OpenDiagram::Bubble => 4,
            OpenDiagram::Triangle => 6,
        }
    }

    fn green_factors(self) -> usize {
        match self {
            OpenDiagram::Bubble => 2,
            OpenDiagram::Triangle => 3,
        }
    }
}

impl fmt::Display for OpenDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpenDiagram::Bubble => "open bubble",
            OpenDiagram::Triangle => "open triangle",
        })
    }
}

/// One range in a scaling scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub range: u32,
    pub sigma: f64,
    pub value: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaScan {
    pub dim: usize,
    pub beta: f64,
    pub diagram: OpenDiagram,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `log value` against `log σ_J`.
    pub slope: f64,
    pub intercept: f64,
}

/// Open diagram of `ℂ_β` for the uniform spread-out kernel of range `range`.
///
/// In the product-mixture form every factor is a power series in the uniform box law `P`, so the
/// diagram equals `Σ_m D_m u_m(0)^d` with `u_m` the one-dimensional `m`-fold uniform law.
pub fn spread_out_diagram(dim: usize, range: u32, beta: f64, diagram: OpenDiagram) -> Result<Interval, ObservablesError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(ObservablesError::BetaOutOfRange(beta));
    }
    let params = MixtureParams::new(dim, range, beta);
    let v = params.volume;
    let k = diagram.green_factors();
    // |D_m| ≤ (V+1)/(V−1)·(1+a)^{−k}·C(m+k−1, k−1)·b^m.
    let envelope = |m: usize| -> f64 {
        let mut binom = 1.0;
        for i in 1..k {
            binom *= (m + i) as f64 / i as f64;
        }
        (v + 1.0) / (v - 1.0) / (1.0 + params.a).powi(k as i32) * binom * params.b.powi(m as i32)
    };
    let tail_from = |order: usize| -> f64 {
        let mut sum = 0.0;
        let mut m = order + 1;
        loop {
            let t = envelope(m);
            sum += t;
            if t < 1e-18 * sum.max(1e-300) || t == 0.0 {
                break sum;
            }
            m += 1;
        }
    };
    let mut order = 64;
    while tail_from(order) > 1e-13 {
        order *= 2;
    }
    let green = params.coefficients(order);
    let mut series = vec![-1.0 / (v - 1.0), v / (v - 1.0)];
    for _ in 0..k {
        series = truncated_product(&series, &green, order);
    }
    let powers = UniformPowers::new(range, order);
    let value: KahanSum = series
        .iter()
        .enumerate()
        .map(|(m, d)| d * powers.value(m, 0).powi(dim as i32))
        .collect();
    let tail = tail_from(order);
    Ok(Interval::new(value.value() - tail, value.value() + tail))
}

fn truncated_product(a: &[f64], b: &[f64], order: usize) -> Vec<f64> {
    let n = (a.len() + b.len() - 1).min(order + 1);
    let mut out = vec![0.0; n];
    for (i, x) in a.iter().enumerate().take(n) {
        for (j, y) in b.iter().enumerate().take(n - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// Fits `log(diagram)` against `log σ_J` across spread-out ranges at fixed `β`.
pub fn sigma_scaling_scan(dim: usize, ranges: &[u32], beta: f64, diagram: OpenDiagram) -> Result<SigmaScan, ObservablesError> {
    if dim <= diagram.critical_dimension() {
        return Err(ObservablesError::BelowCriticalDimension {
            diagram,
            critical: diagram.critical_dimension(),
            dim,
        });
    }
    let mut distinct: Vec<u32> = ranges.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ObservablesError::DegenerateFit);
    }
    let points = distinct
        .iter()
        .map(|&r| {
            Ok(ScalingPoint {
                range: r,
                sigma: to_f64(&spread_out_sigma_sq(dim, r)).sqrt(),
                value: spread_out_diagram(dim, r, beta, diagram)?,
            })
        })
        .collect::<Result<Vec<_>, ObservablesError>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.sigma.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.value.mid().ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys).ok_or(ObservablesError::DegenerateFit)?;
    Ok(SigmaScan {
        dim,
        beta,
        diagram,
        points,
        slope,
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::green_function;
    use crate::kernels::{nearest_neighbour, uniform_spread_out};
    use crate::saw;

    #[test]
    fn green_model_has_mean_field_observables() {
        let k = nearest_neighbour(3).unwrap();
        let beta = 0.4;
        let g = green_function(&k, beta, 200).unwrap().field(14).unwrap();
        let obs = compute(&Model::Green, &g, &k, beta).unwrap();
        assert!(obs.chi.rel_error(1.0 / (1.0 - beta)) < 1e-6, "{}", obs.chi);
        assert!(obs.xi_sq.contains(1.0 / (1.0 - beta)) || obs.xi_sq.rel_error(1.0 / (1.0 - beta)) < 1e-4);
        assert_eq!(obs.e.hi, 0.0);
        assert!(obs.chi.lo >= 1.0);
    }

    #[test]
    fn green_observables_are_exact_in_chi() {
        let k = nearest_neighbour(3).unwrap();
        let obs = green_observables(&k, 0.8, 5).unwrap();
        assert!(obs.chi.rel_error(5.0) < 1e-8, "{}", obs.chi);
        assert!(obs.xi_sq.rel_error(5.0) < 1e-8, "{}", obs.xi_sq);
    }

    #[test]
    fn beta_zero_gives_kernel_variance() {
        let k = uniform_spread_out(2, 2).unwrap();
        let g = LatticeField::delta(2);
        let obs = compute(&Model::Percolation, &g, &k, 0.0).unwrap();
        assert!((obs.xi_sq.lo - k.sigma_sq()).abs() < 1e-12);
        assert_eq!(obs.chi, Interval::point(1.0));
        assert_eq!(obs.e0.hi, 0.0);
    }

    #[test]
    fn h_vanishes_at_beta_zero_for_every_model() {
        let k = nearest_neighbour(2).unwrap();
        let g = LatticeField::delta(2);
        for model in [Model::Saw { lambda: 1.0 }, Model::Percolation, Model::Ising, Model::LatticeTrees] {
            let obs = compute(&model, &g, &k, 0.0).unwrap();
            assert!(obs.e0.hi.abs() < 1e-15, "{model}: {}", obs.e0);
        }
    }

    #[test]
    fn saw_e0_is_lambda_times_bubble() {
        let k = nearest_neighbour(2).unwrap();
        let series = saw::enumerate(&k, 1.0, 8, None).unwrap();
        let g = saw::eval(&series, 0.1).unwrap();
        let obs = compute(&Model::Saw { lambda: 1.0 }, &g, &k, 0.1).unwrap();
        let bubble = saw::bubble(&series, 0.1).unwrap();
        assert!((obs.e0.lo - bubble.lo).abs() < 1e-14);
        assert!(!obs.certified);
    }

    #[test]
    fn second_moment_identity_holds() {
        let k = nearest_neighbour(3).unwrap();
        let g = LatticeField::from_fn(3, 4, |c| 0.3f64.powi(c.iter().map(|v| v.abs()).sum()));
        assert!(second_moment_identity_residual(&g, &k).unwrap() < 1e-12);
    }

    #[test]
    fn sweep_is_monotone_and_beta_of_delta_brackets() {
        let k = nearest_neighbour(2).unwrap();
        let series = saw::enumerate(&k, 1.0, 6, None).unwrap();
        let points = default_beta_grid(0.3, 12)
            .into_iter()
            .map(|b| compute(&Model::Saw { lambda: 1.0 }, &saw::eval(&series, b).unwrap(), &k, b).unwrap())
            .collect();
        let sweep = ErrorSweep::new(points);
        for w in sweep.points.windows(2) {
            assert!(w[1].e.lo >= w[0].e.lo);
        }
        let top = sweep.last().unwrap().e.lo;
        let b = beta_of_delta(&sweep, top / 2.0).unwrap();
        assert!(!b.saturated);
        let (lo, hi) = b.bracket.unwrap();
        assert!(lo < hi && b.beta == lo);
        assert_eq!(beta_of_delta(&sweep, 0.0).unwrap().beta, 0.0);
        assert!(beta_of_delta(&sweep, 10.0 * top + 1.0).unwrap().saturated);
    }

    #[test]
    fn green_sweep_saturates() {
        let k = nearest_neighbour(3).unwrap();
        let points = [0.0, 0.2, 0.5]
            .iter()
            .map(|&b| compute(&Model::Green, &green_function(&k, b, 80).unwrap().field(6).unwrap(), &k, b).unwrap())
            .collect();
        let r = beta_of_delta(&ErrorSweep::new(points), 0.01).unwrap();
        assert!(r.saturated && r.beta == 0.5);
    }

    #[test]
    fn z_at_zero_is_beta() {
        let z = ZFactor::new(0.0, 0.37, Interval::point(1.0));
        assert_eq!(z.value, Interval::point(0.37));
    }

    #[test]
    fn mixture_bubble_matches_direct_sum() {
        let k = uniform_spread_out(3, 1).unwrap();
        let beta = 0.5;
        let g = green_function(&k, beta, 200).unwrap().field(12).unwrap();
        let obs = compute(&Model::Green, &g, &k, beta).unwrap();
        let mix = spread_out_diagram(3, 1, beta, OpenDiagram::Bubble).unwrap();
        assert!((mix.mid() - obs.open_bubble.mid()).abs() < 1e-8, "{mix} vs {}", obs.open_bubble);
        let tri = spread_out_diagram(3, 1, beta, OpenDiagram::Triangle).unwrap();
        assert!((tri.mid() - obs.open_triangle.mid()).abs() < 1e-8, "{tri} vs {}", obs.open_triangle);
    }

    #[test]
    fn scan_refuses_low_dimension_and_degenerate_ranges() {
        assert!(matches!(
            sigma_scaling_scan(3, &[1, 2], 0.9, OpenDiagram::Bubble),
            Err(ObservablesError::BelowCriticalDimension { .. })
        ));
        assert!(matches!(
            sigma_scaling_scan(5, &[1, 1], 0.9, OpenDiagram::Bubble),
            Err(ObservablesError::DegenerateFit)
        ));
    }

    #[test]
    fn bubble_scales_like_inverse_volume() {
        let scan = sigma_scaling_scan(5, &[1, 2, 4, 8], 0.9, OpenDiagram::Bubble).unwrap();
        assert!((-6.0..=-4.0).contains(&scan.slope), "slope {}", scan.slope);
    }
}
