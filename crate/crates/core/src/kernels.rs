//! Admissible step distributions `J` and their certification.

use crate::lattice::{canonical_coords, norm2_sq, sup_norm, BoxIter, LatticeError, LatticeField, Point};
use crate::numeric::KahanSum;
use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

pub type Rational = BigRational;

/// Tolerance for the normalisation of kernels given in floating point.
pub const NORMALISATION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[serde(rename = "nn")]
    NearestNeighbour,
    SpreadOut,
    Custom,
}

/// Declarative kernel description as it appears in run configurations.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub d: usize,
    #[serde(rename = "R", default = "default_range")]
    pub range: u32,
}

fn default_range() -> u32 {
    1
}

impl KernelSpec {
    pub fn nn(d: usize) -> Self {
        KernelSpec {
            family: KernelFamily::NearestNeighbour,
            d,
            range: 1,
        }
    }

    pub fn spread_out(d: usize, range: u32) -> Self {
        KernelSpec {
            family: KernelFamily::SpreadOut,
            d,
            range,
        }
    }

    pub fn build(&self) -> Result<AdmissibleKernel, KernelError> {
        match self.family {
            KernelFamily::NearestNeighbour => nearest_neighbour(self.d),
            KernelFamily::SpreadOut => uniform_spread_out(self.d, self.range),
            KernelFamily::Custom => Err(KernelError::CustomNeedsField),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::NearestNeighbour => write!(f, "nn(d={})", self.d),
            KernelFamily::SpreadOut => write!(f, "spread_out(d={},R={})", self.d, self.range),
            KernelFamily::Custom => write!(f, "custom(d={})", self.d),
        }
    }
}

/// One clause of the admissibility definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelClause {
    /// `J_0 = 0`.
    OriginZero { value: f64 },
    Nonnegative { site: Vec<i32>, value: f64 },
    Normalised { mass: f64 },
    Symmetric { site: Vec<i32> },
    /// At least one positive value, so that the range is defined.
    NonEmpty,
    /// Some `c₀ ∈ (0,1]` satisfies `c₀R ≤ σ` and `J_x ≤ c₀⁻¹R^{-d}`.
    CertificateExists,
}

impl fmt::Display for KernelClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelClause::OriginZero { value } => write!(f, "J_0=0 (found {value})"),
            KernelClause::Nonnegative { site, value } => write!(f, "J>=0 (J{site:?}={value})"),
            KernelClause::Normalised { mass } => write!(f, "sum J=1 (found {mass})"),
            KernelClause::Symmetric { site } => write!(f, "symmetry (orbit of {site:?})"),
            KernelClause::NonEmpty => write!(f, "J has positive values"),
            KernelClause::CertificateExists => write!(f, "c0 bounds achievable"),
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel is not admissible; violated: {}", .0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; "))]
    NotAdmissible(Vec<KernelClause>),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("range must be at least 1")]
    ZeroRange,
    #[error("custom kernels are loaded from a field file")]
    CustomNeedsField,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// A certified admissible kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleKernel {
    pub family: KernelFamily,
    field: LatticeField,
    range: u32,
    sigma_sq: f64,
    c0: f64,
    /// Positive sites with their values, sorted by site.
    steps: Vec<(Point, f64)>,
    /// Exact values aligned with `steps`, when the family provides them.
    #[serde(skip)]
    exact: Option<Vec<Rational>>,
}

impl AdmissibleKernel {
    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn field(&self) -> &LatticeField {
        &self.field
    }

    /// `R_J = max{|x|_∞ : J_x > 0}`.
    pub fn range(&self) -> u32 {
        self.range
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// The tightest `c₀` certificate.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn steps(&self) -> &[(Point, f64)] {
        &self.steps
    }

    pub fn support_size(&self) -> usize {
        self.steps.len()
    }

    pub fn max_value(&self) -> f64 {
        self.steps.iter().map(|s| s.1).fold(0.0, f64::max)
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.field.get(x)
    }

    /// Exact values aligned with [`steps`](Self::steps), if available.
    pub fn exact_values(&self) -> Option<&[Rational]> {
        self.exact.as_deref()
    }

    /// The common value when `J` is uniform on its support.
    pub fn uniform_value(&self) -> Option<Rational> {
        let ex = self.exact.as_ref()?;
        let first = ex.first()?;
        ex.iter().all(|v| v == first).then(|| first.clone())
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec {
            family: self.family,
            d: self.dim(),
            range: self.range,
        }
    }

    pub fn label(&self) -> String {
        self.spec().to_string()
    }
}

/// `J_x = 1/(2d)` on the `2d` unit vectors.
pub fn nearest_neighbour(dim: usize) -> Result<AdmissibleKernel, KernelError> {
    if dim == 0 {
        return Err(KernelError::ZeroDimension);
    }
    let w = Rational::new(BigInt::one(), BigInt::from(2 * dim));
    let field = LatticeField::from_fn(dim, 1, |c| if norm2_sq(c) == 1 { 1.0 / (2 * dim) as f64 } else { 0.0 });
    let mut k = certify(field, KernelFamily::NearestNeighbour)?;
    k.exact = Some(vec![w; k.steps.len()]);
    Ok(k)
}

/// `J_x = 1/(|Λ_R|−1)` on `0 < |x|_∞ ≤ R`.
pub fn uniform_spread_out(dim: usize, range: u32) -> Result<AdmissibleKernel, KernelError> {
    if dim == 0 {
        return Err(KernelError::ZeroDimension);
    }
    if range == 0 {
        return Err(KernelError::ZeroRange);
    }
    let count = (2 * range as u64 + 1).pow(dim as u32) - 1;
    let w = Rational::new(BigInt::one(), BigInt::from(count));
    let wf = 1.0 / count as f64;
    let field = LatticeField::try_zeros(dim, range as usize)?;
    let mut values = vec![wf; field.len()];
    values[field.len() / 2] = 0.0;
    let field = LatticeField::from_values(dim, range as usize, values)?;
    let mut k = certify(field, KernelFamily::SpreadOut)?;
    // The closed form is exact; prefer it over the summed float.
    k.sigma_sq = spread_out_sigma_sq(dim, range).to_f64().unwrap();
    k.c0 = tightest_c0(k.sigma_sq.sqrt(), k.range, wf, dim);
    k.exact = Some(vec![w; k.steps.len()]);
    Ok(k)
}

/// `σ_J²` of the uniform spread-out kernel in closed form:
/// `d · [R(R+1)(2R+1)/3] · (2R+1)^{d−1} / ((2R+1)^d − 1)`.
pub fn spread_out_sigma_sq(dim: usize, range: u32) -> Rational {
    let r = BigInt::from(range);
    let side = BigInt::from(2 * range + 1);
    let one_dim = &r * (&r + 1) * &side / BigInt::from(3);
    let num = BigInt::from(dim) * one_dim * num::pow(side.clone(), dim - 1);
    let den = num::pow(side, dim) - 1;
    Rational::new(num, den)
}

/// Certifies an arbitrary field as an admissible kernel.
pub fn validate(field: &LatticeField) -> Result<AdmissibleKernel, KernelError> {
    certify(field.clone(), KernelFamily::Custom)
}

fn certify(field: LatticeField, family: KernelFamily) -> Result<AdmissibleKernel, KernelError> {
    let mut violations = Vec::new();
    let origin = field.origin_value();
    if origin != 0.0 {
        violations.push(KernelClause::OriginZero { value: origin });
    }
    for (c, v) in field.iter() {
        if !(v >= 0.0) || !v.is_finite() {
            violations.push(KernelClause::Nonnegative { site: c, value: v });
            break;
        }
    }
    let mass = field.mass();
    if (mass - 1.0).abs() > NORMALISATION_TOL || field.tail_bound() != 0.0 {
        violations.push(KernelClause::Normalised { mass });
    }
    let mut orbit: HashMap<Vec<i32>, f64> = HashMap::new();
    for (c, v) in field.iter() {
        let key = canonical_coords(&c);
        match orbit.get(&key) {
            Some(&w) if w != v => {
                violations.push(KernelClause::Symmetric { site: key });
                break;
            }
            Some(_) => {}
            None => {
                orbit.insert(key, v);
            }
        }
    }
    let steps: Vec<(Point, f64)> = field
        .support()
        .filter(|(_, v)| *v > 0.0)
        .map(|(c, v)| (Point::new(c), v))
        .collect();
    if steps.is_empty() {
        violations.push(KernelClause::NonEmpty);
    }
    if !violations.is_empty() {
        return Err(KernelError::NotAdmissible(violations));
    }
    let range = steps.iter().map(|(p, _)| p.sup_norm()).max().unwrap_or(0);
    let sigma_sq = steps
        .iter()
        .map(|(p, v)| p.norm2_sq() as f64 * v)
        .collect::<KahanSum>()
        .value();
    let jmax = steps.iter().map(|s| s.1).fold(0.0, f64::max);
    let c0 = tightest_c0(sigma_sq.sqrt(), range, jmax, field.dim());
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(KernelError::NotAdmissible(vec![KernelClause::CertificateExists]));
    }
    // Trim the stored box to the range.
    let field = if (range as usize) < field.radius() {
        field.resized(range as usize)
    } else {
        field
    };
    let mut field = field;
    field.set_symmetric_flag(true);
    Ok(AdmissibleKernel {
        family,
        field,
        range,
        sigma_sq,
        c0,
        steps,
        exact: None,
    })
}

/// `min(1, σ/R, 1/(max J · R^d))`.
fn tightest_c0(sigma: f64, range: u32, jmax: f64, dim: usize) -> f64 {
    let r = range as f64;
    1.0f64.min(sigma / r).min(1.0 / (jmax * r.powi(dim as i32)))
}

/// Every site `x` of `Λ_R \ {0}`; handy for building custom kernels in tests.
pub fn punctured_box(dim: usize, range: u32) -> impl Iterator<Item = Vec<i32>> {
    BoxIter::new(dim, range as i32).filter(|c| sup_norm(c) > 0)
}

/// Converts an exact rational to `f64`.
pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

pub fn rational(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn is_zero(q: &Rational) -> bool {
    q.is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_neighbour_values() {
        let k = nearest_neighbour(2).unwrap();
        assert_eq!(k.value(&Point::new(vec![1, 0])), 0.25);
        assert_eq!(k.value(&Point::new(vec![1, 1])), 0.0);
        assert_eq!(k.sigma(), 1.0);
        assert_eq!(k.c0(), 1.0);
        assert_eq!(k.range(), 1);
        assert_eq!(k.uniform_value(), Some(rational(1, 4)));
        for d in 1..=6 {
            assert!((nearest_neighbour(d).unwrap().field().mass() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn spread_out_values() {
        let k = uniform_spread_out(2, 1).unwrap();
        assert_eq!(k.support_size(), 8);
        assert_eq!(k.value(&Point::new(vec![1, -1])), 0.125);
        assert_eq!(spread_out_sigma_sq(2, 1), rational(3, 2));
        assert!((k.sigma_sq() - 1.5).abs() < 1e-15);
        let k1 = uniform_spread_out(1, 2).unwrap();
        for x in [-2, -1, 1, 2] {
            assert_eq!(k1.value(&Point::new(vec![x])), 0.25);
        }
        assert_eq!(spread_out_sigma_sq(1, 2), rational(5, 2));
    }

    #[test]
    fn closed_form_matches_direct_sum() {
        for d in 1..=3 {
            for r in 1..=3 {
                let k = uniform_spread_out(d, r).unwrap();
                let direct: f64 = k.steps().iter().map(|(p, v)| p.norm2_sq() as f64 * v).sum();
                assert!((direct - k.sigma_sq()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_failures_name_the_clause() {
        let delta = LatticeField::delta(2);
        match validate(&delta) {
            Err(KernelError::NotAdmissible(v)) => {
                assert!(v.iter().any(|c| matches!(c, KernelClause::OriginZero { .. })))
            }
            other => panic!("unexpected {other:?}"),
        }
        let light = nearest_neighbour(2).unwrap().field().scaled(0.9);
        match validate(&light) {
            Err(KernelError::NotAdmissible(v)) => {
                assert!(v.iter().any(|c| matches!(c, KernelClause::Normalised { .. })))
            }
            other => panic!("unexpected {other:?}"),
        }
        let lopsided = LatticeField::from_fn(1, 1, |c| if c[0] == 1 { 1.0 } else { 0.0 });
        match validate(&lopsided) {
            Err(KernelError::NotAdmissible(v)) => {
                assert!(v.iter().any(|c| matches!(c, KernelClause::Symmetric { .. })))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_round_trips_builtins() {
        for k in [nearest_neighbour(3).unwrap(), uniform_spread_out(2, 3).unwrap()] {
            let v = validate(k.field()).unwrap();
            assert_eq!(v.range(), k.range());
            assert!((v.sigma_sq() - k.sigma_sq()).abs() < 1e-12);
            assert!((v.c0() - k.c0()).abs() < 1e-12);
            assert_eq!(v.steps(), k.steps());
        }
        assert_eq!(validate(nearest_neighbour(3).unwrap().field()).unwrap().c0(), 1.0);
    }

    #[test]
    fn spec_serializes() {
        let s = KernelSpec::spread_out(3, 2);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"family":"spread_out","d":3,"R":2}"#);
        let back: KernelSpec = serde_json::from_str(r#"{"family":"nn","d":4}"#).unwrap();
        assert_eq!(back, KernelSpec::nn(4));
    }
}
