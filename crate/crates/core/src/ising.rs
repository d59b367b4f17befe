//! Exact Ising correlations on small volumes and the finite-volume inequality checks.

use crate::conv::convolve;
use crate::kernels::AdmissibleKernel;
use crate::lattice::{LatticeError, LatticeField};
use crate::numeric::linear_grid;
use crate::report::{InequalityReport, Location, ResidualTracker};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

pub const MAX_SITES: usize = 22;

const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum IsingError {
    #[error("volume has {0} sites; exact enumeration allows at most {MAX_SITES}")]
    TooLarge(usize),
    #[error("volume is empty")]
    Empty,
    #[error("site {0:?} appears twice")]
    DuplicateSite(Vec<i32>),
    #[error("site dimension {got} does not match kernel dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("beta must be finite and nonnegative, got {0}")]
    BadBeta(f64),
    #[error("need beta' <= beta, got {low} > {high}")]
    InvertedPair { low: f64, high: f64 },
    #[error("unknown shape '{0}'; expected AxB[xC...] or chainN")]
    BadShape(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// A finite set of sites with the couplings of a kernel restricted to it. The first site is
/// the origin of all two-point functions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IsingVolume {
    pub name: String,
    pub sites: Vec<Vec<i32>>,
    /// `J_{y−x}` for every ordered pair of sites, row-major.
    pub couplings: Vec<f64>,
    /// Kernel steps, kept for sums reaching outside the volume.
    steps: Vec<(Vec<i32>, f64)>,
}

impl IsingVolume {
    pub fn new(name: impl Into<String>, kernel: &AdmissibleKernel, sites: Vec<Vec<i32>>) -> Result<Self, IsingError> {
        if sites.is_empty() {
            return Err(IsingError::Empty);
        }
        if sites.len() > MAX_SITES {
            return Err(IsingError::TooLarge(sites.len()));
        }
        for (i, s) in sites.iter().enumerate() {
            if s.len() != kernel.dim() {
                return Err(IsingError::DimensionMismatch {
                    got: s.len(),
                    expected: kernel.dim(),
                });
            }
            if sites[..i].contains(s) {
                return Err(IsingError::DuplicateSite(s.clone()));
            }
        }
        let n = sites.len();
        let mut couplings = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let diff: Vec<i32> = sites[b].iter().zip(&sites[a]).map(|(y, x)| y - x).collect();
                couplings[a * n + b] = kernel.field().at(&diff);
            }
        }
        Ok(IsingVolume {
            name: name.into(),
            sites,
            couplings,
            steps: kernel.steps().iter().map(|(p, w)| (p.coords().to_vec(), *w)).collect(),
        })
    }

    /// The box `{0, …, a₁−1} × … × {0, …, a_d−1}`.
    pub fn rectangle(kernel: &AdmissibleKernel, sides: &[usize]) -> Result<Self, IsingError> {
        let mut sites = vec![Vec::new()];
        for &side in sides {
            sites = sites
                .into_iter()
                .flat_map(|s: Vec<i32>| {
                    (0..side as i32).map(move |c| {
                        let mut t = s.clone();
                        t.push(c);
                        t
                    })
                })
                .collect();
        }
        let name = sides.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x");
        IsingVolume::new(name, kernel, sites)
    }

    /// Parses `2x2`, `3x2x2` or `chain6`.
    pub fn from_shape(kernel: &AdmissibleKernel, shape: &str) -> Result<Self, IsingError> {
        let bad = || IsingError::BadShape(shape.to_string());
        if let Some(n) = shape.strip_prefix("chain") {
            let n: usize = n.parse().map_err(|_| bad())?;
            let mut v = IsingVolume::rectangle(kernel, &[n])?;
            v.name = shape.to_string();
            return Ok(v);
        }
        let sides: Vec<usize> = shape.split('x').map(|s| s.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        IsingVolume::rectangle(kernel, &sides)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    fn coupling(&self, a: usize, b: usize) -> f64 {
        self.couplings[a * self.len() + b]
    }
}

/// All pair correlations `⟨σ_aσ_b⟩` and their `β`-derivatives at one `β`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IsingCorrelations {
    pub beta: f64,
    pub sites: usize,
    pub two_point: Vec<f64>,
    pub derivative: Vec<f64>,
}

impl IsingCorrelations {
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.two_point[a * self.sites + b]
    }

    pub fn derivative_at(&self, a: usize, b: usize) -> f64 {
        self.derivative[a * self.sites + b]
    }
}

#[derive(Clone)]
struct Accumulator {
    weight: f64,
    energy: f64,
    pairs: Vec<f64>,
    pairs_energy: Vec<f64>,
}

impl Accumulator {
    fn new(pairs: usize) -> Self {
        Accumulator {
            weight: 0.0,
            energy: 0.0,
            pairs: vec![0.0; pairs],
            pairs_energy: vec![0.0; pairs],
        }
    }

    fn merge(mut self, other: Accumulator) -> Self {
        self.weight += other.weight;
        self.energy += other.energy;
        self.pairs.iter_mut().zip(other.pairs).for_each(|(a, b)| *a += b);
        self.pairs_energy.iter_mut().zip(other.pairs_energy).for_each(|(a, b)| *a += b);
        self
    }
}

/// Full enumeration of `{−1, 1}^Λ` with `σ` of the first site fixed to `+1` (spin-flip symmetry),
/// walking each chunk in Gray-code order with incremental energy updates.
pub fn correlations(volume: &IsingVolume, beta: f64) -> Result<IsingCorrelations, IsingError> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(IsingError::BadBeta(beta));
    }
    let n = volume.len();
    let free = n - 1;
    // Interaction energy −H(σ) = Σ_{a<b} J_ab σ_aσ_b; weights are shifted by its maximum.
    let max_energy: f64 = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).map(|(a, b)| volume.coupling(a, b)).sum();
    let pair_list: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let chunk_bits = free.min(10);
    let chunks = 1usize << (free - chunk_bits);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Accumulator::new(pair_list.len());
            // Spins: bit i of `state` set means σ_i = −1. Site 0 stays +1; high bits come from c.
            let high = c << chunk_bits;
            let mut state = high << 1;
            let spin = |s: usize, i: usize| if s >> i & 1 == 1 { -1.0 } else { 1.0 };
            let mut energy: f64 = pair_list
                .iter()
                .map(|&(a, b)| volume.coupling(a, b) * spin(state, a) * spin(state, b))
                .sum();
            for step in 0..1usize << chunk_bits {
                if step > 0 {
                    let flip = step.trailing_zeros() as usize + 1;
                    let old = spin(state, flip);
                    let field: f64 = (0..n).filter(|&j| j != flip).map(|j| volume.coupling(flip, j) * spin(state, j)).sum();
                    energy -= 2.0 * old * field;
                    state ^= 1 << flip;
                }
                let w = (beta * (energy - max_energy)).exp();
                acc.weight += w;
                acc.energy += w * energy;
                for (k, &(a, b)) in pair_list.iter().enumerate() {
                    let s = if (state >> a ^ state >> b) & 1 == 1 { -w } else { w };
                    acc.pairs[k] += s;
                    acc.pairs_energy[k] += s * energy;
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(Accumulator::merge)
        .expect("at least one chunk");
    let mean_energy = acc.energy / acc.weight;
    let mut two_point = vec![1.0; n * n];
    let mut derivative = vec![0.0; n * n];
    for (k, &(a, b)) in pair_list.iter().enumerate() {
        let g = acc.pairs[k] / acc.weight;
        let dg = acc.pairs_energy[k] / acc.weight - g * mean_energy;
        two_point[a * n + b] = g;
        two_point[b * n + a] = g;
        derivative[a * n + b] = dg;
        derivative[b * n + a] = dg;
    }
    Ok(IsingCorrelations {
        beta,
        sites: n,
        two_point,
        derivative,
    })
}

/// `⟨σ_0σ_x⟩` for the site with index `x`.
pub fn two_point_exact(volume: &IsingVolume, beta: f64, x: usize) -> Result<f64, IsingError> {
    Ok(correlations(volume, beta)?.at(0, x))
}

/// `∂_β⟨σ_0σ_x⟩` for the site with index `x`.
pub fn two_point_derivative_exact(volume: &IsingVolume, beta: f64, x: usize) -> Result<f64, IsingError> {
    Ok(correlations(volume, beta)?.derivative_at(0, x))
}

/// `⟨σ_0σ_x⟩` on the free-boundary box `[−h, h]^d` with the origin at its centre.
///
/// Values are exact for that volume; as a stand-in for the infinite-volume field it is marked uncertified.
pub fn centred_two_point(kernel: &AdmissibleKernel, half_width: usize, beta: f64) -> Result<LatticeField, IsingError> {
    let dim = kernel.dim();
    let mut sites = vec![vec![0i32; dim]];
    sites.extend(
        LatticeField::zeros(dim, half_width)
            .iter()
            .map(|(x, _)| x)
            .filter(|x| x.iter().any(|c| *c != 0)),
    );
    let volume = IsingVolume::new(format!("centred{half_width}"), kernel, sites)?;
    let corr = correlations(&volume, beta)?;
    let mut field = LatticeField::zeros(dim, half_width);
    for (i, s) in volume.sites.iter().enumerate() {
        let idx = field.index_of(s).expect("site inside box");
        field.values_mut()[idx] = corr.at(0, i);
    }
    Ok(field.uncertified())
}

/// Sites of `Λ` together with every site one kernel step away, with `Λ` first.
fn neighbourhood(volume: &IsingVolume) -> Vec<Vec<i32>> {
    let mut all = volume.sites.clone();
    let mut seen: HashMap<Vec<i32>, usize> = all.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    for s in &volume.sites {
        for (step, _) in &volume.steps {
            let t: Vec<i32> = s.iter().zip(step).map(|(a, b)| a + b).collect();
            if !seen.contains_key(&t) {
                seen.insert(t.clone(), all.len());
                all.push(t);
            }
        }
    }
    all
}

fn coupling_between(a: &[i32], b: &[i32], steps: &HashMap<Vec<i32>, f64>) -> f64 {
    let diff: Vec<i32> = b.iter().zip(a).map(|(y, x)| y - x).collect();
    steps.get(&diff).copied().unwrap_or(0.0)
}

/// Residuals of the finite-volume bounds at one `β`, with sums over `Λ` and its kernel neighbourhood.
struct VolumeSums {
    /// `Σ_{u,v} G(0,u) J_{v−u} G(v,x)` for every `x ∈ Λ`.
    bubble_chain: Vec<f64>,
    /// `3 Σ_{u,v,z} K(0,z)K(z,u)J_{v−u}K(v,z)K(z,x)`.
    s2: Vec<f64>,
}

fn volume_sums(volume: &IsingVolume, corr: &IsingCorrelations) -> VolumeSums {
    let n = volume.len();
    let all = neighbourhood(volume);
    let m = all.len();
    let steps: HashMap<Vec<i32>, f64> = volume.steps.iter().cloned().collect();
    let g = |a: usize, b: usize| if a < n && b < n { corr.at(a, b) } else { 0.0 };
    // Directed kernel edges between any two sites of the neighbourhood.
    let edges: Vec<(usize, usize, f64)> = (0..m)
        .flat_map(|a| (0..m).map(move |b| (a, b)))
        .filter_map(|(a, b)| {
            let j = coupling_between(&all[a], &all[b], &steps);
            (j > 0.0).then_some((a, b, j))
        })
        .collect();
    // (G J)(x, y) = Σ_z G(x,z) J_{y−z}.
    let mut gj = vec![0.0; m * m];
    for &(z, y, j) in &edges {
        for x in 0..n {
            gj[x * m + y] += g(x, z) * j;
        }
    }
    let beta = corr.beta;
    let k: Vec<f64> = (0..m * m)
        .map(|idx| {
            let (x, y) = (idx / m, idx % m);
            g(x, y) + beta * gj[x * m + y].max(gj[y * m + x])
        })
        .collect();
    let kk = |a: usize, b: usize| k[a * m + b];
    let bubble_chain = (0..n)
        .map(|x| edges.iter().map(|&(u, v, j)| g(0, u) * j * g(v, x)).sum())
        .collect();
    // (K J K)(z, z) loop through z.
    let loop_at: Vec<f64> = (0..m)
        .map(|z| edges.iter().map(|&(u, v, j)| kk(z, u) * j * kk(v, z)).sum())
        .collect();
    let s2 = (0..n)
        .map(|x| 3.0 * (0..m).map(|z| kk(0, z) * loop_at[z] * kk(z, x)).sum::<f64>())
        .collect();
    VolumeSums { bubble_chain, s2 }
}

fn describe(tracker: &mut ResidualTracker, volume: &IsingVolume) {
    tracker.param("volume", &volume.name).param("sites", volume.len());
}

/// `G_β(0,x) ≤ G_{β'}(0,x) + (β−β') Σ_{u,v} G_β(0,u) J_{v−u} G_β(v,x)` on `Λ`.
pub fn check_i1(volume: &IsingVolume, beta_low: f64, beta: f64) -> Result<InequalityReport, IsingError> {
    check_i1_grid(volume, &[(beta_low, beta)])
}

pub fn check_i1_grid(volume: &IsingVolume, pairs: &[(f64, f64)]) -> Result<InequalityReport, IsingError> {
    let mut tracker = ResidualTracker::new(
        "ising_I1",
        "G_b(0,x) <= G_b'(0,x) + (b-b') sum_{u,v} G_b(0,u) J_{v-u} G_b(v,x)",
        EXACT_TOL,
    );
    describe(&mut tracker, volume);
    let mut cache: HashMap<u64, (IsingCorrelations, VolumeSums)> = HashMap::new();
    let mut get = |b: f64| -> Result<(), IsingError> {
        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(b.to_bits()) {
            let c = correlations(volume, b)?;
            let s = volume_sums(volume, &c);
            e.insert((c, s));
        }
        Ok(())
    };
    for &(low, high) in pairs {
        if low > high {
            return Err(IsingError::InvertedPair { low, high });
        }
        get(low)?;
        get(high)?;
    }
    for &(low, high) in pairs {
        let (lo, _) = &cache[&low.to_bits()];
        let (hi, sums) = &cache[&high.to_bits()];
        for x in 0..volume.len() {
            let residual = lo.at(0, x) + (high - low) * sums.bubble_chain[x] - hi.at(0, x);
            tracker.observe(residual, || Location::pair(low, high).with_site(&volume.sites[x]));
        }
    }
    Ok(tracker.finish())
}

/// `∂_βG_β(0,x) ≥ Σ_{u,v} G(0,u)J_{v−u}G(v,x) − 3 Σ_{u,v,z} K(0,z)K(z,u)J_{v−u}K(v,z)K(z,x)`
/// with `K = G + βF` and `F(x,y) = (GJ)(x,y) ∨ (GJ)(y,x)`.
pub fn check_i2(volume: &IsingVolume, beta: f64) -> Result<InequalityReport, IsingError> {
    check_i2_grid(volume, &[beta])
}

pub fn check_i2_grid(volume: &IsingVolume, betas: &[f64]) -> Result<InequalityReport, IsingError> {
    let mut tracker = ResidualTracker::new(
        "ising_I2",
        "dG_b(0,x)/db >= sum G(0,u)J G(v,x) - 3 sum K(0,z)K(z,u)J_{v-u}K(v,z)K(z,x)",
        EXACT_TOL,
    );
    describe(&mut tracker, volume);
    for &beta in betas {
        let corr = correlations(volume, beta)?;
        let sums = volume_sums(volume, &corr);
        for x in 0..volume.len() {
            let residual = corr.derivative_at(0, x) - (sums.bubble_chain[x] - sums.s2[x]);
            tracker.observe(residual, || Location::at_beta(beta).with_site(&volume.sites[x]));
        }
    }
    Ok(tracker.finish())
}

/// All pairs `β' ≤ β` of a grid.
pub fn grid_pairs(betas: &[f64]) -> Vec<(f64, f64)> {
    betas
        .iter()
        .enumerate()
        .flat_map(|(i, &lo)| betas[i..].iter().map(move |&hi| (lo, hi)))
        .collect()
}

/// Default grid of 16 values in `[0, 2]`.
pub fn default_beta_grid() -> Vec<f64> {
    linear_grid(0.0, 2.0, 16)
}

/// Infinite-volume `H_β(x) = 3[(δ+βJ)*(δ+βJ)](x) · (K*J*K)(0)` with `K = G*(δ+βJ)`.
pub fn h_ising(kernel: &AdmissibleKernel, two_point: &LatticeField, beta: f64) -> Result<LatticeField, IsingError> {
    let dim = kernel.dim();
    let smear = LatticeField::delta(dim).combine(1.0, kernel.field(), beta)?;
    let k = convolve(two_point, &smear)?;
    let kj = convolve(&k, kernel.field())?;
    let loop_value: f64 = kj.iter().map(|(x, v)| v * k.at(&x.iter().map(|c| -c).collect::<Vec<_>>())).sum();
    let profile = convolve(&smear, &smear)?;
    Ok(profile.scaled(3.0 * loop_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::nearest_neighbour;

    fn nn(d: usize) -> AdmissibleKernel {
        nearest_neighbour(d).unwrap()
    }

    #[test]
    fn centred_field_matches_the_chain() {
        let k = nn(1);
        let g = centred_two_point(&k, 2, 0.7).unwrap();
        let chain = correlations(&IsingVolume::rectangle(&k, &[5]).unwrap(), 0.7).unwrap();
        for x in -2i32..=2 {
            assert!((g.at(&[x]) - chain.at(2, (2 + x) as usize)).abs() < 1e-13);
        }
        assert_eq!(g.origin_value(), 1.0);
        assert!(g.tail_bound().is_infinite());
    }

    #[test]
    fn two_sites_give_tanh() {
        let v = IsingVolume::rectangle(&nn(1), &[2]).unwrap();
        for beta in [0.0, 0.3, 1.0, 2.5] {
            let g = two_point_exact(&v, beta, 1).unwrap();
            assert!((g - (beta * 0.5).tanh()).abs() < 1e-14);
            let dg = two_point_derivative_exact(&v, beta, 1).unwrap();
            assert!((dg - 0.5 / (beta * 0.5).cosh().powi(2)).abs() < 1e-13);
        }
    }

    #[test]
    fn open_chain_correlations_factorise() {
        // On a tree the correlation is a product of tanh over the path.
        let v = IsingVolume::from_shape(&nn(1), "chain6").unwrap();
        let c = correlations(&v, 0.7).unwrap();
        for x in 0..6 {
            assert!((c.at(0, x) - (0.35f64).tanh().powi(x as i32)).abs() < 1e-13);
        }
    }

    #[test]
    fn matches_brute_force_on_a_square() {
        let v = IsingVolume::rectangle(&nn(2), &[2, 3]).unwrap();
        let beta = 0.9;
        let n = v.len();
        let (mut z, mut num) = (0.0, vec![0.0; n]);
        for s in 0..1u32 << n {
            let spin = |i: usize| if s >> i & 1 == 1 { -1.0 } else { 1.0 };
            let e: f64 = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| 0.5 * v.coupling(a, b) * spin(a) * spin(b)).sum();
            let w = (beta * e).exp();
            z += w;
            for (x, slot) in num.iter_mut().enumerate() {
                *slot += w * spin(0) * spin(x);
            }
        }
        let c = correlations(&v, beta).unwrap();
        for (x, value) in num.iter().enumerate() {
            assert!((c.at(0, x) - value / z).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_beta_and_diagonal() {
        let v = IsingVolume::rectangle(&nn(2), &[2, 2]).unwrap();
        let c = correlations(&v, 0.0).unwrap();
        assert_eq!(c.at(0, 0), 1.0);
        for x in 1..4 {
            assert!(c.at(0, x).abs() < 1e-15);
        }
        assert!(IsingVolume::rectangle(&nn(1), &[23]).is_err());
    }

    #[test]
    fn inequalities_hold_on_small_volumes() {
        let square = IsingVolume::from_shape(&nn(2), "2x2").unwrap();
        assert!(check_i1(&square, 0.1, 0.3).unwrap().pass);
        assert!(check_i2(&square, 0.3).unwrap().pass);
        let chain = IsingVolume::from_shape(&nn(1), "chain6").unwrap();
        assert!(check_i2(&chain, 0.2).unwrap().pass);
        let same = check_i1(&chain, 0.4, 0.4).unwrap();
        assert!(same.pass && same.worst_residual >= 0.0);
    }

    #[test]
    fn griffiths_monotonicity() {
        let v = IsingVolume::rectangle(&nn(2), &[3, 3]).unwrap();
        let a = correlations(&v, 0.5).unwrap();
        let b = correlations(&v, 0.8).unwrap();
        for x in 0..v.len() {
            assert!(b.at(0, x) >= a.at(0, x));
            assert!(a.derivative_at(0, x) >= -1e-14);
        }
        // Adding sites adds couplings.
        let small = IsingVolume::rectangle(&nn(2), &[2, 3]).unwrap();
        let c = correlations(&small, 0.8).unwrap();
        assert!(b.at(0, 1) >= c.at(0, 1));
    }

    #[test]
    fn h_is_symmetric_and_nonnegative() {
        let k = nn(2);
        let g = LatticeField::from_fn(2, 3, |x| 0.5f64.powi(x.iter().map(|c| c.abs()).sum()));
        let h = h_ising(&k, &g, 0.4).unwrap();
        assert!(h.is_symmetric(1e-15));
        assert!(h.is_nonnegative());
    }
}
