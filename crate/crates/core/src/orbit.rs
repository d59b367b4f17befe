//! Hyperoctahedrally symmetric fields stored once per orbit.
//!
//! A symmetric field on `Λ_L ⊂ ℤᵈ` is determined by its values on sorted absolute
//! coordinate vectors `0 ≤ a₀ ≤ … ≤ a_{d−1} ≤ L`. There are `C(L+d, d)` of those, against
//! `(2L+1)^d` sites, which is what makes radius-80 fields in `d=4` practical.

use crate::lattice::{LatticeError, LatticeField};
use crate::numeric::KahanSum;
use rayon::prelude::*;
use std::sync::Arc;

/// Cap on stored orbit representatives.
pub const MAX_ORBITS: usize = 1 << 26;

/// Ranking of orbit representatives by the combinatorial number system:
/// `rank(a) = Σ_i C(a_i + i, i + 1)` for sorted `a`.
#[derive(Debug)]
pub struct OrbitIndex {
    dim: usize,
    radius: usize,
    binom: Vec<Vec<u64>>,
    reps: Vec<i32>,
    sizes: Vec<f64>,
    norms: Vec<i64>,
}

impl OrbitIndex {
    pub fn new(dim: usize, radius: usize) -> Result<Arc<Self>, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        let top = radius + dim;
        let mut binom = vec![vec![0u64; dim + 1]; top + 1];
        for n in 0..=top {
            binom[n][0] = 1;
            for k in 1..=dim.min(n) {
                binom[n][k] = binom[n - 1][k - 1].saturating_add(binom[n - 1][k]);
            }
        }
        let count = binom[top][dim] as usize;
        if count > MAX_ORBITS {
            return Err(LatticeError::TooLarge {
                dim,
                radius,
                sites: count as u128,
                limit: MAX_ORBITS,
            });
        }
        let mut index = OrbitIndex {
            dim,
            radius,
            binom,
            reps: vec![0; count * dim],
            sizes: vec![0.0; count],
            norms: vec![0; count],
        };
        let mut a = vec![0i32; dim];
        loop {
            let r = index.rank_sorted(&a);
            index.reps[r * dim..(r + 1) * dim].copy_from_slice(&a);
            index.sizes[r] = crate::lattice::orbit_size(&a) as f64;
            index.norms[r] = a.iter().map(|&v| v as i64 * v as i64).sum();
            // Next nondecreasing sequence bounded by radius, last coordinate fastest.
            let mut i = dim;
            loop {
                if i == 0 {
                    return Ok(Arc::new(index));
                }
                i -= 1;
                if (a[i] as usize) < radius {
                    a[i] += 1;
                    let v = a[i];
                    for slot in a.iter_mut().skip(i + 1) {
                        *slot = v;
                    }
                    break;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Rank of a sorted nonnegative vector with entries at most the radius.
    #[inline]
    pub fn rank_sorted(&self, a: &[i32]) -> usize {
        a.iter()
            .enumerate()
            .map(|(i, &v)| self.binom[v as usize + i][i + 1] as usize)
            .sum()
    }

    /// Rank of any site, or `None` outside the box.
    pub fn rank_of(&self, c: &[i32]) -> Option<usize> {
        let mut buf: Vec<i32> = c.iter().map(|v| v.abs()).collect();
        buf.sort_unstable();
        if buf.last().copied().unwrap_or(0) as usize > self.radius {
            return None;
        }
        Some(self.rank_sorted(&buf))
    }

    pub fn rep(&self, rank: usize) -> &[i32] {
        &self.reps[rank * self.dim..(rank + 1) * self.dim]
    }

    /// Number of sites in the orbit.
    pub fn orbit_size(&self, rank: usize) -> f64 {
        self.sizes[rank]
    }

    pub fn norm2_sq(&self, rank: usize) -> i64 {
        self.norms[rank]
    }

    /// Largest coordinate of the representative, i.e. its sup-norm.
    pub fn sup_norm(&self, rank: usize) -> usize {
        self.rep(rank)[self.dim - 1] as usize
    }
}

/// Sparse operator `f ↦ K*f` restricted to the box, in orbit coordinates.
#[derive(Debug)]
pub struct OrbitStencil {
    index: Arc<OrbitIndex>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl OrbitStencil {
    /// Row for representative `x` holds `Σ_e K_e` grouped by the orbit of `x − e`.
    pub fn new(index: Arc<OrbitIndex>, steps: &[(Vec<i32>, f64)]) -> Self {
        let dim = index.dim();
        let radius = index.radius() as i32;
        let rows: Vec<Vec<(u32, f64)>> = (0..index.len())
            .into_par_iter()
            .map(|r| {
                let x = index.rep(r);
                let mut buf = vec![0i32; dim];
                let mut row: Vec<(u32, f64)> = Vec::with_capacity(steps.len());
                for (e, w) in steps {
                    let mut inside = true;
                    for i in 0..dim {
                        let v = (x[i] - e[i]).abs();
                        if v > radius {
                            inside = false;
                            break;
                        }
                        buf[i] = v;
                    }
                    if !inside {
                        continue;
                    }
                    buf.sort_unstable();
                    row.push((index.rank_sorted(&buf) as u32, *w));
                }
                row.sort_unstable_by_key(|p| p.0);
                let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
                for (c, w) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += w,
                        _ => merged.push((c, w)),
                    }
                }
                merged
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let total: usize = rows.iter().map(|r| r.len()).sum();
        let mut cols = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for row in rows {
            for (c, w) in row {
                cols.push(c);
                weights.push(w);
            }
            row_ptr.push(cols.len());
        }
        OrbitStencil {
            index,
            row_ptr,
            cols,
            weights,
        }
    }

    pub fn nonzeros(&self) -> usize {
        self.cols.len()
    }

    pub fn index(&self) -> &Arc<OrbitIndex> {
        &self.index
    }

    /// `out = K*f` on the box, dropping whatever leaves it.
    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(4096).enumerate().for_each(|(chunk, slice)| {
            let base = chunk * 4096;
            for (k, o) in slice.iter_mut().enumerate() {
                let r = base + k;
                let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
                let mut acc = 0.0;
                for j in a..b {
                    acc += self.weights[j] * f[self.cols[j] as usize];
                }
                *o = acc;
            }
        });
    }

    pub fn apply(&self, f: &OrbitField) -> OrbitField {
        let mut out = OrbitField::zeros(self.index.clone());
        self.apply_into(&f.values, &mut out.values);
        out
    }
}

/// A symmetric field with one stored value per orbit.
#[derive(Clone, Debug)]
pub struct OrbitField {
    index: Arc<OrbitIndex>,
    values: Vec<f64>,
}

impl OrbitField {
    pub fn zeros(index: Arc<OrbitIndex>) -> Self {
        let n = index.len();
        OrbitField {
            index,
            values: vec![0.0; n],
        }
    }

    pub fn delta(index: Arc<OrbitIndex>) -> Self {
        let mut f = Self::zeros(index);
        f.values[0] = 1.0;
        f
    }

    pub fn from_values(index: Arc<OrbitIndex>, values: Vec<f64>) -> Self {
        assert_eq!(index.len(), values.len());
        OrbitField { index, values }
    }

    /// Samples a dense field at orbit representatives.
    pub fn from_dense(field: &LatticeField) -> Result<Self, LatticeError> {
        let index = OrbitIndex::new(field.dim(), field.radius())?;
        let values = (0..index.len()).map(|r| field.at(index.rep(r))).collect();
        Ok(OrbitField { index, values })
    }

    pub fn index(&self) -> &Arc<OrbitIndex> {
        &self.index
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn radius(&self) -> usize {
        self.index.radius()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, c: &[i32]) -> f64 {
        self.index.rank_of(c).map_or(0.0, |r| self.values[r])
    }

    pub fn origin_value(&self) -> f64 {
        self.values[0]
    }

    /// `Σ_x f(x)` over the box.
    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(r, v)| self.index.orbit_size(r) * v)
            .collect::<KahanSum>()
            .value()
    }

    /// `Σ_x |x|₂² f(x)` over the box.
    pub fn second_moment(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(r, v)| self.index.orbit_size(r) * self.index.norm2_sq(r) as f64 * v)
            .collect::<KahanSum>()
            .value()
    }

    /// `Σ_{|x|_∞ ≤ k} f(x)`.
    pub fn box_sum(&self, k: usize) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(r, _)| self.index.sup_norm(*r) <= k)
            .map(|(r, v)| self.index.orbit_size(r) * v)
            .collect::<KahanSum>()
            .value()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += c·other`.
    pub fn axpy(&mut self, c: f64, other: &OrbitField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scaled(&self, c: f64) -> OrbitField {
        OrbitField {
            index: self.index.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Expands onto the dense box of the given radius (at most the stored one).
    pub fn to_dense(&self, radius: usize) -> Result<LatticeField, LatticeError> {
        let radius = radius.min(self.radius());
        let mut field = LatticeField::from_fn(self.dim(), radius, |c| self.at(c));
        field.set_symmetric_flag(true);
        Ok(field)
    }

    /// Representatives with their orbit sizes and values.
    pub fn orbits(&self) -> impl Iterator<Item = (&[i32], f64, f64)> + '_ {
        (0..self.values.len()).map(move |r| (self.index.rep(r), self.index.orbit_size(r), self.values[r]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::convolve;
    use crate::kernels::{nearest_neighbour, uniform_spread_out};
    use crate::numeric::binomial;

    #[test]
    fn ranks_are_a_bijection() {
        for dim in 1..=4 {
            for radius in 0..=5 {
                let idx = OrbitIndex::new(dim, radius).unwrap();
                assert_eq!(idx.len() as u64, binomial((radius + dim) as u64, dim as u64));
                let mut seen = vec![false; idx.len()];
                for (r, slot) in seen.iter_mut().enumerate() {
                    let rep = idx.rep(r).to_vec();
                    assert!(rep.windows(2).all(|w| w[0] <= w[1]));
                    assert_eq!(idx.rank_sorted(&rep), r);
                    assert!(!*slot);
                    *slot = true;
                }
                let total: f64 = (0..idx.len()).map(|r| idx.orbit_size(r)).sum();
                assert_eq!(total as usize, (2 * radius + 1).pow(dim as u32));
            }
        }
    }

    #[test]
    fn stencil_matches_dense_convolution() {
        for kernel in [nearest_neighbour(3).unwrap(), uniform_spread_out(2, 2).unwrap()] {
            let dim = kernel.dim();
            let radius = 6;
            let f = LatticeField::from_fn(dim, radius, |c| {
                let n: i32 = c.iter().map(|v| v.abs()).sum();
                (-(n as f64) / 3.0).exp()
            });
            let dense = convolve(kernel.field(), &f).unwrap().resized(radius);
            let orbit = OrbitField::from_dense(&f).unwrap();
            let steps: Vec<(Vec<i32>, f64)> =
                kernel.steps().iter().map(|(p, w)| (p.coords().to_vec(), *w)).collect();
            let stencil = OrbitStencil::new(orbit.index().clone(), &steps);
            let out = stencil.apply(&orbit).to_dense(radius).unwrap();
            assert!(out.max_abs_diff(&dense) < 1e-14);
            assert!((stencil.apply(&orbit).mass() - dense.mass()).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_match_dense() {
        let f = LatticeField::from_fn(3, 4, |c| 1.0 / (1.0 + c.iter().map(|v| (v * v) as f64).sum::<f64>()));
        let o = OrbitField::from_dense(&f).unwrap();
        assert!((o.mass() - f.mass()).abs() < 1e-12);
        assert!((o.second_moment() - f.stored_second_moment()).abs() < 1e-10);
        assert!((o.box_sum(2) - f.box_sum(2)).abs() < 1e-12);
        assert_eq!(o.at(&[0, -3, 1]), f.at(&[0, -3, 1]));
        assert_eq!(o.at(&[0, -5, 1]), 0.0);
    }
}
