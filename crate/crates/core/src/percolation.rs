//! Bernoulli bond percolation: exact connection polynomials on small graphs and union-find
//! Monte Carlo on tori.

use crate::conv::convolve;
use crate::exact::{rationalize, to_f64, Poly};
use crate::kernels::{AdmissibleKernel, Rational};
use crate::lattice::{LatticeError, LatticeField};
use crate::numeric::{linear_grid, KahanSum};
use crate::report::{InequalityReport, Location, ResidualTracker};
use crate::rng::run_blocks;
use num::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Most edges [`two_point_exact`] will enumerate over.
pub const MAX_EXACT_EDGES: usize = 24;
/// Most torus sites a Monte Carlo run may hold.
pub const MAX_TORUS_SITES: usize = 1 << 24;

const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PercolationError {
    #[error("graph has {0} edges; exact enumeration allows at most {MAX_EXACT_EDGES}")]
    TooManyEdges(usize),
    #[error("torus side {side} must exceed twice the range {range}")]
    TorusTooSmall { side: usize, range: u32 },
    #[error("torus with {0} sites exceeds the limit {MAX_TORUS_SITES}")]
    TorusTooLarge(u128),
    #[error("beta = {beta} is outside [0, {max}] where every edge probability is at most 1")]
    BetaOutOfRange { beta: f64, max: f64 },
    #[error("need beta' <= beta, got {low} > {high}")]
    InvertedPair { low: f64, high: f64 },
    #[error("at least 1000 trials are required, got {0}")]
    TooFewTrials(usize),
    #[error("vertex {0} is not in the graph")]
    NoSuchVertex(usize),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// `J_{b−a}`; the edge is open with probability `β·weight`.
    pub weight: f64,
    pub weight_exact: Rational,
}

/// A finite graph with a distinguished root, optionally embedded in a torus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PercGraph {
    pub name: String,
    pub vertices: usize,
    pub edges: Vec<Edge>,
    pub root: usize,
    /// Site coordinates, when the graph comes from a lattice.
    #[serde(default)]
    pub coords: Vec<Vec<i32>>,
    /// Torus side, when the graph is a torus.
    #[serde(default)]
    pub torus_side: Option<usize>,
}

fn edge(a: usize, b: usize, weight: Rational) -> Edge {
    Edge {
        a,
        b,
        weight: to_f64(&weight),
        weight_exact: weight,
    }
}

fn kernel_weight(kernel: &AdmissibleKernel, value: f64) -> Rational {
    kernel.uniform_value().unwrap_or_else(|| rationalize(value))
}

impl PercGraph {
    pub fn new(name: impl Into<String>, vertices: usize, edges: Vec<(usize, usize, Rational)>) -> Self {
        PercGraph {
            name: name.into(),
            vertices,
            edges: edges.into_iter().map(|(a, b, w)| edge(a, b, w)).collect(),
            root: 0,
            coords: Vec::new(),
            torus_side: None,
        }
    }

    pub fn single_edge() -> Self {
        PercGraph::new("single-edge", 2, vec![(0, 1, Rational::one())])
    }

    /// Triangle with every edge weight `J` (nearest-neighbour ring of three sites has `J = 1/2`).
    pub fn triangle(weight: Rational) -> Self {
        PercGraph::new(
            "triangle",
            3,
            vec![(0, 1, weight.clone()), (1, 2, weight.clone()), (2, 0, weight)],
        )
    }

    /// The torus `(ℤ/Lℤ)^d` with an edge `{u, u+s}` for every step `s` of `J`; the root is the origin.
    pub fn torus(kernel: &AdmissibleKernel, side: usize) -> Result<Self, PercolationError> {
        let range = kernel.range();
        if side <= 2 * range as usize {
            return Err(PercolationError::TorusTooSmall { side, range });
        }
        let dim = kernel.dim();
        let sites = (side as u128).pow(dim as u32);
        if sites > MAX_TORUS_SITES as u128 {
            return Err(PercolationError::TorusTooLarge(sites));
        }
        let sites = sites as usize;
        let coords: Vec<Vec<i32>> = (0..sites).map(|i| torus_coords(i, dim, side)).collect();
        let positive: Vec<(Vec<i32>, f64)> = kernel
            .steps()
            .iter()
            .map(|(p, w)| (p.coords().to_vec(), *w))
            .filter(|(s, _)| s.iter().find(|v| **v != 0).is_some_and(|v| *v > 0))
            .collect();
        let mut edges = Vec::with_capacity(sites * positive.len());
        for (u, c) in coords.iter().enumerate() {
            for (s, w) in &positive {
                let target: Vec<i32> = c.iter().zip(s).map(|(a, b)| (a + b).rem_euclid(side as i32)).collect();
                edges.push(edge(u, torus_index(&target, side), kernel_weight(kernel, *w)));
            }
        }
        Ok(PercGraph {
            name: format!("torus {} L={side}", kernel.label()),
            vertices: sites,
            edges,
            root: 0,
            coords,
            torus_side: Some(side),
        })
    }

    /// The box `{0, …, side−1}^d` with kernel edges that stay inside, rooted at its centre.
    pub fn patch(kernel: &AdmissibleKernel, side: usize) -> Self {
        let dim = kernel.dim();
        let sites = side.pow(dim as u32);
        let coords: Vec<Vec<i32>> = (0..sites).map(|i| torus_coords(i, dim, side)).collect();
        let mut edges = Vec::new();
        for (u, c) in coords.iter().enumerate() {
            for (p, w) in kernel.steps() {
                let s = p.coords();
                if !s.iter().find(|v| **v != 0).is_some_and(|v| *v > 0) {
                    continue;
                }
                let target: Vec<i32> = c.iter().zip(s).map(|(a, b)| a + b).collect();
                if target.iter().all(|&v| (0..side as i32).contains(&v)) {
                    edges.push(edge(u, torus_index(&target, side), kernel_weight(kernel, *w)));
                }
            }
        }
        let centre = vec![(side / 2) as i32; dim];
        PercGraph {
            name: format!("patch {} side={side}", kernel.label()),
            vertices: sites,
            edges,
            root: torus_index(&centre, side),
            coords,
            torus_side: None,
        }
    }

    /// Largest `β` with every edge probability at most 1.
    pub fn beta_max(&self) -> f64 {
        1.0 / self.edges.iter().map(|e| e.weight).fold(0.0, f64::max)
    }

    fn check_beta(&self, beta: f64) -> Result<(), PercolationError> {
        let max = self.beta_max();
        if !(0.0..=max * (1.0 + 1e-12)).contains(&beta) {
            return Err(PercolationError::BetaOutOfRange { beta, max });
        }
        Ok(())
    }

    /// Ordered adjacency `(u, v, J_{uv})`, each edge in both directions.
    fn directed(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges
            .iter()
            .flat_map(|e| [(e.a, e.b, e.weight), (e.b, e.a, e.weight)])
    }
}

fn torus_coords(mut idx: usize, dim: usize, side: usize) -> Vec<i32> {
    let mut c = vec![0i32; dim];
    for slot in c.iter_mut().rev() {
        *slot = (idx % side) as i32;
        idx /= side;
    }
    c
}

fn torus_index(c: &[i32], side: usize) -> usize {
    c.iter().fold(0usize, |acc, &v| acc * side + v as usize)
}

/// Union-find with path halving and union by size; `reset` is O(1) through epoch stamps.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            stamp: vec![0; n],
            epoch: 0,
        }
    }

    pub fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = u32::MAX);
        }
    }

    fn touch(&mut self, i: usize) {
        if self.stamp[i] != self.epoch {
            self.stamp[i] = self.epoch;
            self.parent[i] = i as u32;
            self.size[i] = 1;
        }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        self.touch(i);
        while self.parent[i] as usize != i {
            let p = self.parent[i] as usize;
            self.touch(p);
            let gp = self.parent[p];
            self.parent[i] = gp;
            i = gp as usize;
            self.touch(i);
        }
        i
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra as u32;
        self.size[ra] += self.size[rb];
    }

    pub fn component_size(&mut self, i: usize) -> usize {
        let r = self.find(i);
        self.size[r] as usize
    }
}

/// `P_β[a ↔ b]` for every pair of vertices, as exact polynomials in `β`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactTwoPoint {
    pub graph: PercGraph,
    polys: Vec<Poly>,
}

impl ExactTwoPoint {
    pub fn poly(&self, a: usize, b: usize) -> &Poly {
        &self.polys[a * self.graph.vertices + b]
    }

    /// `G_β(root, x)`.
    pub fn from_root(&self, x: usize) -> &Poly {
        self.poly(self.graph.root, x)
    }

    /// All pair values at `β` in exact arithmetic.
    fn matrix(&self, beta: &Rational) -> Vec<Rational> {
        self.polys.par_iter().map(|p| p.eval(beta)).collect()
    }

    fn derivative_matrix(&self, beta: &Rational) -> Vec<Rational> {
        self.polys.par_iter().map(|p| p.derivative().eval(beta)).collect()
    }
}

/// Exact `P[a ↔ b]` over all `2^{|E|}` configurations.
///
/// Configurations are tallied by how many edges of each weight class are open; each tally
/// contributes `Π_c (J_c β)^{k_c} (1 − J_c β)^{n_c − k_c}`.
pub fn two_point_exact(graph: &PercGraph) -> Result<ExactTwoPoint, PercolationError> {
    let m = graph.edges.len();
    if m > MAX_EXACT_EDGES {
        return Err(PercolationError::TooManyEdges(m));
    }
    let v = graph.vertices;
    let mut classes: Vec<Rational> = Vec::new();
    let class_of: Vec<usize> = graph
        .edges
        .iter()
        .map(|e| match classes.iter().position(|c| *c == e.weight_exact) {
            Some(i) => i,
            None => {
                classes.push(e.weight_exact.clone());
                classes.len() - 1
            }
        })
        .collect();
    let class_sizes: Vec<usize> = (0..classes.len()).map(|c| class_of.iter().filter(|&&k| k == c).count()).collect();
    let mut radix = vec![1usize; classes.len()];
    for c in 1..classes.len() {
        radix[c] = radix[c - 1] * (class_sizes[c - 1] + 1);
    }
    let keys = radix.last().map_or(1, |r| r * (class_sizes[classes.len() - 1] + 1));
    let pairs = v * v;
    let chunk = 1usize << 12;
    let total = 1usize << m;
    let tallies = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut tally = vec![0u64; pairs * keys];
            let mut uf = UnionFind::new(v);
            let mut roots = vec![0usize; v];
            for mask in c * chunk..((c + 1) * chunk).min(total) {
                uf.reset();
                let mut key = 0;
                for (i, e) in graph.edges.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        uf.union(e.a, e.b);
                        key += radix[class_of[i]];
                    }
                }
                for (i, r) in roots.iter_mut().enumerate() {
                    *r = uf.find(i);
                }
                for a in 0..v {
                    for b in a..v {
                        if roots[a] == roots[b] {
                            tally[(a * v + b) * keys + key] += 1;
                        }
                    }
                }
            }
            tally
        })
        .reduce(
            || vec![0u64; pairs * keys],
            |mut x, y| {
                x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                x
            },
        );
    // Basis polynomial for each tally key.
    let basis: Vec<Poly> = (0..keys)
        .map(|key| {
            let mut p = Poly::constant(Rational::one());
            for (c, weight) in classes.iter().enumerate() {
                let open = key / radix[c] % (class_sizes[c] + 1);
                let on = Poly::monomial(weight.clone(), 1);
                let off = &Poly::constant(Rational::one()) - &on;
                for _ in 0..open {
                    p = &p * &on;
                }
                for _ in open..class_sizes[c] {
                    p = &p * &off;
                }
            }
            p
        })
        .collect();
    let mut polys = vec![Poly::zero(); pairs];
    for a in 0..v {
        for b in a..v {
            let mut p = Poly::zero();
            for (key, base) in basis.iter().enumerate() {
                let count = tallies[(a * v + b) * keys + key];
                if count > 0 {
                    p = &p + &base.scaled(&Rational::from_integer(count.into()));
                }
            }
            polys[a * v + b] = p.clone();
            polys[b * v + a] = p;
        }
    }
    Ok(ExactTwoPoint {
        graph: graph.clone(),
        polys,
    })
}

/// `P_β[root ↔ x, root ↔ y]` by direct enumeration, for FKG checks.
pub fn joint_connection(graph: &PercGraph, beta: f64, x: usize, y: usize) -> Result<f64, PercolationError> {
    let m = graph.edges.len();
    if m > MAX_EXACT_EDGES {
        return Err(PercolationError::TooManyEdges(m));
    }
    graph.check_beta(beta)?;
    let mut uf = UnionFind::new(graph.vertices);
    let mut sum = KahanSum::new();
    for mask in 0..1usize << m {
        uf.reset();
        let mut prob = 1.0;
        for (i, e) in graph.edges.iter().enumerate() {
            let p = beta * e.weight;
            if mask >> i & 1 == 1 {
                uf.union(e.a, e.b);
                prob *= p;
            } else {
                prob *= 1.0 - p;
            }
        }
        let r = uf.find(graph.root);
        if uf.find(x) == r && uf.find(y) == r {
            sum.add(prob);
        }
    }
    Ok(sum.value())
}

/// Monte Carlo estimate of `P_β[root ↔ v]` for every vertex.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McTwoPoint {
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// `E|C(root)|` and its standard error.
    pub chi: f64,
    pub chi_error: f64,
    /// Per-block means of the connection indicators, kept for jackknife estimates.
    #[serde(skip)]
    pub block_means: Vec<Vec<f64>>,
}

/// Union-find Monte Carlo over `trials` independent configurations.
pub fn two_point_mc_graph(graph: &PercGraph, beta: f64, trials: usize, seed: u64) -> Result<McTwoPoint, PercolationError> {
    if trials < 1000 {
        return Err(PercolationError::TooFewTrials(trials));
    }
    graph.check_beta(beta)?;
    let v = graph.vertices;
    let probs: Vec<f64> = graph.edges.iter().map(|e| beta * e.weight).collect();
    // Each block returns (Σ indicators per vertex, Σ |C|, Σ |C|², count).
    let blocks = run_blocks(trials, seed, |rng, count| {
        let mut uf = UnionFind::new(v);
        let mut hits = vec![0u64; v];
        let (mut size_sum, mut size_sq) = (0f64, 0f64);
        for _ in 0..count {
            uf.reset();
            for (e, &p) in graph.edges.iter().zip(&probs) {
                if rng.gen::<f64>() < p {
                    uf.union(e.a, e.b);
                }
            }
            let root = uf.find(graph.root);
            for (i, h) in hits.iter_mut().enumerate() {
                if uf.find(i) == root {
                    *h += 1;
                }
            }
            let s = uf.component_size(graph.root) as f64;
            size_sum += s;
            size_sq += s * s;
        }
        (hits, size_sum, size_sq, count)
    });
    let n = trials as f64;
    let mut totals = vec![0u64; v];
    let (mut size_sum, mut size_sq) = (0.0, 0.0);
    let mut block_means = Vec::with_capacity(blocks.len());
    for (hits, s, s2, count) in &blocks {
        totals.iter_mut().zip(hits).for_each(|(t, h)| *t += h);
        size_sum += s;
        size_sq += s2;
        block_means.push(hits.iter().map(|&h| h as f64 / *count as f64).collect());
    }
    let mean: Vec<f64> = totals.iter().map(|&t| t as f64 / n).collect();
    let std_error = mean.iter().map(|p| (p * (1.0 - p) / (n - 1.0)).max(0.0).sqrt()).collect();
    let chi = size_sum / n;
    let chi_error = ((size_sq / n - chi * chi).max(0.0) / (n - 1.0)).sqrt();
    Ok(McTwoPoint {
        beta,
        trials,
        seed,
        mean,
        std_error,
        chi,
        chi_error,
        block_means,
    })
}

/// Estimate with a jackknife standard error over trial blocks.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Torus Monte Carlo results mapped onto a box around the origin.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusTwoPoint {
    pub side: usize,
    pub field: LatticeField,
    pub std_error: LatticeField,
    pub chi: Estimate,
    pub xi_sq: Estimate,
    /// Open triangle `(G*J*G*G)(0)` on the box.
    pub triangle: Estimate,
}

/// Monte Carlo on the torus `(ℤ/Lℤ)^d`; the field is symmetrised over the point group.
pub fn two_point_mc(
    kernel: &AdmissibleKernel,
    side: usize,
    beta: f64,
    trials: usize,
    seed: u64,
) -> Result<TorusTwoPoint, PercolationError> {
    let graph = PercGraph::torus(kernel, side)?;
    let mc = two_point_mc_graph(&graph, beta, trials, seed)?;
    let to_field = |values: &[f64]| -> Result<LatticeField, PercolationError> {
        Ok(torus_to_box(&graph, values)?.symmetrize())
    };
    let field = to_field(&mc.mean)?;
    let std_error = to_field(&mc.std_error)?;
    let derived = |values: &[f64]| -> Result<(f64, f64, f64), PercolationError> {
        let g = to_field(values)?;
        let chi = g.mass();
        let m2 = g.stored_second_moment();
        let jg = convolve(kernel.field(), &g)?;
        let gjg = convolve(&g, &jg)?;
        let triangle: f64 = g.iter().map(|(x, v)| v * gjg.at(&x)).sum();
        Ok((chi, m2 / chi, triangle))
    };
    let full = derived(&mc.mean)?;
    // Block jackknife: leave one block out, reweighting by block sizes.
    let blocks = &mc.block_means;
    let k = blocks.len();
    let (chi, xi_sq, triangle) = if k < 2 {
        (
            Estimate { value: full.0, error: f64::NAN },
            Estimate { value: full.1, error: f64::NAN },
            Estimate { value: full.2, error: f64::NAN },
        )
    } else {
        let sizes: Vec<f64> = (0..k)
            .map(|b| crate::rng::BLOCK_SIZE.min(trials - b * crate::rng::BLOCK_SIZE) as f64)
            .collect();
        let n = trials as f64;
        let leave_out: Vec<(f64, f64, f64)> = (0..k)
            .map(|b| {
                let values: Vec<f64> = (0..graph.vertices)
                    .map(|i| (mc.mean[i] * n - blocks[b][i] * sizes[b]) / (n - sizes[b]))
                    .collect();
                derived(&values)
            })
            .collect::<Result<_, _>>()?;
        let jack = |pick: fn(&(f64, f64, f64)) -> f64, value: f64| {
            let mean = leave_out.iter().map(pick).sum::<f64>() / k as f64;
            let var = leave_out.iter().map(|t| (pick(t) - mean).powi(2)).sum::<f64>() * (k as f64 - 1.0) / k as f64;
            Estimate { value, error: var.sqrt() }
        };
        (jack(|t| t.0, full.0), jack(|t| t.1, full.1), jack(|t| t.2, full.2))
    };
    Ok(TorusTwoPoint {
        side,
        field,
        std_error,
        chi,
        xi_sq,
        triangle,
    })
}

/// Maps torus values to the box of radius `⌊L/2⌋`; for even `L` the antipodal layer is split
/// evenly between `±L/2`.
fn torus_to_box(graph: &PercGraph, values: &[f64]) -> Result<LatticeField, PercolationError> {
    let side = graph.torus_side.expect("torus graph");
    let dim = graph.coords[0].len();
    let radius = side / 2;
    let mut field = LatticeField::zeros(dim, radius);
    for (c, &v) in graph.coords.iter().zip(values) {
        // Every representative of the displacement in the box shares the value.
        let options: Vec<Vec<i32>> = c
            .iter()
            .map(|&a| {
                let a = a as usize;
                if 2 * a < side {
                    vec![a as i32]
                } else if 2 * a == side {
                    vec![a as i32, -(a as i32)]
                } else {
                    vec![a as i32 - side as i32]
                }
            })
            .collect();
        let count: usize = options.iter().map(|o| o.len()).product();
        let share = v / count as f64;
        let mut idx = vec![0usize; dim];
        loop {
            let x: Vec<i32> = idx.iter().zip(&options).map(|(i, o)| o[*i]).collect();
            let i = field.index_of(&x).expect("inside box");
            field.values_mut()[i] += share;
            let mut axis = 0;
            while axis < dim {
                idx[axis] += 1;
                if idx[axis] < options[axis].len() {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
            if axis == dim {
                break;
            }
        }
    }
    Ok(field)
}

/// Grid of `n` equally spaced `β` in `[0, β_max]`.
pub fn default_beta_grid(graph: &PercGraph, n: usize) -> Vec<f64> {
    linear_grid(0.0, graph.beta_max(), n)
}

fn describe(tracker: &mut ResidualTracker, graph: &PercGraph) {
    tracker
        .param("graph", &graph.name)
        .param("vertices", graph.vertices)
        .param("edges", graph.edges.len());
}

/// Exact check of `G_β(x) ≤ G_{β'}(x) + (β−β') Σ_{(u,v)} G_{β'}(0,u) J_{uv} G_β(v,x)` over all
/// pairs `β' ≤ β` of the grid.
pub fn check_i1_exact(exact: &ExactTwoPoint, betas: &[f64]) -> Result<InequalityReport, PercolationError> {
    let graph = &exact.graph;
    for &b in betas {
        graph.check_beta(b)?;
    }
    let mut tracker = ResidualTracker::new(
        "perc_I1",
        "G_b(0,x) <= G_b'(0,x) + (b-b') sum_{(u,v)} G_b'(0,u) J_uv G_b(v,x)",
        EXACT_TOL,
    );
    describe(&mut tracker, graph);
    let v = graph.vertices;
    let root = graph.root;
    let exact_betas: Vec<Rational> = betas.iter().map(|&b| rationalize(b)).collect();
    let matrices: Vec<Vec<Rational>> = exact_betas.iter().map(|b| exact.matrix(b)).collect();
    let directed: Vec<(usize, usize, Rational)> = graph
        .edges
        .iter()
        .flat_map(|e| [(e.a, e.b, e.weight_exact.clone()), (e.b, e.a, e.weight_exact.clone())])
        .collect();
    for (i, low) in matrices.iter().enumerate() {
        for (j, high) in matrices.iter().enumerate() {
            if betas[i] > betas[j] {
                continue;
            }
            let gap = &exact_betas[j] - &exact_betas[i];
            for x in 0..v {
                let cross = directed
                    .iter()
                    .fold(Rational::zero(), |acc, (a, b, w)| acc + &low[root * v + a] * w * &high[b * v + x]);
                let residual = &low[root * v + x] + &gap * cross - &high[root * v + x];
                tracker.observe(to_f64(&residual), || {
                    Location::pair(betas[i], betas[j]).with_label(format!("vertex {x}"))
                });
            }
        }
    }
    Ok(tracker.finish())
}

/// Exact check of `∂_βG_β(0,x) ≥ (G*(J − H)*G)(0,x)` with `H = (G*J*G)·G`, all convolutions
/// restricted to graph vertices.
pub fn check_i2_exact(exact: &ExactTwoPoint, betas: &[f64]) -> Result<InequalityReport, PercolationError> {
    let graph = &exact.graph;
    for &b in betas {
        graph.check_beta(b)?;
    }
    let mut tracker = ResidualTracker::new(
        "perc_I2",
        "dG_b(0,x)/db >= (G_b * (J - H_b) * G_b)(0,x), H_b = (G_b * J * G_b) G_b",
        EXACT_TOL,
    );
    describe(&mut tracker, graph);
    let v = graph.vertices;
    let root = graph.root;
    let directed: Vec<(usize, usize, f64)> = graph.directed().collect();
    for &beta in betas {
        let b = rationalize(beta);
        // Float evaluation of exact polynomials; all terms are products of probabilities.
        let g: Vec<f64> = exact.matrix(&b).iter().map(to_f64).collect();
        let dg: Vec<f64> = exact.derivative_matrix(&b).iter().map(to_f64).collect();
        let at = |a: usize, c: usize| g[a * v + c];
        // (G*J*G)(z, y) for all pairs.
        let gjg: Vec<f64> = (0..v * v)
            .into_par_iter()
            .map(|k| {
                let (z, y) = (k / v, k % v);
                directed.iter().map(|&(u, w, j)| at(z, u) * j * at(w, y)).sum()
            })
            .collect();
        for x in 0..v {
            let plus: f64 = directed.iter().map(|&(u, w, j)| at(root, u) * j * at(w, x)).sum();
            let mut minus = KahanSum::new();
            for z in 0..v {
                let gz = at(root, z);
                if gz == 0.0 {
                    continue;
                }
                for y in 0..v {
                    minus.add(gz * gjg[z * v + y] * at(z, y) * at(y, x));
                }
            }
            let residual = dg[root * v + x] - (plus - minus.value());
            tracker.observe(residual, || Location::at_beta(beta).with_label(format!("vertex {x}")));
        }
    }
    Ok(tracker.finish())
}

/// `∂_βG_β(root, x) ≥ 0` on a grid, from Russo's formula.
pub fn check_monotone(exact: &ExactTwoPoint, betas: &[f64]) -> InequalityReport {
    let mut tracker = ResidualTracker::new("perc_monotone", "dG_b(0,x)/db >= 0", 0.0);
    describe(&mut tracker, &exact.graph);
    for &beta in betas {
        let b = rationalize(beta);
        for x in 0..exact.graph.vertices {
            let d = exact.from_root(x).derivative().eval(&b);
            tracker.observe(to_f64(&d), || Location::at_beta(beta).with_label(format!("vertex {x}")));
        }
    }
    tracker.finish()
}

/// Fraction of configurations with a cluster wrapping around the torus in the first direction.
///
/// Auxiliary heuristic for locating the critical point by crossings in `L`.
pub fn wrapping_probability(kernel: &AdmissibleKernel, side: usize, beta: f64, trials: usize, seed: u64) -> Result<f64, PercolationError> {
    let graph = PercGraph::torus(kernel, side)?;
    graph.check_beta(beta)?;
    let v = graph.vertices;
    let probs: Vec<f64> = graph.edges.iter().map(|e| beta * e.weight).collect();
    let displacement: Vec<i32> = graph
        .edges
        .iter()
        .map(|e| {
            let d = graph.coords[e.b][0] - graph.coords[e.a][0];
            if d.abs() * 2 > side as i32 {
                d - d.signum() * side as i32
            } else {
                d
            }
        })
        .collect();
    let hits: usize = run_blocks(trials, seed, |rng, count| {
        let mut wraps = 0;
        for _ in 0..count {
            let open: Vec<bool> = probs.iter().map(|&p| rng.gen::<f64>() < p).collect();
            // Breadth-first search with unwrapped first coordinates; a vertex reached at two
            // different unwrapped positions witnesses a wrapping cycle.
            let mut adjacency: Vec<Vec<(usize, i32)>> = vec![Vec::new(); v];
            for ((e, &o), &d) in graph.edges.iter().zip(&open).zip(&displacement) {
                if o {
                    adjacency[e.a].push((e.b, d));
                    adjacency[e.b].push((e.a, -d));
                }
            }
            let mut seen: Vec<Option<i32>> = vec![None; v];
            let mut found = false;
            'outer: for start in 0..v {
                if seen[start].is_some() {
                    continue;
                }
                seen[start] = Some(0);
                let mut stack = vec![start];
                while let Some(a) = stack.pop() {
                    let pa = seen[a].expect("visited");
                    for &(b, d) in &adjacency[a] {
                        match seen[b] {
                            None => {
                                seen[b] = Some(pa + d);
                                stack.push(b);
                            }
                            Some(pb) if pb != pa + d => {
                                found = true;
                                break 'outer;
                            }
                            _ => {}
                        }
                    }
                }
            }
            wraps += found as usize;
        }
        wraps
    })
    .into_iter()
    .sum();
    Ok(hits as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{nearest_neighbour, rational, uniform_spread_out};

    #[test]
    fn single_edge_and_triangle_polynomials() {
        let e = two_point_exact(&PercGraph::single_edge()).unwrap();
        assert_eq!(e.from_root(1), &Poly::from_integers(&[0, 1]));
        assert_eq!(e.from_root(0), &Poly::from_integers(&[1]));
        let t = two_point_exact(&PercGraph::triangle(Rational::one())).unwrap();
        assert_eq!(t.from_root(1), &Poly::from_integers(&[0, 1, 1, -1]));
    }

    #[test]
    fn torus_ring_of_three_is_the_triangle() {
        let g = PercGraph::torus(&nearest_neighbour(1).unwrap(), 3).unwrap();
        assert_eq!(g.edges.len(), 3);
        let e = two_point_exact(&g).unwrap();
        // p = β/2.
        let p = Poly::monomial(rational(1, 2), 1);
        let expected = &(&p + &(&p * &p)) - &(&(&p * &p) * &p);
        assert_eq!(e.from_root(1), &expected);
        let k5 = PercGraph::torus(&uniform_spread_out(1, 2).unwrap(), 5).unwrap();
        assert_eq!(k5.edges.len(), 10);
        assert!(PercGraph::torus(&uniform_spread_out(1, 2).unwrap(), 4).is_err());
    }

    #[test]
    fn probabilities_sum_consistently() {
        // P[root ↔ x] summed over x equals E|C(root)|, and every polynomial is 1 at p = 1.
        let g = PercGraph::patch(&nearest_neighbour(2).unwrap(), 3);
        assert_eq!(g.edges.len(), 12);
        let e = two_point_exact(&g).unwrap();
        let full = rational(4, 1);
        for x in 0..g.vertices {
            assert_eq!(e.from_root(x).eval(&full), rational(1, 1));
            assert_eq!(e.from_root(x).eval(&rational(0, 1)), if x == g.root { rational(1, 1) } else { rational(0, 1) });
        }
    }

    #[test]
    fn mc_matches_exact() {
        let g = PercGraph::torus(&uniform_spread_out(1, 2).unwrap(), 5).unwrap();
        let e = two_point_exact(&g).unwrap();
        let mc = two_point_mc_graph(&g, 2.0, 20_000, 4).unwrap();
        for x in 0..g.vertices {
            let exact = e.from_root(x).eval_f64(2.0);
            assert!((mc.mean[x] - exact).abs() <= 4.0 * mc.std_error[x] + 1e-12, "x={x}");
        }
        let zero = two_point_mc_graph(&g, 0.0, 1000, 4).unwrap();
        assert_eq!(zero.mean, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_inequalities_hold() {
        let g = PercGraph::triangle(rational(1, 2));
        let e = two_point_exact(&g).unwrap();
        let grid = default_beta_grid(&g, 8);
        let r1 = check_i1_exact(&e, &grid).unwrap();
        assert!(r1.pass, "{r1}");
        let r2 = check_i2_exact(&e, &grid).unwrap();
        assert!(r2.pass, "{r2}");
        assert!(check_monotone(&e, &grid).pass);
        let single = two_point_exact(&PercGraph::single_edge()).unwrap();
        assert!(check_i2_exact(&single, &[0.0, 0.3, 1.0]).unwrap().pass);
    }

    #[test]
    fn i2_is_an_equality_at_zero() {
        let g = PercGraph::patch(&nearest_neighbour(2).unwrap(), 3);
        let e = two_point_exact(&g).unwrap();
        let r = check_i2_exact(&e, &[0.0]).unwrap();
        assert!(r.worst_residual.abs() < 1e-15);
    }

    #[test]
    fn fkg_on_a_patch() {
        let g = PercGraph::patch(&nearest_neighbour(2).unwrap(), 3);
        let e = two_point_exact(&g).unwrap();
        for beta in [0.5, 2.0, 3.5] {
            for (x, y) in [(0, 8), (1, 5), (2, 6)] {
                let joint = joint_connection(&g, beta, x, y).unwrap();
                let product = e.from_root(x).eval_f64(beta) * e.from_root(y).eval_f64(beta);
                assert!(joint >= product - 1e-15);
            }
        }
    }

    #[test]
    fn union_find_epochs() {
        let mut uf = UnionFind::new(4);
        uf.union(0, 1);
        uf.union(2, 3);
        assert_eq!(uf.component_size(0), 2);
        uf.reset();
        assert_eq!(uf.component_size(0), 1);
        assert_ne!(uf.find(0), uf.find(1));
    }

    #[test]
    fn torus_mc_basics() {
        let k = nearest_neighbour(2).unwrap();
        let res = two_point_mc(&k, 6, 0.0, 1000, 1).unwrap();
        assert_eq!(res.field.origin_value(), 1.0);
        assert_eq!(res.chi.value, 1.0);
        let res = two_point_mc(&k, 6, 0.8, 8192, 1).unwrap();
        assert!(res.chi.value > 1.0 && res.chi.error > 0.0);
        assert!((res.field.mass() - res.chi.value).abs() < 1e-9);
        assert!(res.triangle.value > 0.0);
    }

    #[test]
    fn wrapping_increases_with_beta() {
        let k = nearest_neighbour(2).unwrap();
        let low = wrapping_probability(&k, 8, 0.8, 4000, 2).unwrap();
        let high = wrapping_probability(&k, 8, 3.2, 4000, 2).unwrap();
        assert!(low < high);
        assert!(high > 0.9);
    }
}
