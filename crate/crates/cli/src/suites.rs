//! The check suites: each turns a configuration into reports, tables and plot data.

use anyhow::{anyhow, bail, Context, Result};
use mflab::exact::{to_f64, Poly};
use mflab::green::{green_function_with, green_identity_check, GreenOptions};
use mflab::ising::{self, IsingVolume};
use mflab::kernels::{nearest_neighbour, rational, uniform_spread_out};
use mflab::numeric::linear_grid;
use mflab::observables::{self, beta_of_delta, compute, ErrorSweep, Model, Observables};
use mflab::percolation::{self, check_i1_exact, check_i2_exact, two_point_exact, two_point_mc, two_point_mc_graph, PercGraph};
use mflab::report::{Location, ResidualTracker};
use mflab::rw::{certify_regular, empirical_box_occupancy, StepDistribution};
use mflab::saw;
use mflab::trees::{self, check_dg_identity, check_i1_lt, check_i2_lt, enumerate_trees, BetaMap};
use mflab::verifier::{
    check_chi_sandwich, check_convolution_lemmas, check_initialisation, check_iterated_sl, check_main_bound,
    check_stability, check_xi_chi_comparison, check_z_bounds, fit_green_constants, gamma_nu_check,
    green_exponent_check, BoundSample, ExpansionForm, VerifierError,
};
use mflab::{AdmissibleKernel, InequalityReport, KernelSpec, LatticeField};

use crate::artifacts::{num, Artifact, Provenance, Table};
use crate::config::{IsingConfig, RunConfig};

/// Everything one suite produced.
#[derive(Debug, Default)]
pub struct SuiteOutput {
    pub reports: Vec<(String, InequalityReport)>,
    pub artifacts: Vec<Artifact>,
}

impl SuiteOutput {
    fn report(&mut self, id: impl Into<String>, report: InequalityReport, module: &str, operation: &str) {
        let id = id.into();
        self.artifacts.push(Artifact::report(&id, &report, module, operation));
        self.reports.push((id, report));
    }

    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|(_, r)| r.pass)
    }
}

pub fn run_suite(name: &str, cfg: &RunConfig) -> Result<SuiteOutput> {
    match name {
        "green-identities" => green_identities(cfg),
        "green-exponents" => green_exponents(cfg),
        "rw" => random_walk(cfg),
        "saw" => self_avoiding_walk(cfg),
        "perc" => percolation_suite(cfg),
        "ising" => ising_suite(cfg),
        "lt" => lattice_trees(cfg),
        "observe" => observe(cfg),
        "bounds" => bounds(cfg),
        "lemmas" => lemmas(cfg),
        "sigma-scaling" => sigma_scaling(cfg),
        other => bail!("unknown suite `{other}`"),
    }
}

/// Distinct, reproducible seed per suite.
fn suite_seed(seed: u64, suite: &str) -> u64 {
    suite.bytes().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn kernel_tag(k: &KernelSpec) -> String {
    match k.family {
        mflab::kernels::KernelFamily::NearestNeighbour => format!("nn-d{}", k.d),
        _ => format!("so-d{}-r{}", k.d, k.range),
    }
}

fn model_tag(model: &Model) -> String {
    match model {
        Model::Saw { lambda } => format!("saw-l{lambda}"),
        other => other.id(),
    }
}

fn build(k: &KernelSpec) -> Result<AdmissibleKernel> {
    k.build().with_context(|| format!("building kernel {k}"))
}

fn pairs_of(grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .enumerate()
        .flat_map(|(i, &lo)| grid[i..].iter().map(move |&hi| (lo, hi)))
        .collect()
}

fn green_identities(cfg: &RunConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    for spec in &cfg.green.kernels {
        let kernel = build(spec)?;
        for [lo, hi] in &cfg.green.pairs {
            let rep = green_identity_check(&kernel, *lo, *hi, cfg.green.order)?;
            out.report(
                format!("green-identity_{}_{lo}_{hi}", kernel_tag(spec)),
                rep,
                "green",
                "green_identity_check",
            );
        }
    }
    Ok(out)
}

fn green_exponents(cfg: &RunConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    for spec in &cfg.green.kernels {
        let kernel = build(spec)?;
        let rep = green_exponent_check(&kernel, &cfg.green.exponent_betas, cfg.green.exponent_tol)?;
        out.report(format!("green-exponents_{}", kernel_tag(spec)), rep, "verifier", "green_exponent_check");
    }
    Ok(out)
}

fn random_walk(cfg: &RunConfig) -> Result<SuiteOutput> {
    let rw = &cfg.rw;
    let mut out = SuiteOutput::default();
    for spec in &rw.kernels {
        let kernel = build(spec)?;
        let step = StepDistribution::from_kernel(&kernel);
        let target = (2.0 / kernel.c0()).exp();
        let mut t = ResidualTracker::new("rw_regular", "M(c) <= C with c >= 2 and C = exp(2/c0)", 0.0);
        t.param("kernel", kernel.label()).param("C_target", target);
        match certify_regular(&step, target) {
            Ok(cert) => {
                t.fitted("c_reg", cert.c_reg).fitted("mgf", cert.mgf_value);
                t.observe(cert.c_reg - 2.0, || Location::default().with_label("c_reg - 2"));
                t.observe(cert.big_c_reg - cert.mgf_value, || Location::default().with_label("C - M(c)"));
            }
            Err(e) => {
                t.note(e.to_string());
                t.observe(f64::NEG_INFINITY, || Location::default().with_label("no certificate"));
            }
        }
        out.report(format!("rw-regular_{}", kernel_tag(spec)), t.finish(), "rw", "certify_regular");
    }

    if !rw.steps.is_empty() {
        let kernel = build(&rw.occupancy_kernel)?;
        let step = StepDistribution::from_kernel(&kernel);
        let seed = suite_seed(cfg.seed, "rw");
        let dim = kernel.dim() as f64;
        let mut table = Table::new(&["m", "trials", "sup", "std_error", "scaled"]);
        let mut plot = Vec::new();
        let mut scaled = Vec::new();
        for &m in &rw.steps {
            let occ = empirical_box_occupancy(&step, m, rw.trials, seed.wrapping_add(m as u64))?;
            let s = (m as f64).powf(dim / 2.0) * occ.sup;
            table.push(vec![m.to_string(), rw.trials.to_string(), num(occ.sup), num(occ.std_error), num(s)]);
            plot.push(("scaled_sup".to_string(), m as f64, s));
            scaled.push(s);
        }
        let max = scaled.iter().copied().fold(f64::MIN, f64::max);
        let min = scaled.iter().copied().fold(f64::MAX, f64::min);
        let mut t = ResidualTracker::new(
            "rw_anticoncentration",
            "max_m / min_m of m^(d/2) sup_y P[X_m in B_sigma(y)] stays below the allowed ratio",
            0.0,
        );
        t.param("kernel", kernel.label())
            .param("steps", format!("{:?}", rw.steps))
            .param("trials", rw.trials)
            .param("max_ratio", rw.max_ratio)
            .fitted("ratio", max / min);
        t.observe(rw.max_ratio - max / min, || Location::default().with_label("ratio"));
        out.report(format!("rw-occupancy_{}", kernel_tag(&rw.occupancy_kernel)), t.finish(), "rw", "empirical_box_occupancy");
        let prov = Provenance::new("rw", "empirical_box_occupancy")
            .with("kernel", kernel.label())
            .with("trials", rw.trials)
            .with("seed", seed);
        out.artifacts.push(Artifact::table("rw_occupancy", table, prov.clone()));
        out.artifacts.push(Artifact::plot("rw_occupancy", &plot, prov));
    }
    Ok(out)
}

fn self_avoiding_walk(cfg: &RunConfig) -> Result<SuiteOutput> {
    let s = &cfg.saw;
    let mut out = SuiteOutput::default();
    let grid = linear_grid(0.0, s.beta_max, s.grid_points);
    let pairs = pairs_of(&grid);
    for &d in &s.dims {
        let kernel = nearest_neighbour(d)?;
        for &lambda in &s.lambdas {
            let series = saw::enumerate(&kernel, lambda, s.order, None)?;
            let tag = format!("d{d}_l{lambda}");
            out.report(format!("saw-i1_{tag}"), saw::check_i1_grid(&series, &pairs)?, "saw", "check_i1_truncated");
            out.report(format!("saw-i2_{tag}"), saw::check_i2_grid(&series, &grid)?, "saw", "check_i2_truncated");

            let mut t = ResidualTracker::new("saw_two_step_total", "sum_x c_2(x) = (2d-1)/(2d) + (1-lambda)/(2d)", 0.0);
            t.param("d", d).param("lambda", lambda);
            if s.order >= 2 {
                let two_d = rational(2 * d as i64, 1);
                let lam = series.lambda_exact().clone();
                let expected = (&two_d - rational(1, 1)) / &two_d + (rational(1, 1) - lam) / &two_d;
                let got = series.total(2);
                let diff = to_f64(&(&got - &expected));
                t.observe(if got == expected { 0.0 } else { -diff.abs().max(f64::MIN_POSITIVE) }, || {
                    Location::default().with_label("c_2 total")
                });
            }
            out.report(format!("saw-c2_{tag}"), t.finish(), "saw", "enumerate");

            let mut table = Table::new(&["n", "total"]);
            for n in 0..=s.order {
                table.push(vec![n.to_string(), series.total(n).to_string()]);
            }
            let prov = Provenance::new("saw", "enumerate")
                .with("kernel", kernel.label())
                .with("lambda", lambda)
                .with("order", s.order);
            out.artifacts.push(Artifact::table(&format!("saw_totals_{tag}"), table, prov));
        }
    }
    Ok(out)
}

/// The oracle graphs by name.
pub fn perc_graph(name: &str) -> Result<PercGraph> {
    Ok(match name {
        "triangle" => PercGraph::triangle(rational(1, 1)),
        "k5" => PercGraph::torus(&uniform_spread_out(1, 2)?, 5)?,
        "patch3" => PercGraph::patch(&nearest_neighbour(2)?, 3),
        other => bail!("unknown graph `{other}`"),
    })
}

fn percolation_suite(cfg: &RunConfig) -> Result<SuiteOutput> {
    let p = &cfg.perc;
    let mut out = SuiteOutput::default();
    let seed = suite_seed(cfg.seed, "perc");
    for name in &p.graphs {
        let graph = perc_graph(name)?;
        let exact = two_point_exact(&graph)?;
        let grid = percolation::default_beta_grid(&graph, p.grid_points);
        out.report(format!("perc-i1_{name}"), check_i1_exact(&exact, &grid)?, "percolation", "check_i1_exact");
        out.report(format!("perc-i2_{name}"), check_i2_exact(&exact, &grid)?, "percolation", "check_i2_exact");

        if name == "triangle" {
            let mut t = ResidualTracker::new("perc_triangle_closed_form", "G(0,x) = p + p^2 - p^3 on the triangle", 0.0);
            let expected = Poly::from_integers(&[0, 1, 1, -1]);
            for x in 1..graph.vertices {
                t.observe(if *exact.from_root(x) == expected { 0.0 } else { -1.0 }, || {
                    Location::default().with_label(format!("vertex {x}"))
                });
            }
            out.report("perc-closed-form_triangle", t.finish(), "percolation", "two_point_exact");
        }

        let mut t = ResidualTracker::new(
            "perc_mc_oracle",
            "|G_mc(x) - G_exact(x)| <= k * stderr(x)",
            0.0,
        );
        t.param("graph", &graph.name).param("trials", p.trials).param("sigmas", p.sigmas).param("seed", seed);
        let mut table = Table::new(&["beta", "vertex", "exact", "mc", "std_error"]);
        for &beta in &p.mc_betas {
            let mc = two_point_mc_graph(&graph, beta, p.trials, seed)?;
            for x in 0..graph.vertices {
                let e = exact.from_root(x).eval_f64(beta);
                let allowed = p.sigmas * mc.std_error[x] + 1e-12;
                t.observe((allowed - (mc.mean[x] - e).abs()) / allowed, || Location::at_beta(beta).with_label(format!("vertex {x}")));
                table.push(vec![num(beta), x.to_string(), num(e), num(mc.mean[x]), num(mc.std_error[x])]);
            }
        }
        out.report(format!("perc-mc_{name}"), t.finish(), "percolation", "two_point_mc_graph");
        let prov = Provenance::new("percolation", "two_point_mc_graph")
            .with("graph", name)
            .with("trials", p.trials)
            .with("seed", seed);
        out.artifacts.push(Artifact::table(&format!("perc_mc_{name}"), table, prov));
    }
    Ok(out)
}

fn ising_suite(cfg: &RunConfig) -> Result<SuiteOutput> {
    let c = &cfg.ising;
    let mut out = SuiteOutput::default();

    let chain = IsingVolume::rectangle(&nearest_neighbour(1)?, &[2])?;
    let mut t = ResidualTracker::new("ising_two_site", "<s0 s1> = tanh(beta J) for two coupled sites", 1e-12);
    for beta in linear_grid(0.0, c.beta_max, c.grid_points) {
        let g = ising::two_point_exact(&chain, beta, 1)?;
        t.observe(-(g - (beta * 0.5).tanh()).abs(), || Location::at_beta(beta));
    }
    out.report("ising-two-site", t.finish(), "ising", "two_point_exact");

    let grid = linear_grid(0.0, c.beta_max, c.grid_points);
    let pairs = pairs_of(&grid);
    for shape in &c.volumes {
        let dim = IsingConfig::shape_dim(shape).ok_or_else(|| anyhow!("bad shape `{shape}`"))?;
        let volume = IsingVolume::from_shape(&nearest_neighbour(dim)?, shape)?;
        out.report(format!("ising-i1_{shape}"), ising::check_i1_grid(&volume, &pairs)?, "ising", "check_i1");
        out.report(format!("ising-i2_{shape}"), ising::check_i2_grid(&volume, &grid)?, "ising", "check_i2");
    }
    Ok(out)
}

fn lattice_trees(cfg: &RunConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    for &[d, b] in &cfg.lt.cases {
        let series = enumerate_trees(&nearest_neighbour(d)?, b)?;
        let tag = format!("d{d}_b{b}");
        out.report(format!("lt-dg_{tag}"), check_dg_identity(&series), "trees", "check_dg_identity");
        if d == 1 && b == 2 {
            let mut t = ResidualTracker::new("lt_one_point", "g_p = 1 + p + (3/4) p^2 for d = 1, B = 2", 0.0);
            let expected = Poly {
                coeffs: vec![rational(1, 1), rational(1, 1), rational(3, 4)],
            };
            t.observe(if series.one_point() == expected { 0.0 } else { -1.0 }, Location::default);
            out.report(format!("lt-one-point_{tag}"), t.finish(), "trees", "enumerate_trees");
        }
        if b >= 1 {
            let map = BetaMap::new(&series);
            let grid = trees::default_beta_grid(&map, cfg.lt.grid_points);
            out.report(format!("lt-i1_{tag}"), check_i1_lt(&series, &map, &pairs_of(&grid))?, "trees", "check_i1_lt");
            out.report(format!("lt-i2_{tag}"), check_i2_lt(&series, &map, &grid)?, "trees", "check_i2_lt");
        }
        let mut table = Table::new(&["degree", "one_point", "chi_hat"]);
        let (g, chi) = (series.one_point(), series.chi_hat());
        for k in 0..=b {
            table.push(vec![k.to_string(), g.coeff(k).to_string(), chi.coeff(k).to_string()]);
        }
        let prov = Provenance::new("trees", "enumerate_trees").with("d", d).with("max_bonds", b);
        out.artifacts.push(Artifact::table(&format!("lt_series_{tag}"), table, prov));
    }
    Ok(out)
}

/// Two-point fields of the configured model along its `β` grid, with their observables.
pub struct ModelSweep {
    pub model: Model,
    pub kernel: AdmissibleKernel,
    pub fields: Vec<(f64, LatticeField)>,
    /// Largest Monte Carlo standard error of each field; zero for exact fields.
    pub noise: Vec<f64>,
    pub sweep: ErrorSweep,
    pub provenance: Provenance,
}

pub fn model_sweep(cfg: &RunConfig) -> Result<ModelSweep> {
    let o = &cfg.observe;
    let model = cfg.model.model();
    let kernel = build(&cfg.kernel)?;
    let seed = suite_seed(cfg.seed, "observe");
    let mut provenance = Provenance::new("observables", "compute")
        .with("model", model.id())
        .with("kernel", kernel.label())
        .with("grid_points", o.grid_points);
    let grid = |cap: f64| observables::default_beta_grid(o.beta_max.min(cap), o.grid_points);

    let mut fields = Vec::new();
    let mut noise = Vec::new();
    let mut points = Vec::new();
    match &model {
        Model::Green => {
            provenance = provenance.with("radius", o.radius);
            for beta in grid(1.0) {
                let green = green_function_with(&kernel, beta, &GreenOptions::default())?;
                let field = green.field(o.radius)?;
                let mut obs = compute(&model, &field, &kernel, beta)?;
                obs.chi = green.chi();
                obs.xi_sq = green.xi_sq();
                points.push(obs);
                fields.push((beta, field));
            }
        }
        Model::Saw { lambda } => {
            let series = saw::enumerate(&kernel, *lambda, o.saw_order, None)?;
            let cap = 0.9 * saw::critical_estimate(&series).beta_c_lower;
            provenance = provenance.with("order", o.saw_order).with("beta_cap", cap);
            for beta in grid(cap) {
                let field = saw::eval(&series, beta)?;
                points.push(compute(&model, &field, &kernel, beta)?);
                fields.push((beta, field));
            }
        }
        Model::Percolation => {
            provenance = provenance.with("torus_side", o.torus_side).with("trials", o.trials).with("seed", seed);
            for beta in grid(f64::INFINITY) {
                let mc = two_point_mc(&kernel, o.torus_side, beta, o.trials, seed)?;
                let field = mc.field.uncertified();
                points.push(compute(&model, &field, &kernel, beta)?);
                fields.push((beta, field));
                noise.push(mc.std_error.values().iter().copied().fold(0.0, f64::max));
            }
        }
        Model::Ising => {
            provenance = provenance.with("half_width", o.ising_half_width);
            for beta in grid(f64::INFINITY) {
                let field = ising::centred_two_point(&kernel, o.ising_half_width, beta)?;
                points.push(compute(&model, &field, &kernel, beta)?);
                fields.push((beta, field));
            }
        }
        Model::LatticeTrees => {
            let series = enumerate_trees(&kernel, o.tree_bonds)?;
            let map = BetaMap::new(&series);
            provenance = provenance.with("max_bonds", o.tree_bonds).with("beta_cap", map.beta_max);
            for beta in grid(map.beta_max) {
                let field = trees::two_point_beta(&series, &map, beta)?.uncertified();
                points.push(compute(&model, &field, &kernel, beta)?);
                fields.push((beta, field));
            }
        }
    }
    Ok(ModelSweep {
        model,
        kernel,
        noise: if noise.is_empty() { vec![0.0; fields.len()] } else { noise },
        fields,
        sweep: ErrorSweep::new(points),
        provenance,
    })
}

fn observables_table(points: &[Observables]) -> Vec<u8> {
    let mut bytes = Observables::CSV_HEADER.as_bytes().to_vec();
    bytes.push(b'\n');
    for p in points {
        bytes.extend_from_slice(p.csv_row().as_bytes());
        bytes.push(b'\n');
    }
    bytes
}

fn observe(cfg: &RunConfig) -> Result<SuiteOutput> {
    let ms = model_sweep(cfg)?;
    let tag = model_tag(&ms.model);
    let mut out = SuiteOutput::default();
    out.artifacts.push(Artifact {
        path: format!("tables/observables_{tag}.csv"),
        bytes: observables_table(&ms.sweep.points),
        provenance: ms.provenance.clone(),
    });
    let mut plot = Vec::new();
    for p in &ms.sweep.points {
        for (series, v) in [
            ("chi", p.chi.mid()),
            ("xi_sq", p.xi_sq.mid()),
            ("open_bubble", p.open_bubble.mid()),
            ("open_triangle", p.open_triangle.mid()),
            ("E_lo", p.e.lo),
            ("E_hi", p.e.hi),
            ("one_point", p.one_point),
        ] {
            plot.push((series.to_string(), p.beta, v));
        }
    }
    out.artifacts.push(Artifact::plot(&format!("observables_{tag}"), &plot, ms.provenance.clone()));

    let mut table = Table::new(&["delta", "beta_delta", "saturated", "certified"]);
    for delta in [0.01, 0.05, 0.1, 0.2, 0.5] {
        let bd = beta_of_delta(&ms.sweep, delta)?;
        table.push(vec![num(delta), num(bd.beta), bd.saturated.to_string(), bd.certified.to_string()]);
    }
    out.artifacts.push(Artifact::table(
        &format!("beta_of_delta_{tag}"),
        table,
        Provenance::new("observables", "beta_of_delta").with("model", ms.model.id()),
    ));
    Ok(out)
}

fn bounds(cfg: &RunConfig) -> Result<SuiteOutput> {
    let ms = model_sweep(cfg)?;
    let b = &cfg.bounds;
    let tag = model_tag(&ms.model);
    let mut out = SuiteOutput::default();
    let kernel = &ms.kernel;

    out.report(format!("chi-sandwich_{tag}"), check_chi_sandwich(&ms.sweep), "verifier", "check_chi_sandwich");
    out.report(format!("xi-chi_{tag}"), check_xi_chi_comparison(&ms.sweep), "verifier", "check_xi_chi_comparison");
    out.report(format!("z-bounds_{tag}"), check_z_bounds(&ms.sweep), "verifier", "check_z_bounds");
    out.report(
        format!("gamma-nu_{tag}"),
        gamma_nu_check(&ms.sweep, kernel.sigma_sq(), b.delta)?,
        "verifier",
        "gamma_nu_check",
    );

    for (i, w) in ms.fields.windows(2).enumerate() {
        let ((lo, g_lo), (hi, g_hi)) = (&w[0], &w[1]);
        for (form, label) in [(ExpansionForm::Steps(1), "n1"), (ExpansionForm::Steps(3), "n3"), (ExpansionForm::Infinite, "inf")] {
            match check_iterated_sl(kernel, *lo, g_lo, *hi, g_hi, form) {
                Ok(mut rep) => {
                    let z = (hi - lo) * ms.sweep.points[i].chi.mid();
                    allow_noise(&mut rep, 3.0 * (ms.noise[i] + ms.noise[i + 1]) * (1.0 + z));
                    out.report(format!("iterated-sl_{tag}_{label}_{i}"), rep, "verifier", "check_iterated_sl")
                }
                Err(VerifierError::NotContracting { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    let samples = ms
        .fields
        .iter()
        .map(|(beta, g)| BoundSample::from_two_point(kernel, *beta, g))
        .collect::<Result<Vec<_>, _>>()?;
    let positive: Vec<BoundSample> = samples.iter().filter(|s| s.beta > 0.0).cloned().collect();
    if !positive.is_empty() {
        out.report(format!("stability_{tag}"), check_stability(&positive)?, "verifier", "check_stability");
    }

    let green = fit_green_constants(kernel, &b.betas, b.radius)?;
    let green_samples = b
        .betas
        .iter()
        .map(|&beta| {
            let opts = GreenOptions {
                radius: Some(b.radius),
                ..Default::default()
            };
            let mut field = green_function_with(kernel, beta, &opts)?.field(b.radius)?;
            let origin = field.len() / 2;
            field.values_mut()[origin] -= 1.0;
            Ok(BoundSample {
                beta,
                field,
                xi_sq: kernel.sigma_sq() / (1.0 - beta),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.report("green-bound", check_main_bound(&green, kernel, &green_samples), "verifier", "fit_green_constants");
    let mut table = Table::new(&["c", "big_c"]);
    for (c, big_c) in &green.table {
        table.push(vec![num(*c), num(*big_c)]);
    }
    out.artifacts.push(Artifact::table(
        "green_bound_fit",
        table,
        Provenance::new("verifier", "fit_green_constants")
            .with("kernel", kernel.label())
            .with("radius", b.radius)
            .with("c_fit", green.c_fit)
            .with("C_fit", green.big_c_fit),
    ));

    let bd = beta_of_delta(&ms.sweep, b.delta)?;
    let init: Vec<(f64, LatticeField, f64)> = ms
        .fields
        .iter()
        .zip(&samples)
        .map(|((beta, g), s)| (*beta, g.clone(), s.xi_sq))
        .collect();
    out.report(
        format!("initialisation_{tag}"),
        check_initialisation(&green, kernel, b.delta, bd.beta, &init),
        "verifier",
        "check_initialisation",
    );
    Ok(out)
}

/// Widens a report's tolerance to cover sampling noise in its inputs.
fn allow_noise(rep: &mut InequalityReport, tol: f64) {
    if tol > 0.0 {
        rep.tolerance = rep.tolerance.max(tol);
        rep.pass = rep.worst_residual >= -rep.tolerance;
        rep.notes.push(format!("Monte Carlo inputs; tolerance is 3 standard errors scaled by 1 + Z: {tol:e}"));
    }
}

fn lemmas(cfg: &RunConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    let seed = suite_seed(cfg.seed, "lemmas");
    for rep in check_convolution_lemmas(cfg.lemmas.dim, cfg.lemmas.instances, seed)? {
        let id = format!("lemma-{}_d{}", rep.name, cfg.lemmas.dim);
        out.report(id, rep, "verifier", "check_convolution_lemmas");
    }
    Ok(out)
}

fn sigma_scaling(cfg: &RunConfig) -> Result<SuiteOutput> {
    let sc = &cfg.scaling;
    let scan = observables::sigma_scaling_scan(sc.dim, &sc.ranges, sc.beta, sc.diagram.into())?;
    let d = sc.dim as f64;
    let mut t = ResidualTracker::new("sigma_scaling", "log-log slope of the open diagram against sigma_J lies in [-d - w, -d + w]", 0.0);
    t.param("dim", sc.dim)
        .param("beta", sc.beta)
        .param("diagram", format!("{:?}", scan.diagram))
        .param("ranges", format!("{:?}", sc.ranges))
        .fitted("slope", scan.slope)
        .fitted("intercept", scan.intercept);
    t.observe(sc.slope_width - (scan.slope + d).abs(), || Location::default().with_label("slope"));
    let mut out = SuiteOutput::default();
    out.report(format!("sigma-scaling_d{}", sc.dim), t.finish(), "observables", "sigma_scaling_scan");

    let prov = Provenance::new("observables", "sigma_scaling_scan")
        .with("dim", sc.dim)
        .with("beta", sc.beta)
        .with("diagram", format!("{:?}", scan.diagram));
    let mut table = Table::new(&["range", "sigma", "value_lo", "value_hi"]);
    let mut plot = Vec::new();
    for p in &scan.points {
        table.push(vec![p.range.to_string(), num(p.sigma), num(p.value.lo), num(p.value.hi)]);
        plot.push(("diagram".to_string(), p.sigma, p.value.mid()));
        plot.push(("fit".to_string(), p.sigma, (scan.intercept + scan.slope * p.sigma.ln()).exp()));
    }
    out.artifacts.push(Artifact::table("sigma_scaling", table, prov.clone()));
    out.artifacts.push(Artifact::plot("sigma_scaling", &plot, prov));
    Ok(out)
}
