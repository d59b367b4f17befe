//! Acceptance criteria 1 to 10, one PASS/FAIL line each.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mflab::exact::Poly;
use mflab::green::green_identity_check;
use mflab::ising::{self, IsingVolume};
use mflab::kernels::{nearest_neighbour, rational, uniform_spread_out};
use mflab::numeric::linear_grid;
use mflab::observables::{green_observables, sigma_scaling_scan, OpenDiagram};
use mflab::percolation::{self, check_i1_exact, check_i2_exact, two_point_exact, two_point_mc_graph, PercGraph};
use mflab::rw::{certify_regular, empirical_box_occupancy, StepDistribution};
use mflab::saw;
use mflab::trees::{check_dg_identity, enumerate_trees};
use mflab::verifier::{check_convolution_lemmas, green_exponent_check};
use mflab::{AdmissibleKernel, InequalityReport};
use mflab_cli::artifacts::MANIFEST_NAME;
use mflab_cli::config::RunConfig;

type Outcome = Result<String, String>;

fn require(report: &InequalityReport) -> Result<(), String> {
    if report.pass {
        Ok(())
    } else {
        Err(report.summary_line())
    }
}

fn pairs_of(grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .enumerate()
        .flat_map(|(i, &lo)| grid[i..].iter().map(move |&hi| (lo, hi)))
        .collect()
}

fn green_kernels() -> Vec<AdmissibleKernel> {
    vec![
        nearest_neighbour(3).unwrap(),
        nearest_neighbour(4).unwrap(),
        uniform_spread_out(3, 2).unwrap(),
        uniform_spread_out(4, 2).unwrap(),
    ]
}

fn green_identities() -> Outcome {
    let pairs = [(0.0, 0.5), (0.3, 0.7), (0.6, 0.9)];
    let mut worst_identity = f64::INFINITY;
    let mut worst_exponent: f64 = 0.0;
    for k in green_kernels() {
        for (lo, hi) in pairs {
            let r = green_identity_check(&k, lo, hi, None).map_err(|e| e.to_string())?;
            require(&r)?;
            worst_identity = worst_identity.min(r.worst_residual);
        }
        let r = green_exponent_check(&k, &[0.0, 0.3, 0.5, 0.6, 0.7, 0.9], 1e-8).map_err(|e| e.to_string())?;
        require(&r)?;
        worst_exponent = worst_exponent.max(-r.worst_residual);
    }
    Ok(format!("12 identity checks, worst slack {worst_identity:.2e}; chi, xi^2 relative error {worst_exponent:.2e}"))
}

fn saw_inequalities() -> Outcome {
    let mut checks = 0;
    for d in [2usize, 3] {
        let k = nearest_neighbour(d).unwrap();
        for (lambda, q) in [(0.5, rational(1, 2)), (1.0, rational(1, 1))] {
            let series = saw::enumerate(&k, lambda, 8, None).map_err(|e| e.to_string())?;
            let grid = linear_grid(0.0, 0.5, 8);
            for r in [
                saw::check_i1_grid(&series, &pairs_of(&grid)).map_err(|e| e.to_string())?,
                saw::check_i2_grid(&series, &grid).map_err(|e| e.to_string())?,
            ] {
                require(&r)?;
                if r.tolerance != 0.0 || r.worst_residual < 0.0 || r.fitted["min_coefficient"] < 0.0 {
                    return Err(format!("not exact: {}", r.summary_line()));
                }
                checks += 1;
            }
            let two_d = rational(2 * d as i64, 1);
            let expected = (&two_d - rational(1, 1)) / &two_d + (rational(1, 1) - q) / &two_d;
            if series.total(2) != expected {
                return Err(format!("c_2 total {} != {expected} for d={d} lambda={lambda}", series.total(2)));
            }
        }
    }
    Ok(format!("{checks} exact checks with zero tolerance, c_2 totals match"))
}

fn percolation_oracle() -> Outcome {
    let triangle = PercGraph::triangle(rational(1, 1));
    let exact = two_point_exact(&triangle).map_err(|e| e.to_string())?;
    if *exact.from_root(1) != Poly::from_integers(&[0, 1, 1, -1]) {
        return Err("triangle two-point function is not p + p^2 - p^3".into());
    }
    let graphs = [
        triangle,
        PercGraph::torus(&uniform_spread_out(1, 2).unwrap(), 5).unwrap(),
        PercGraph::patch(&nearest_neighbour(2).unwrap(), 3),
    ];
    let mut worst_z: f64 = 0.0;
    for g in &graphs {
        if g.edges.len() > 14 {
            return Err(format!("{} has {} edges", g.name, g.edges.len()));
        }
        let exact = two_point_exact(g).map_err(|e| e.to_string())?;
        let grid = percolation::default_beta_grid(g, 16);
        for r in [
            check_i1_exact(&exact, &grid).map_err(|e| e.to_string())?,
            check_i2_exact(&exact, &grid).map_err(|e| e.to_string())?,
        ] {
            require(&r)?;
            if r.tolerance > 1e-12 {
                return Err(format!("tolerance {} above 1e-12", r.tolerance));
            }
        }
        for beta in [0.2, 0.5] {
            let mc = two_point_mc_graph(g, beta, 100_000, 7).map_err(|e| e.to_string())?;
            for x in 0..g.vertices {
                let diff = (mc.mean[x] - exact.from_root(x).eval_f64(beta)).abs();
                if diff > 3.0 * mc.std_error[x] + 1e-12 {
                    return Err(format!("{} beta={beta} x={x}: off by {diff:.3e}, stderr {:.3e}", g.name, mc.std_error[x]));
                }
                if mc.std_error[x] > 0.0 {
                    worst_z = worst_z.max(diff / mc.std_error[x]);
                }
            }
        }
    }
    Ok(format!("3 graphs exact I1/I2 on 16 points; largest MC deviation {worst_z:.2} sigma"))
}

fn ising_oracle() -> Outcome {
    let two = IsingVolume::rectangle(&nearest_neighbour(1).unwrap(), &[2]).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for beta in linear_grid(0.0, 2.0, 16) {
        let g = ising::two_point_exact(&two, beta, 1).map_err(|e| e.to_string())?;
        worst = worst.max((g - (0.5 * beta).tanh()).abs());
    }
    if worst > 1e-12 {
        return Err(format!("two-site correlation off tanh by {worst:.2e}"));
    }
    let grid = ising::default_beta_grid();
    for (d, shape) in [(2, "2x2"), (1, "chain6")] {
        let v = IsingVolume::from_shape(&nearest_neighbour(d).unwrap(), shape).map_err(|e| e.to_string())?;
        require(&ising::check_i1_grid(&v, &ising::grid_pairs(&grid)).map_err(|e| e.to_string())?)?;
        require(&ising::check_i2_grid(&v, &grid).map_err(|e| e.to_string())?)?;
    }
    Ok(format!("tanh to {worst:.1e}; 2x2 and chain6 pass I1/I2 on 16 points"))
}

fn lattice_trees() -> Outcome {
    let s = enumerate_trees(&nearest_neighbour(1).unwrap(), 2).map_err(|e| e.to_string())?;
    let expected = Poly {
        coeffs: vec![rational(1, 1), rational(1, 1), rational(3, 4)],
    };
    if s.one_point() != expected {
        return Err(format!("g_p = {:?}", s.one_point()));
    }
    let mut cases = 0;
    for d in [1, 2] {
        for b in 0..=4 {
            let series = enumerate_trees(&nearest_neighbour(d).unwrap(), b).map_err(|e| e.to_string())?;
            let r = check_dg_identity(&series);
            require(&r)?;
            if r.tolerance != 0.0 {
                return Err("dg identity not checked exactly".into());
            }
            cases += 1;
        }
    }
    Ok(format!("g_p = 1 + p + 3/4 p^2; dg identity exact in {cases} cases"))
}

fn effective_walk() -> Outcome {
    let mut certs = Vec::new();
    for k in [nearest_neighbour(3).unwrap(), uniform_spread_out(3, 2).unwrap()] {
        let step = StepDistribution::from_kernel(&k);
        let c = certify_regular(&step, (2.0 / k.c0()).exp()).map_err(|e| e.to_string())?;
        if c.c_reg < 2.0 || c.mgf_value > c.big_c_reg {
            return Err(format!("{}: c = {}, M = {}, C = {}", k.label(), c.c_reg, c.mgf_value, c.big_c_reg));
        }
        certs.push(format!("{} c={:.3}", k.label(), c.c_reg));
    }
    let step = StepDistribution::from_kernel(&nearest_neighbour(3).unwrap());
    let mut scaled = Vec::new();
    for m in [4usize, 16, 64] {
        let occ = empirical_box_occupancy(&step, m, 1_000_000, 31 + m as u64).map_err(|e| e.to_string())?;
        scaled.push((m as f64).powf(1.5) * occ.sup);
    }
    let ratio = scaled.iter().copied().fold(f64::MIN, f64::max) / scaled.iter().copied().fold(f64::MAX, f64::min);
    if ratio >= 2.5 {
        return Err(format!("m^(3/2) sup P varies by {ratio:.3}"));
    }
    Ok(format!("{}; m^(3/2) sup P = {scaled:.4?}, ratio {ratio:.3}", certs.join(", ")))
}

fn sigma_scaling() -> Outcome {
    let scan = sigma_scaling_scan(5, &[1, 2, 4, 8], 0.9, OpenDiagram::Bubble).map_err(|e| e.to_string())?;
    if (-6.0..=-4.0).contains(&scan.slope) {
        Ok(format!("slope {:.3}", scan.slope))
    } else {
        Err(format!("slope {:.3} outside [-6, -4]", scan.slope))
    }
}

fn gamma_nu() -> Outcome {
    let betas = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9];
    let mut worst: f64 = 0.0;
    for k in green_kernels() {
        let r = green_exponent_check(&k, &betas, 1e-8).map_err(|e| e.to_string())?;
        require(&r)?;
        worst = worst.max(-r.worst_residual);
    }
    let k = nearest_neighbour(3).unwrap();
    for beta in [0.3, 0.9] {
        let obs = green_observables(&k, beta, 4).map_err(|e| e.to_string())?;
        if obs.e.hi != 0.0 {
            return Err(format!("E = {:?} at beta={beta}", obs.e));
        }
    }
    Ok(format!("E = 0; chi(1-b) and xi^2(1-b)/sigma^2 equal 1 to {worst:.2e}"))
}

fn convolution_lemmas() -> Outcome {
    let reports = check_convolution_lemmas(3, 50, 2024).map_err(|e| e.to_string())?;
    for r in &reports {
        require(r)?;
    }
    Ok(reports
        .iter()
        .map(|r| format!("{}: {} evaluations, worst residual {:.3}", r.name, r.evaluations, r.worst_residual))
        .collect::<Vec<_>>()
        .join("; "))
}

fn reproducibility() -> Outcome {
    let run_once = || -> Result<String, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = RunConfig {
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        mflab_cli::run(&cfg, None).map_err(|e| format!("{e:#}"))?;
        std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).map_err(|e| e.to_string())
    };
    let first = run_once()?;
    let second = run_once()?;
    let files = first.lines().filter(|l| !l.starts_with('#')).count();
    if first == second {
        Ok(format!("{files} files hash-identical across two runs"))
    } else {
        Err("MANIFESTs differ".into())
    }
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("Green identities", green_identities, Duration::from_secs(60)),
        ("SAW inequalities", saw_inequalities, Duration::from_secs(120)),
        ("percolation oracle", percolation_oracle, Duration::from_secs(180)),
        ("Ising oracle", ising_oracle, Duration::from_secs(60)),
        ("lattice trees", lattice_trees, Duration::from_secs(120)),
        ("effective walk", effective_walk, Duration::from_secs(300)),
        ("sigma scaling", sigma_scaling, Duration::from_secs(600)),
        ("gamma/nu sandwich", gamma_nu, Duration::from_secs(60)),
        ("convolution lemmas", convolution_lemmas, Duration::from_secs(120)),
        ("reproducibility", reproducibility, Duration::ZERO),
    ];
    let mut failures = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let over = !budget.is_zero() && elapsed > *budget;
        let (pass, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over the {}s budget", budget.as_secs())),
            Err(e) => (false, e),
        };
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {} [{:.1}s] {detail}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
