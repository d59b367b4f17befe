use mflab::conv::convolve;
use mflab::exact::rationalize;
use mflab::green::{green_function, green_function_with, GreenOptions};
use mflab::ising::{correlations, IsingVolume};
use mflab::kernels::{nearest_neighbour, rational, spread_out_sigma_sq, to_f64, uniform_spread_out};
use mflab::lattice::LatticeField;
use mflab::observables::{compute, second_moment_identity_residual, ErrorSweep, Model, ZFactor};
use mflab::percolation::{joint_connection, two_point_exact, PercGraph};
use mflab::saw;
use mflab::Interval;
use proptest::prelude::*;

fn small_field(dim: usize, radius: usize) -> impl Strategy<Value = LatticeField> {
    let n = (2 * radius + 1).pow(dim as u32);
    prop::collection::vec(0.0f64..1.0, n).prop_map(move |v| LatticeField::from_values(dim, radius, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_commutes_and_multiplies_mass(f in small_field(2, 2), g in small_field(2, 1)) {
        let fg = convolve(&f, &g).unwrap();
        let gf = convolve(&g, &f).unwrap();
        prop_assert!(fg.max_abs_diff(&gf) < 1e-12);
        prop_assert!((fg.mass() - f.mass() * g.mass()).abs() < 1e-10 * (1.0 + fg.mass()));
    }

    #[test]
    fn symmetrize_is_idempotent(f in small_field(2, 2)) {
        let s = f.symmetrize();
        prop_assert!(s.is_symmetric(1e-14));
        prop_assert!(s.symmetrize().max_abs_diff(&s) < 1e-14);
        prop_assert!((s.mass() - f.mass()).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip(f in small_field(3, 1)) {
        let back = LatticeField::from_bytes(&f.to_bytes()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn resizing_keeps_mass_plus_tail(f in small_field(2, 3), r in 0usize..3) {
        let small = f.resized(r);
        prop_assert!((small.mass() + small.tail_bound() - f.mass()).abs() < 1e-12);
    }

    #[test]
    fn spread_out_kernels_are_normalised(dim in 1usize..4, range in 1u32..4) {
        let k = uniform_spread_out(dim, range).unwrap();
        prop_assert!((k.field().mass() - 1.0).abs() < 1e-12);
        prop_assert!((k.sigma_sq() - to_f64(&spread_out_sigma_sq(dim, range))).abs() < 1e-10);
        prop_assert_eq!(k.field().origin_value(), 0.0);
    }

    #[test]
    fn second_moment_identity(g in small_field(2, 3)) {
        let k = nearest_neighbour(2).unwrap();
        prop_assert!(second_moment_identity_residual(&g, &k).unwrap() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn green_susceptibility_is_geometric(beta in 0.0f64..0.85) {
        let k = nearest_neighbour(3).unwrap();
        let g = green_function_with(&k, beta, &GreenOptions::default()).unwrap();
        prop_assert!(g.chi().rel_error(1.0 / (1.0 - beta)) < 1e-8);
    }

    #[test]
    fn green_is_monotone_in_beta(b1 in 0.0f64..0.8, b2 in 0.0f64..0.8) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let k = nearest_neighbour(2).unwrap();
        let g_lo = green_function(&k, lo, 150).unwrap().field(4).unwrap();
        let g_hi = green_function(&k, hi, 150).unwrap().field(4).unwrap();
        for ((_, a), (_, b)) in g_lo.iter().zip(g_hi.iter()) {
            prop_assert!(a <= b + 1e-12);
        }
    }

    #[test]
    fn saw_totals_are_submultiplicative(lambda in 0.0f64..=1.0) {
        let k = nearest_neighbour(2).unwrap();
        let series = saw::enumerate(&k, lambda, 8, None).unwrap();
        let c: Vec<_> = (0..=8).map(|n| series.total(n)).collect();
        for n in 1..=4 {
            for m in 1..=(8 - n) {
                prop_assert!(c[n + m] <= &c[n] * &c[m], "c_{}+{} > c_{} c_{}", n, m, n, m);
            }
        }
    }

    #[test]
    fn saw_totals_decrease_in_lambda(l1 in 0.0f64..=1.0, l2 in 0.0f64..=1.0) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let k = nearest_neighbour(2).unwrap();
        let a = saw::enumerate(&k, lo, 7, None).unwrap();
        let b = saw::enumerate(&k, hi, 7, None).unwrap();
        for n in 0..=7 {
            prop_assert!(b.total(n) <= a.total(n));
        }
    }

    #[test]
    fn percolation_fkg_on_the_patch(beta in 0.0f64..1.0, x in 0usize..9, y in 0usize..9) {
        let k = nearest_neighbour(2).unwrap();
        let graph = PercGraph::patch(&k, 3);
        let beta = beta * graph.beta_max();
        let exact = two_point_exact(&graph).unwrap();
        let px = exact.from_root(x).eval_f64(beta);
        let py = exact.from_root(y).eval_f64(beta);
        let joint = joint_connection(&graph, beta, x, y).unwrap();
        prop_assert!(joint >= px * py - 1e-12, "{} < {}", joint, px * py);
    }

    #[test]
    fn percolation_is_monotone_in_beta(b1 in 0.0f64..1.0, b2 in 0.0f64..1.0) {
        let graph = PercGraph::triangle(rational(1, 1));
        let exact = two_point_exact(&graph).unwrap();
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        for x in 0..3 {
            let p = exact.from_root(x);
            prop_assert!(p.eval(&rationalize(lo)) <= p.eval(&rationalize(hi)));
        }
    }

    #[test]
    fn ising_griffiths_inequalities(b1 in 0.0f64..2.0, b2 in 0.0f64..2.0) {
        let k = nearest_neighbour(2).unwrap();
        let volume = IsingVolume::from_shape(&k, "2x2").unwrap();
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let a = correlations(&volume, lo).unwrap();
        let b = correlations(&volume, hi).unwrap();
        for x in 0..volume.len() {
            prop_assert!(a.at(0, x) >= -1e-14 && a.at(0, x) <= 1.0 + 1e-14);
            prop_assert!(a.derivative_at(0, x) >= -1e-12);
            prop_assert!(b.at(0, x) >= a.at(0, x) - 1e-12);
        }
    }

    #[test]
    fn error_sweep_is_nondecreasing(betas in prop::collection::vec(0.0f64..0.25, 2..6)) {
        let k = nearest_neighbour(2).unwrap();
        let series = saw::enumerate(&k, 1.0, 6, None).unwrap();
        let points = betas
            .iter()
            .map(|&b| compute(&Model::Saw { lambda: 1.0 }, &saw::eval(&series, b).unwrap(), &k, b).unwrap())
            .collect();
        let sweep = ErrorSweep::new(points);
        for w in sweep.points.windows(2) {
            prop_assert!(w[1].beta >= w[0].beta);
            prop_assert!(w[1].e.lo >= w[0].e.lo);
        }
    }

    #[test]
    fn z_from_zero_is_beta(beta in 0.0f64..2.0) {
        prop_assert_eq!(ZFactor::new(0.0, beta, Interval::point(1.0)).value, Interval::point(beta));
    }
}
