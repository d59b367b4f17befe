//! Convolution of lattice fields: direct summation and zero-padded FFT.

use crate::lattice::{BoxIter, LatticeError, LatticeField, MAX_DENSE_SITES};
use crate::numeric::KahanSum;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvolutionMethod {
    Direct,
    Fft,
    /// Picks whichever has the lower estimated operation count.
    Auto,
}

/// `(f*g)(x) = Σ_y f(y) g(x−y)` on radius `L_f + L_g`, with tails propagated.
pub fn convolve(f: &LatticeField, g: &LatticeField) -> Result<LatticeField, LatticeError> {
    convolve_with(f, g, ConvolutionMethod::Auto)
}

pub fn convolve_with(
    f: &LatticeField,
    g: &LatticeField,
    method: ConvolutionMethod,
) -> Result<LatticeField, LatticeError> {
    if f.dim() != g.dim() {
        return Err(LatticeError::DimensionMismatch(f.dim(), g.dim()));
    }
    let dim = f.dim();
    let radius = f.radius() + g.radius();
    LatticeField::checked_len(dim, radius)?;
    let method = match method {
        ConvolutionMethod::Auto => choose_method(f, g),
        m => m,
    };
    let values = match method {
        ConvolutionMethod::Direct => direct(f, g, radius),
        _ => fft(f, g, radius)?,
    };
    let mut h = LatticeField::from_values(dim, radius, values)?;
    h.set_symmetric_flag(f.symmetric() && g.symmetric());
    let (tail, mtail) = propagated_tails(f, g);
    Ok(h.with_tails(tail, mtail))
}

/// Convolution restricted to radius `max_radius`; the discarded part moves into the tails.
pub fn convolve_capped(
    f: &LatticeField,
    g: &LatticeField,
    max_radius: usize,
) -> Result<LatticeField, LatticeError> {
    let full = f.radius() + g.radius();
    if full <= max_radius {
        return convolve(f, g);
    }
    Ok(convolve(f, g)?.resized(max_radius))
}

fn choose_method(f: &LatticeField, g: &LatticeField) -> ConvolutionMethod {
    let nnz = f.values().iter().filter(|v| **v != 0.0).count() as f64;
    let direct_cost = nnz * g.len() as f64;
    let n = fft_size(2 * (f.radius() + g.radius()) + 1) as f64;
    let total = n.powi(f.dim() as i32);
    let fft_cost = 3.0 * total * (n.log2() + 1.0) * f.dim() as f64 * 4.0;
    if direct_cost <= fft_cost || total > MAX_DENSE_SITES as f64 {
        ConvolutionMethod::Direct
    } else {
        ConvolutionMethod::Fft
    }
}

/// Mass and second-moment tails of `f*g` from those of the factors.
///
/// Mass: `‖f‖·t_g + ‖g‖·t_f + t_f·t_g`. Second moment: the missing pairs contribute
/// `m₂f·t_g + ‖f‖·s_g + s_f·‖g‖ + t_f·m₂g + s_f·t_g + t_f·s_g` when both fields are symmetric
/// (cross terms cancel), twice that otherwise.
pub fn propagated_tails(f: &LatticeField, g: &LatticeField) -> (f64, f64) {
    let (mf, mg) = (f.l1_norm().lo, g.l1_norm().lo);
    let (tf, tg) = (f.tail_bound(), g.tail_bound());
    let (m2f, m2g) = (f.second_moment().lo, g.second_moment().lo);
    let (sf, sg) = (f.moment_tail_bound(), g.moment_tail_bound());
    let tail = mf * tg + mg * tf + tf * tg;
    let missing = m2f * tg + mf * sg + sf * mg + tf * m2g + sf * tg + tf * sg;
    let factor = if f.symmetric() && g.symmetric() { 1.0 } else { 2.0 };
    (nan_to_inf(tail), nan_to_inf(factor * missing))
}

fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn direct(f: &LatticeField, g: &LatticeField, radius: usize) -> Vec<f64> {
    let dim = f.dim();
    let side = 2 * radius + 1;
    let n: usize = side.pow(dim as u32);
    // Offsets in the output layout: index(y+z) = off(y + L_f) + off(z + L_g).
    let offset = |c: &[i32], shift: i32| -> usize {
        c.iter().fold(0usize, |acc, &v| acc * side + (v + shift) as usize)
    };
    let g_sites: Vec<(usize, f64)> = g
        .support()
        .map(|(c, v)| (offset(&c, g.radius() as i32), v))
        .collect();
    let mut out = vec![0.0; n];
    for (c, fv) in f.support() {
        let base = offset(&c, f.radius() as i32);
        for &(o, gv) in &g_sites {
            out[base + o] += fv * gv;
        }
    }
    out
}

/// Smallest `2^a 3^b 5^c` at least `n`.
pub fn fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn fft(f: &LatticeField, g: &LatticeField, radius: usize) -> Result<Vec<f64>, LatticeError> {
    let dim = f.dim();
    let out_side = 2 * radius + 1;
    let n = fft_size(out_side);
    let total = n.pow(dim as u32);
    if total > MAX_DENSE_SITES {
        return Err(LatticeError::TooLarge {
            dim,
            radius,
            sites: total as u128,
            limit: MAX_DENSE_SITES,
        });
    }
    let embed = |h: &LatticeField| -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let r = h.radius() as i32;
        for (c, v) in h.support() {
            let idx = c.iter().fold(0usize, |acc, &x| acc * n + (x + r) as usize);
            buf[idx] = Complex64::new(v, 0.0);
        }
        buf
    };
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut a = embed(f);
    let mut b = embed(g);
    transform_all_axes(&mut a, n, dim, &*forward);
    transform_all_axes(&mut b, n, dim, &*forward);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    drop(b);
    transform_all_axes(&mut a, n, dim, &*inverse);
    let scale = 1.0 / total as f64;
    let mut out = vec![0.0; out_side.pow(dim as u32)];
    // Output coordinate x (in [-radius, radius]) sits at x + radius in the padded grid.
    for (i, c) in BoxIter::new(dim, radius as i32).enumerate() {
        let idx = c
            .iter()
            .fold(0usize, |acc, &x| acc * n + (x + radius as i32) as usize);
        out[i] = a[idx].re * scale;
    }
    Ok(out)
}

fn transform_all_axes(buf: &mut [Complex64], n: usize, dim: usize, plan: &dyn rustfft::Fft<f64>) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        let outer = buf.len() / (n * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                if stride == 1 {
                    plan.process_with_scratch(&mut buf[base..base + n], &mut scratch);
                    continue;
                }
                for k in 0..n {
                    line[k] = buf[base + k * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for k in 0..n {
                    buf[base + k * stride] = line[k];
                }
            }
        }
    }
}

/// `(f*g)(x)` at a single site, by direct summation over the support of `f`.
pub fn convolve_at(f: &LatticeField, g: &LatticeField, x: &[i32]) -> f64 {
    let mut acc = KahanSum::new();
    let mut diff = vec![0i32; x.len()];
    for (c, v) in f.support() {
        for i in 0..x.len() {
            diff[i] = x[i] - c[i];
        }
        acc.add(v * g.at(&diff));
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Point;

    fn nn1() -> LatticeField {
        LatticeField::from_fn(1, 1, |c| if c[0] == 0 { 0.0 } else { 0.5 })
    }

    #[test]
    fn delta_is_identity() {
        let g = LatticeField::from_fn(2, 2, |c| (c[0] + 2 * c[1] + 7) as f64);
        let h = convolve(&LatticeField::delta(2), &g).unwrap();
        assert!(h.max_abs_diff(&g) < 1e-14);
    }

    #[test]
    fn nn_two_step_values() {
        let h = convolve(&nn1(), &nn1()).unwrap();
        assert!((h.at(&[0]) - 0.5).abs() < 1e-15);
        assert!((h.at(&[2]) - 0.25).abs() < 1e-15);
        assert!((h.at(&[-2]) - 0.25).abs() < 1e-15);
        assert_eq!(h.at(&[1]), 0.0);
    }

    #[test]
    fn direct_and_fft_agree() {
        let f = LatticeField::from_fn(3, 3, |c| ((c[0] * 7 + c[1] * 3 + c[2]).rem_euclid(5)) as f64 / 5.0);
        let g = LatticeField::from_fn(3, 2, |c| 1.0 / (1.0 + Point::new(c.to_vec()).norm2_sq() as f64));
        let a = convolve_with(&f, &g, ConvolutionMethod::Direct).unwrap();
        let b = convolve_with(&f, &g, ConvolutionMethod::Fft).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10, "{}", a.max_abs_diff(&b));
    }

    #[test]
    fn tails_propagate() {
        let f = nn1().with_tails(0.1, 0.2);
        let g = nn1().with_tails(0.05, 0.0);
        let h = convolve(&f, &g).unwrap();
        assert!((h.tail_bound() - (0.05 + 0.1 + 0.005)).abs() < 1e-15);
        assert!(h.moment_tail_bound() > 0.0);
    }

    #[test]
    fn capped_moves_mass() {
        let h = convolve_capped(&nn1(), &nn1(), 1).unwrap();
        assert_eq!(h.radius(), 1);
        assert!((h.mass() + h.tail_bound() - 1.0).abs() < 1e-15);
        assert!((h.tail_bound() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fft_sizes_are_smooth() {
        assert_eq!(fft_size(7), 8);
        assert_eq!(fft_size(11), 12);
        assert_eq!(fft_size(31), 32);
        assert_eq!(fft_size(97), 100);
    }
}
