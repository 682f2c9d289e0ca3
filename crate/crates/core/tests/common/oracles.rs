//! Independent reference computations used by the test suites. Nothing here
//! calls into the crate's FFT, spectrum or sampler code.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;

/// Separable naive DFT, `(1 / hw) Σ f(x) exp(-i κ·x)`.
pub fn dft2(values: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..w {
                acc += values[i * w + j] * Complex64::from_polar(1.0, -2.0 * PI * (kx * j) as f64 / w as f64);
            }
            rows[i * w + kx] = acc;
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                acc += rows[i * w + kx] * Complex64::from_polar(1.0, -2.0 * PI * (ky * i) as f64 / h as f64);
            }
            out[ky * w + kx] = acc / (h * w) as f64;
        }
    }
    out
}

/// Inverse of [`dft2`]: `Σ c(κ) exp(+i κ·x)`.
pub fn idft2(coeffs: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for j in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for kx in 0..w {
                acc += coeffs[ky * w + kx] * Complex64::from_polar(1.0, 2.0 * PI * (kx * j) as f64 / w as f64);
            }
            rows[ky * w + j] = acc;
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for ky in 0..h {
                acc += rows[ky * w + j] * Complex64::from_polar(1.0, 2.0 * PI * (ky * i) as f64 / h as f64);
            }
            out[i * w + j] = acc;
        }
    }
    out
}

pub fn signed(i: usize, n: usize) -> i64 {
    if 2 * i <= n {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Shell energies by direct summation of `½|ω̂|²/|κ|²` with nearest-integer
/// binning; modes beyond `k_max` count towards the last shell.
pub fn spectrum(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let c = dft2(values, h, w);
    let k_max = h.min(w) / 2;
    let mut e = vec![0.0; k_max];
    for ky in 0..h {
        for kx in 0..w {
            let (a, b) = (signed(kx, w), signed(ky, h));
            if a == 0 && b == 0 {
                continue;
            }
            let k2 = (a * a + b * b) as f64;
            let shell = ((k2.sqrt() + 0.5).floor() as usize).min(k_max);
            e[shell - 1] += 0.5 * c[ky * w + kx].norm_sqr() / k2;
        }
    }
    e
}

/// Half the domain mean of `|u|² + |v|²`, with the velocities rebuilt from
/// the streamfunction `ψ̂ = ω̂/|κ|²` as `u = ∂ψ/∂y`, `v = -∂ψ/∂x`.
pub fn kinetic_energy(values: &[f64], h: usize, w: usize) -> f64 {
    let c = dft2(values, h, w);
    let mut uh = vec![Complex64::new(0.0, 0.0); h * w];
    let mut vh = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let (a, b) = (signed(kx, w) as f64, signed(ky, h) as f64);
            let k2 = a * a + b * b;
            if k2 == 0.0 {
                continue;
            }
            let psi = c[ky * w + kx] / k2;
            uh[ky * w + kx] = Complex64::new(0.0, b) * psi;
            vh[ky * w + kx] = Complex64::new(0.0, -a) * psi;
        }
    }
    let u = idft2(&uh, h, w);
    let v = idft2(&vh, h, w);
    0.5 * u.iter().zip(&v).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).sum::<f64>() / (h * w) as f64
}

/// `‖log max(a, floor) − log max(b, floor)‖ / ‖log max(b, floor)‖` over the
/// 1-based shells `lo..=hi`.
pub fn log_error(rec: &[f64], gt: &[f64], lo: usize, hi: usize) -> f64 {
    let l = |x: f64| x.max(1e-12).ln();
    let (mut num, mut den) = (0.0, 0.0);
    for k in lo..=hi {
        num += (l(rec[k - 1]) - l(gt[k - 1])).powi(2);
        den += l(gt[k - 1]).powi(2);
    }
    (num / den).sqrt()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Step-by-step reverse process with the closed-form DDIM update, driven
/// by an oracle that always knows the clean field.
pub fn ddim_with_known_x0(alpha_bar: &[f64], visits: &[usize], x0: &[f64], x_t: &[f64]) -> Vec<f64> {
    let mut x = x_t.to_vec();
    for (i, &t) in visits.iter().enumerate() {
        let a = alpha_bar[t];
        let prev = visits.get(i + 1).map_or(1.0, |&p| alpha_bar[p]);
        x = x
            .iter()
            .zip(x0)
            .map(|(&xt, &x0)| prev.sqrt() * x0 + (1.0 - prev).sqrt() * (xt - a.sqrt() * x0) / (1.0 - a).sqrt())
            .collect();
    }
    x
}
