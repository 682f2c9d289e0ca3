//! In-place radix-2 FFT over `f64` complex buffers, plus the 2-D transforms
//! and wavenumber helpers the spectral code needs.

use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use crate::error::{Error, Result};

pub fn is_pow2(n: usize) -> bool {
    n > 0 && n & (n - 1) == 0
}

/// Unnormalized transform: `forward` uses `exp(-i…)`, inverse `exp(+i…)`.
pub fn fft_inplace(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(is_pow2(n), "fft length {n} is not a power of two");
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * core::f64::consts::PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = Complex64::new(Float::cos(ang * k as f64), Float::sin(ang * k as f64));
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

/// 2-D transform of a row-major `h × w` buffer.
pub fn fft2_inplace(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    assert_eq!(buf.len(), h * w);
    for row in buf.chunks_mut(w) {
        fft_inplace(row, inverse);
    }
    let mut col = alloc::vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        fft_inplace(&mut col, inverse);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
}

/// Fourier-series coefficients `(1 / hw) Σ f(x) exp(-i κ·x)` of a real field.
pub fn fourier_coefficients(values: &[f64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    if !is_pow2(h) || !is_pow2(w) {
        return Err(Error::Grid(alloc::format!("{h}x{w} is not a power-of-two grid")));
    }
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_inplace(&mut buf, h, w, false);
    let scale = 1.0 / (h * w) as f64;
    for c in &mut buf {
        *c *= scale;
    }
    Ok(buf)
}

/// Signed integer wavenumber of FFT index `i` on an `n`-point axis.
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, &v)| {
                    let ang = sign * 2.0 * core::f64::consts::PI * (j * k) as f64 / n as f64;
                    acc + v * Complex64::new(ang.cos(), ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for n in [1usize, 2, 4, 8, 32] {
            let x: Vec<Complex64> =
                (0..n).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos())).collect();
            for inverse in [false, true] {
                let mut y = x.clone();
                fft_inplace(&mut y, inverse);
                let z = naive_dft(&x, inverse);
                for (a, b) in y.iter().zip(&z) {
                    assert!((a - b).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn round_trip_2d() {
        let (h, w) = (8, 16);
        let x: Vec<Complex64> = (0..h * w).map(|i| Complex64::new((i as f64).sin(), 0.0)).collect();
        let mut y = x.clone();
        fft2_inplace(&mut y, h, w, false);
        fft2_inplace(&mut y, h, w, true);
        for (a, b) in y.iter().zip(&x) {
            assert!((a / (h * w) as f64 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn wavenumbers() {
        let ks: Vec<i64> = (0..8).map(|i| wavenumber(i, 8)).collect();
        assert_eq!(ks, [0, 1, 2, 3, 4, -3, -2, -1]);
    }
}
