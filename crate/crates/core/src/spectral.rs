//! Thin wrappers around `rustfft` with a per-thread planner cache.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalised forward DFT, `X_k = sum_j x_j e^{-2 pi i jk/n}`.
pub fn forward(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// Unnormalised inverse DFT, `x_j = sum_k X_k e^{2 pi i jk/n}`.
pub fn inverse(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
}

/// Forward DFT of a real sequence.
pub fn forward_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward(&mut buf);
    buf
}

/// Signed wavenumber index for FFT bin `k` of an `n`-point transform.
#[inline]
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Circular convolution `(a * b)_i = sum_j a_j b_{i-j}` via FFT.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    assert_eq!(n, b.len());
    let fa = forward_real(a);
    let fb = forward_real(b);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    inverse(&mut prod);
    prod.iter().map(|c| c.re / n as f64).collect()
}

/// Spectral derivative of a real periodic sequence sampled on `[0, period)`.
pub fn derivative(x: &[f64], period: f64) -> Vec<f64> {
    let n = x.len();
    let mut f = forward_real(x);
    let two_pi_over_p = 2.0 * std::f64::consts::PI / period;
    for (k, c) in f.iter_mut().enumerate() {
        let kk = signed_index(k, n);
        if n.is_multiple_of(2) && k == n / 2 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= Complex64::new(0.0, two_pi_over_p * kk as f64);
        }
    }
    inverse(&mut f);
    f.iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_sum() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).cos() + 0.1).collect();
        let c = circular_convolve(&a, &b);
        for i in 0..12 {
            let direct: f64 = (0..12).map(|j| a[j] * b[(i + 12 - j) % 12]).sum();
            assert!((c[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let n = 32;
        let p = 3.0;
        let w = 2.0 * std::f64::consts::PI * 2.0 / p;
        let x: Vec<f64> = (0..n).map(|i| (w * i as f64 * p / n as f64).sin()).collect();
        let d = derivative(&x, p);
        for i in 0..n {
            let exact = w * (w * i as f64 * p / n as f64).cos();
            assert!((d[i] - exact).abs() < 1e-10);
        }
    }
}
