//! Regression and goodness-of-fit helpers shared by the estimators.

use crate::error::{validation, Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r2: f64,
    pub n: usize,
}

/// Ordinary least squares `y = intercept + slope x`. Standard errors use the
/// residual variance with `n - 2` degrees of freedom.
pub fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(validation("x and y lengths differ"));
    }
    if n < 3 {
        return Err(Error::InsufficientStatistics(format!("regression needs 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("regressor has no spread".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s2 = rss / (nf - 2.0);
    Ok(LinearFit {
        slope,
        intercept,
        slope_se: (s2 / sxx).sqrt(),
        intercept_se: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        r2: if syy > 0.0 { 1.0 - rss / syy } else { 1.0 },
        n,
    })
}

/// Log-log regression of `y` against `x`; both must be positive.
pub fn loglog(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(validation("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ols(&lx, &ly)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    /// Coefficients from the constant term upward.
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub rss: f64,
}

/// Weighted polynomial least squares. `sigma` holds per-point standard
/// errors; when absent the residual scatter sets the scale.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize, sigma: Option<&[f64]>) -> Result<PolyFit> {
    let n = x.len();
    let p = degree + 1;
    if n != y.len() || sigma.is_some_and(|s| s.len() != n) {
        return Err(validation("polyfit inputs differ in length"));
    }
    if n <= p {
        return Err(Error::InsufficientStatistics(format!("degree {degree} fit needs more than {p} points")));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|v| if *v > 0.0 { 1.0 / v } else { 0.0 }).collect(),
        None => vec![1.0; n],
    };
    let a = DMatrix::from_fn(n, p, |i, j| w[i] * x[i].powi(j as i32));
    let b = DVector::from_fn(n, |i, _| w[i] * y[i]);
    let ata = a.transpose() * &a;
    let inv = ata.try_inverse().ok_or_else(|| Error::Degenerate("singular design matrix".into()))?;
    let coef = &inv * (a.transpose() * &b);
    let resid = &b - &a * &coef;
    let rss = resid.norm_squared();
    let scale = if sigma.is_some() { 1.0 } else { rss / (n - p) as f64 };
    Ok(PolyFit { coef: coef.iter().copied().collect(), se: (0..p).map(|j| (inv[(j, j)] * scale).sqrt()).collect(), rss })
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (sample_variance(v) / n).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Delete-one jackknife of `stat` over groups: returns (estimate, se).
pub fn jackknife<T, F: Fn(&[&T]) -> f64>(groups: &[T], stat: F) -> (f64, f64) {
    let n = groups.len();
    let all: Vec<&T> = groups.iter().collect();
    let full = stat(&all);
    let loo: Vec<f64> = (0..n)
        .map(|k| {
            let sub: Vec<&T> = groups.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, g)| g).collect();
            stat(&sub)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = (n as f64 - 1.0) / n as f64 * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (full, var.sqrt())
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
pub fn kolmogorov_pvalue(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100).map(|k| {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        sign * (-2.0 * k * k * lambda * lambda).exp()
    }).sum();
    (2.0 * s).clamp(0.0, 1.0)
}
