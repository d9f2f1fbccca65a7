//! Min-plus gluing of two-parameter fields and the moment-matched
//! renormalisation map, acting on stationary Gaussian surrogates.
//!
//! Fields live on a square grid `x_i = -X + i h`, `i = 0..n`, with `n` odd so
//! the origin is a node. The gluing subtracts the grid minimum of the
//! quadratic penalty rather than its continuum value `(x - y)²/2`, so zero
//! inputs give exactly zero on the grid.

use crate::error::{validation, Error, Result};
use crate::rng::{substream, Stream};
use crate::stats::sample_variance;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub half_width: f64,
    pub n: usize,
}

impl FieldGrid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width > 0.0) || n < 3 || n.is_multiple_of(2) {
            return Err(validation(format!("need half_width > 0 and odd n >= 3, got {half_width}, {n}")));
        }
        Ok(Self { half_width, n })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h()
    }

    pub fn center(&self) -> usize {
        self.n / 2
    }
}

/// Stationary Gaussian surrogate: separable Gaussian covariance
/// `sigma² exp(-r²/(2 corr_len²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub sigma: f64,
    pub corr_len: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryFieldEnsemble {
    pub grid: FieldGrid,
    /// Row-major values `A(x_i, y_j)` at `[i * n + j]`; NaN marks masked nodes.
    pub fields: Vec<Vec<f64>>,
    /// Generating seeds of each realization (both parents for glued fields).
    pub seeds: Vec<Vec<u64>>,
    pub model: SurrogateSpec,
    pub master_seed: u64,
    pub targets: (f64, f64),
}

impl StationaryFieldEnsemble {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn center_values(&self) -> Vec<f64> {
        let c = self.grid.center();
        self.fields.iter().map(|f| f[c * self.grid.n + c]).collect()
    }
}

fn gaussian_taps(h: f64, corr_len: f64) -> Vec<f64> {
    if corr_len <= 0.0 {
        return vec![1.0];
    }
    // g(x) = exp(-x²/l²) has autocorrelation proportional to exp(-r²/(2 l²))
    let w = (4.0 * corr_len / h).ceil() as i64;
    let mut g: Vec<f64> = (-w..=w).map(|k| (-(k as f64 * h / corr_len).powi(2)).exp()).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    g.iter_mut().for_each(|v| *v /= norm);
    g
}

/// One surrogate realization from its own substream.
pub fn surrogate_field(grid: FieldGrid, spec: SurrogateSpec, master_seed: u64, index: u64) -> Vec<f64> {
    let n = grid.n;
    let g = gaussian_taps(grid.h(), spec.corr_len);
    let w = g.len() / 2;
    let m = n + 2 * w;
    let mut rng = substream(master_seed, Stream::Surrogate, index, 0);
    let noise: Vec<f64> = (0..m * m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut rows = vec![0.0; n * m];
    for i in 0..n {
        for c in 0..m {
            rows[i * m + c] = (0..g.len()).map(|k| g[k] * noise[(i + k) * m + c]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = spec.sigma * (0..g.len()).map(|k| g[k] * rows[i * m + j + k]).sum::<f64>();
        }
    }
    out
}

pub fn surrogate_ensemble(grid: FieldGrid, spec: SurrogateSpec, master_seed: u64, count: usize, targets: (f64, f64)) -> StationaryFieldEnsemble {
    let fields = (0..count as u64).into_par_iter().map(|r| surrogate_field(grid, spec, master_seed, r)).collect();
    StationaryFieldEnsemble { grid, fields, seeds: (0..count as u64).map(|r| vec![r]).collect(), model: spec, master_seed, targets }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlueResult {
    pub b: Vec<f64>,
    pub mask_fraction: f64,
}

fn penalty(grid: &FieldGrid, i: usize, k: usize, j: usize) -> f64 {
    let (x, z, y) = (grid.x(i), grid.x(k), grid.x(j));
    (x - z).powi(2) + (z - y).powi(2)
}

/// Grid minimum of the zero-field penalty, attained at the node(s) nearest
/// the midpoint.
fn penalty_floor(grid: &FieldGrid, i: usize, j: usize) -> f64 {
    let lo = (i + j) / 2;
    let hi = (i + j).div_ceil(2);
    penalty(grid, i, lo, j).min(penalty(grid, i, hi, j))
}

fn finish(grid: &FieldGrid, b: Vec<f64>) -> Result<GlueResult> {
    let masked = b.iter().filter(|v| v.is_nan()).count();
    let mask_fraction = masked as f64 / b.len() as f64;
    if mask_fraction > 0.05 {
        return Err(Error::Domain(format!(
            "{:.1}% of glued points attain the minimum on the z boundary; enlarge the domain (half width {})",
            100.0 * mask_fraction,
            grid.half_width
        )));
    }
    Ok(GlueResult { b, mask_fraction })
}

/// Exhaustive scan over every z node.
pub fn glue_min_dense(grid: &FieldGrid, a: &[f64], a2: &[f64]) -> Result<GlueResult> {
    let n = grid.n;
    let mut b = vec![f64::NAN; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for k in 0..n {
                let v = a[i * n + k] + a2[k * n + j] + penalty(grid, i, k, j);
                if v < best {
                    best = v;
                    arg = k;
                }
            }
            if arg != 0 && arg != n - 1 {
                b[i * n + j] = best - penalty_floor(grid, i, j);
            }
        }
    }
    finish(grid, b)
}

/// Glued field `B(x, y)`; a point whose minimising `z` is an end node is
/// masked with NaN. The scan is confined to the z window the penalty allows
/// given the oscillation of row `i` of `a` and column `j` of `a2`. Masked
/// (NaN) input nodes are never chosen; with any present the window bound no
/// longer holds and the full z range is scanned.
pub fn glue_min(grid: &FieldGrid, a: &[f64], a2: &[f64]) -> Result<GlueResult> {
    let n = grid.n;
    if a.len() != n * n || a2.len() != n * n {
        return Err(validation("glued fields must live on the same grid"));
    }
    if a.iter().chain(a2).any(|v| v.is_infinite()) {
        return Err(validation("glued fields must not contain infinities"));
    }
    let masked_input = a.iter().chain(a2).any(|v| v.is_nan());
    let h = grid.h();
    let osc = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), v| (l.min(v), u.max(v)));
        hi - lo
    };
    let row_osc: Vec<f64> = (0..n).map(|i| osc(&mut (0..n).map(|k| a[i * n + k]))).collect();
    let col_osc: Vec<f64> = (0..n).map(|j| osc(&mut (0..n).map(|k| a2[k * n + j]))).collect();
    let b: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            // 2 (z - m)² may not exceed the oscillation budget plus the
            // midpoint rounding h²/2
            let r = if masked_input { f64::INFINITY } else { ((row_osc[i] + col_osc[j] + 0.5 * h * h) / 2.0).sqrt() * (1.0 + 1e-12) + 1e-12 };
            let mid = 0.5 * (i + j) as f64;
            let klo = (mid - r / h).floor().max(0.0) as usize;
            let khi = ((mid + r / h).ceil() as usize).min(n - 1);
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for k in klo..=khi {
                let v = a[i * n + k] + a2[k * n + j] + penalty(grid, i, k, j);
                if v < best {
                    best = v;
                    arg = k;
                }
            }
            if arg != 0 && arg != n - 1 {
                best - penalty_floor(grid, i, j)
            } else {
                f64::NAN
            }
        })
        .collect();
    finish(grid, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormConstants {
    pub c: f64,
    pub delta: f64,
    pub mu: f64,
}

impl RenormConstants {
    pub fn new(c: f64, delta: f64) -> Self {
        Self { c, delta, mu: (2.0 * delta).sqrt() }
    }

    /// Constants of the conjectured fixed point.
    pub fn fixed_point() -> Self {
        Self::new(0.0, 2f64.powf(1.0 / 3.0))
    }
}

/// Affine constants sending the sample mean and (unbiased) variance to
/// `targets = (m*, v*)`: `delta = sqrt(var / v*)`, `c = mean - delta m*`.
pub fn fit_constants(samples: &[f64], targets: (f64, f64)) -> Result<RenormConstants> {
    if samples.len() < 100 {
        return Err(Error::InsufficientStatistics(format!("{} samples; need at least 100", samples.len())));
    }
    if !(targets.1 > 0.0) {
        return Err(validation("target variance must be positive"));
    }
    let var = sample_variance(samples);
    if !(var > 0.0) {
        return Err(Error::Degenerate("glued samples have zero variance; nothing to normalise".into()));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let delta = (var / targets.1).sqrt();
    Ok(RenormConstants::new(mean - delta * targets.0, delta))
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * (2.0 * p1 + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

/// Node value with linear extrapolation one step past each edge, which keeps
/// the cubic stencil exact on bilinear data.
fn extended(f: &[f64], n: i64, a: i64, b: i64) -> f64 {
    if a < 0 || a >= n {
        let e = a.clamp(0, n - 1);
        return 2.0 * extended(f, n, e, b) - extended(f, n, 2 * e - a, b);
    }
    if b < 0 || b >= n {
        let e = b.clamp(0, n - 1);
        return 2.0 * extended(f, n, a, e) - extended(f, n, a, 2 * e - b);
    }
    f[(a * n + b) as usize]
}

/// Piecewise-cubic (Catmull–Rom) value of a gridded field at `(x, y)`; end
/// cells fall back to linear extension of the stencil.
pub fn interpolate(grid: &FieldGrid, f: &[f64], x: f64, y: f64) -> f64 {
    let n = grid.n;
    let h = grid.h();
    let locate = |v: f64| {
        let s = ((v + grid.half_width) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    };
    let (i, tx) = locate(x);
    let (j, ty) = locate(y);
    let at = |a: i64, b: i64| extended(f, n as i64, a, b);
    let (i, j) = (i as i64, j as i64);
    let mut col = [0.0; 4];
    for (r, c) in col.iter_mut().enumerate() {
        let a = i - 1 + r as i64;
        *c = catmull_rom([at(a, j - 1), at(a, j), at(a, j + 1), at(a, j + 2)], ty);
    }
    catmull_rom(col, tx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApplyROutput {
    pub ensemble: StationaryFieldEnsemble,
    pub constants: RenormConstants,
    pub mask_fraction: f64,
    pub samples_used: usize,
}

/// Diagonal values `B(x, x)` with `|x| <= X/2`, which share the law of
/// `B(0, 0)` under joint translation.
fn diagonal_samples(grid: &FieldGrid, b: &[f64]) -> Vec<f64> {
    let n = grid.n;
    (0..n)
        .filter(|&i| grid.x(i).abs() <= 0.5 * grid.half_width + 1e-12)
        .map(|i| b[i * n + i])
        .filter(|v| v.is_finite())
        .collect()
}

/// One application of the renormalisation map: glue realizations in pairs
/// `(2k, 2k+1)`, fit constants on pooled diagonal samples, then evaluate
/// `(B(mu x, mu y) - c) / delta` on a grid of half width `out_half_width`
/// (default `X / mu`).
pub fn apply_r(ens: &StationaryFieldEnsemble, out_half_width: Option<f64>) -> Result<ApplyROutput> {
    if ens.len() < 2 {
        return Err(validation("need at least two realizations to glue"));
    }
    let grid = ens.grid;
    let glued: Vec<GlueResult> = (0..ens.len() / 2)
        .into_par_iter()
        .map(|k| glue_min(&grid, &ens.fields[2 * k], &ens.fields[2 * k + 1]))
        .collect::<Result<_>>()?;
    let samples: Vec<f64> = glued.iter().flat_map(|g| diagonal_samples(&grid, &g.b)).collect();
    let constants = fit_constants(&samples, ens.targets)?;
    let out_x = out_half_width.unwrap_or(grid.half_width / constants.mu);
    if constants.mu * out_x > grid.half_width * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "rescaled half width mu X' = {} exceeds the glued domain {}",
            constants.mu * out_x,
            grid.half_width
        )));
    }
    let og = FieldGrid::new(out_x, grid.n)?;
    let fields: Vec<Vec<f64>> = glued
        .par_iter()
        .map(|g| {
            let mut f = vec![0.0; og.n * og.n];
            for i in 0..og.n {
                for j in 0..og.n {
                    let v = interpolate(&grid, &g.b, constants.mu * og.x(i), constants.mu * og.x(j));
                    f[i * og.n + j] = (v - constants.c) / constants.delta;
                }
            }
            f
        })
        .collect();
    let mask_fraction = glued.iter().map(|g| g.mask_fraction).sum::<f64>() / glued.len() as f64;
    let seeds = (0..glued.len()).map(|k| [ens.seeds[2 * k].clone(), ens.seeds[2 * k + 1].clone()].concat()).collect();
    Ok(ApplyROutput {
        ensemble: StationaryFieldEnsemble { grid: og, fields, seeds, model: ens.model, master_seed: ens.master_seed, targets: ens.targets },
        constants,
        mask_fraction,
        samples_used: samples.len(),
    })
}

/// Largest deviation of the ensemble mean and standard deviation at diagonal
/// probes `(x, x)`, `|x| <= X/2`, from their values at the origin, in units
/// of the origin standard deviation and relative units respectively.
pub fn stationarity_drift(ens: &StationaryFieldEnsemble) -> f64 {
    let g = ens.grid;
    let n = g.n;
    let stats = |i: usize| {
        let v: Vec<f64> = ens.fields.iter().map(|f| f[i * n + i]).filter(|v| v.is_finite()).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, sample_variance(&v).sqrt())
    };
    let (m0, s0) = stats(g.center());
    (0..n)
        .filter(|&i| g.x(i).abs() <= 0.5 * g.half_width + 1e-12)
        .map(|i| {
            let (m, s) = stats(i);
            ((m - m0).abs() / s0).max((s / s0 - 1.0).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FieldGrid {
        FieldGrid::new(4.0, 33).unwrap()
    }

    #[test]
    fn zero_fields_glue_to_zero_exactly() {
        let g = grid();
        let z = vec![0.0; g.n * g.n];
        let r = glue_min(&g, &z, &z).unwrap();
        assert!(r.b.iter().filter(|v| v.is_finite()).all(|&v| v == 0.0));
        assert!(r.mask_fraction < 0.05);
    }

    #[test]
    fn constants_pass_through() {
        let g = grid();
        let a = vec![0.7; g.n * g.n];
        let b = vec![-2.0; g.n * g.n];
        let r = glue_min(&g, &a, &b).unwrap();
        assert!(r.b.iter().filter(|v| v.is_finite()).all(|&v| (v + 1.3).abs() < 1e-14));
    }

    #[test]
    fn windowed_scan_matches_dense_scan() {
        let g = FieldGrid::new(2.0, 9).unwrap();
        let spec = SurrogateSpec { sigma: 1.0, corr_len: 0.5 };
        for seed in 0..20 {
            let a = surrogate_field(g, spec, seed, 0);
            let b = surrogate_field(g, spec, seed, 1);
            let fast = glue_min(&g, &a, &b);
            let dense = glue_min_dense(&g, &a, &b);
            match (fast, dense) {
                (Ok(f), Ok(d)) => {
                    for (x, y) in f.b.iter().zip(&d.b) {
                        assert!((x.is_nan() && y.is_nan()) || x == y);
                    }
                }
                (Err(_), Err(_)) => {}
                _ => panic!("fast and dense disagree on masking for seed {seed}"),
            }
        }
        let g = grid();
        let a = surrogate_field(g, spec, 3, 0);
        let b = surrogate_field(g, spec, 3, 1);
        let (f, d) = (glue_min(&g, &a, &b).unwrap(), glue_min_dense(&g, &a, &b).unwrap());
        assert!(f.b.iter().zip(&d.b).all(|(x, y)| (x.is_nan() && y.is_nan()) || x == y));
        assert_eq!(f.mask_fraction, d.mask_fraction);
    }

    #[test]
    fn masked_inputs_are_skipped() {
        let g = grid();
        let spec = SurrogateSpec { sigma: 0.5, corr_len: 1.0 };
        let mut a = surrogate_field(g, spec, 4, 0);
        let b = surrogate_field(g, spec, 4, 1);
        a[16 * 33 + 16] = f64::NAN;
        a[0] = f64::NAN;
        let (f, d) = (glue_min(&g, &a, &b).unwrap(), glue_min_dense(&g, &a, &b).unwrap());
        assert!(f.b.iter().zip(&d.b).all(|(x, y)| (x.is_nan() && y.is_nan()) || x == y));
        a[1] = f64::INFINITY;
        assert!(glue_min(&g, &a, &b).is_err());
    }

    #[test]
    fn tiny_domain_is_rejected() {
        let g = FieldGrid::new(0.5, 9).unwrap();
        let spec = SurrogateSpec { sigma: 5.0, corr_len: 0.1 };
        let a = surrogate_field(g, spec, 1, 0);
        let b = surrogate_field(g, spec, 1, 1);
        assert!(matches!(glue_min(&g, &a, &b), Err(Error::Domain(_))));
    }

    #[test]
    fn surrogate_has_requested_variance() {
        let g = FieldGrid::new(4.0, 17).unwrap();
        let e = surrogate_ensemble(g, SurrogateSpec { sigma: 2.0, corr_len: 1.0 }, 5, 400, (0.0, 1.0));
        let v = sample_variance(&e.center_values());
        // variance estimate SE: 4 sqrt(2/400)
        assert!((v - 4.0).abs() < 3.0 * 4.0 * (2.0f64 / 400.0).sqrt(), "{v}");
        assert!(stationarity_drift(&e) < 0.3);
    }

    #[test]
    fn constants_fit() {
        let mut rng = substream(2, Stream::Synthetic, 6, 0);
        let raw: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = raw.iter().sum::<f64>() / 1000.0;
        let sd = sample_variance(&raw).sqrt();
        let std: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
        let k = fit_constants(&std, (0.0, 1.0)).unwrap();
        assert!(k.c.abs() < 1e-12 && (k.delta - 1.0).abs() < 1e-12 && (k.mu - 2f64.sqrt()).abs() < 1e-12);
        let shifted: Vec<f64> = std.iter().map(|v| 2.0 * v + 3.0).collect();
        let k2 = fit_constants(&shifted, (0.0, 1.0)).unwrap();
        assert!((k2.delta - 2.0).abs() < 1e-12 && (k2.c - 3.0).abs() < 1e-12);
        let back: Vec<f64> = shifted.iter().map(|v| (v - k2.c) / k2.delta).collect();
        assert!((back.iter().sum::<f64>() / 1000.0).abs() < 1e-10);
        assert!((sample_variance(&back) - 1.0).abs() < 1e-10);
        assert_eq!(k2.mu, (2.0 * k2.delta).sqrt());
        let fp = RenormConstants::fixed_point();
        assert!((fp.mu - 2f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert!(matches!(fit_constants(&vec![1.0; 100], (0.0, 1.0)), Err(Error::Degenerate(_))));
        assert!(fit_constants(&std[..50], (0.0, 1.0)).is_err());
    }

    #[test]
    fn zero_ensemble_is_degenerate() {
        let g = grid();
        let e = StationaryFieldEnsemble {
            grid: g,
            fields: vec![vec![0.0; g.n * g.n]; 20],
            seeds: vec![vec![0]; 20],
            model: SurrogateSpec { sigma: 0.0, corr_len: 1.0 },
            master_seed: 0,
            targets: (0.0, 1.0),
        };
        assert!(matches!(apply_r(&e, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cubic_interpolation_is_exact_for_bilinear_and_nodes() {
        let g = FieldGrid::new(2.0, 11).unwrap();
        let f: Vec<f64> = (0..g.n * g.n).map(|ij| { let (x, y) = (g.x(ij / g.n), g.x(ij % g.n)); 1.0 + 2.0 * x - y + 0.5 * x * y }).collect();
        for &(x, y) in &[(0.13, -0.71), (1.99, 1.99), (-2.0, 0.3), (0.4, 0.4)] {
            assert!((interpolate(&g, &f, x, y) - (1.0 + 2.0 * x - y + 0.5 * x * y)).abs() < 1e-12);
        }
        let q: Vec<f64> = (0..g.n * g.n).map(|ij| (ij as f64).sin()).collect();
        assert!((interpolate(&g, &q, g.x(3), g.x(7)) - q[3 * g.n + 7]).abs() < 1e-14);
    }

    #[test]
    fn one_application_restores_targets_and_stays_stationary() {
        let g = FieldGrid::new(6.0, 49).unwrap();
        let e = surrogate_ensemble(g, SurrogateSpec { sigma: 1.0, corr_len: 0.75 }, 9, 200, (0.0, 1.0));
        let out = apply_r(&e, None).unwrap();
        assert_eq!(out.constants.mu, (2.0 * out.constants.delta).sqrt());
        assert!(out.mask_fraction < 0.05);
        assert!(out.samples_used >= 100);
        let d_in = stationarity_drift(&e);
        let d_out = stationarity_drift(&out.ensemble);
        let tol = 3.0 / (out.ensemble.len() as f64).sqrt();
        assert!(d_out < 2.0 * d_in.max(tol), "{d_in} {d_out}");
        // the ensemble-mean profile R(x, 0) carries no residual parabola
        let og = out.ensemble.grid;
        let xs: Vec<f64> = (0..og.n).map(|i| og.x(i)).filter(|x| x.abs() <= 0.5 * og.half_width).collect();
        let ys: Vec<f64> = (0..og.n)
            .filter(|&i| og.x(i).abs() <= 0.5 * og.half_width)
            .map(|i| {
                let v: Vec<f64> = out.ensemble.fields.iter().map(|f| f[i * og.n + og.center()]).filter(|v| v.is_finite()).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let p = crate::stats::polyfit(&xs, &ys, 2, None).unwrap();
        assert!(p.coef[2].abs() < 0.05, "curvature {}", p.coef[2]);
    }
}
