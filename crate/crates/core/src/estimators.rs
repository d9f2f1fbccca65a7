//! Estimators linking simulations to scaling predictions: shape function and
//! its Legendre dual, wandering and fluctuation exponents, the Brownian
//! increment constant of the global solution, shock and minimiser age tails,
//! and the backward contraction rate of minimisers.
//!
//! Every standard error comes from replica scatter (delete-one jackknife over
//! replicas) unless the estimator documents otherwise.

use crate::error::{config, validation, Error, Result};
use crate::forcing::PotentialField;
use crate::geometry::{strip_from_origins, OriginTracker};
use crate::grid::{wrap, Grid};
use crate::hamiltonian::HamiltonianSpec;
use crate::inviscid::{detect_shocks, evolve, lax_oleinik_step, track_shocks, ShockRecord, SolutionField};
use crate::stats::{jackknife, loglog, median, ols, polyfit, LinearFit};
use crate::viscous::{evolve_viscous, PartitionField, ViscousConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub fit_range: (f64, f64),
    pub n_replicas: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl ExponentEstimate {
    fn new(name: &str, value: f64, stderr: f64, fit_range: (f64, f64), n_replicas: usize) -> Self {
        Self { name: name.into(), value, stderr, fit_range, n_replicas, diagnostics: BTreeMap::new() }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.diagnostics.insert(key.into(), v);
        self
    }
}

/// Contiguous index window of at least four points spanning a decade in `x`
/// with the largest log-log R². Returns `None` when no window qualifies.
pub fn scan_fit_range(x: &[f64], y: &[f64]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for lo in 0..x.len() {
        for hi in (lo + 3)..x.len() {
            if x[hi] < 10.0 * x[lo] * (1.0 - 1e-12) {
                continue;
            }
            if let Ok(f) = loglog(&x[lo..=hi], &y[lo..=hi]) {
                if best.is_none_or(|b| f.r2 > b.2 + 1e-12) {
                    best = Some((lo, hi, f.r2));
                }
            }
        }
    }
    best.map(|b| (b.0, b.1))
}

/// Log-log slope of `agg(groups, k)` against `x[k]` over `range`, with a
/// jackknife error over groups.
fn jackknife_slope<G: Sync, F>(x: &[f64], groups: &[G], range: (usize, usize), agg: F) -> Result<(LinearFit, f64)>
where
    F: Fn(&[&G], usize) -> f64 + Sync,
{
    let (lo, hi) = range;
    let fit_of = |gs: &[&G]| -> Result<LinearFit> {
        let y: Vec<f64> = (lo..=hi).map(|k| agg(gs, k)).collect();
        loglog(&x[lo..=hi], &y)
    };
    let all: Vec<&G> = groups.iter().collect();
    let full = fit_of(&all)?;
    if groups.len() < 2 {
        return Err(Error::InsufficientStatistics("need at least 2 replicas for an error bar".into()));
    }
    let (_, se) = jackknife(groups, |gs| fit_of(gs).map(|f| f.slope).unwrap_or(f64::NAN));
    if !se.is_finite() {
        return Err(Error::Numeric("jackknife produced a non-finite error".into()));
    }
    Ok((full, se))
}

fn pick_range<G: Sync, F>(x: &[f64], groups: &[G], agg: &F, forced: Option<(f64, f64)>) -> Result<(usize, usize)>
where
    F: Fn(&[&G], usize) -> f64 + Sync,
{
    if let Some((a, b)) = forced {
        let lo = x.iter().position(|&v| v >= a * (1.0 - 1e-12));
        let hi = x.iter().rposition(|&v| v <= b * (1.0 + 1e-12));
        return match (lo, hi) {
            (Some(l), Some(h)) if h >= l + 2 => Ok((l, h)),
            _ => Err(validation(format!("fit range [{a}, {b}] holds fewer than 3 points"))),
        };
    }
    let all: Vec<&G> = groups.iter().collect();
    let y: Vec<f64> = (0..x.len()).map(|k| agg(&all, k)).collect();
    scan_fit_range(x, &y).ok_or_else(|| Error::InsufficientStatistics("no fit window spans a decade with 4 points".into()))
}

// ---------------------------------------------------------------------------
// shape function and Legendre transform

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub forcing: PotentialField,
    pub grid: Grid,
    pub ham: HamiltonianSpec,
    pub t_steps: usize,
    pub replicas: usize,
    pub a_grid: Vec<f64>,
    /// Zero selects the inviscid solver.
    pub nu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFunctionEstimate {
    /// Slopes actually used (endpoint rounded to the nearest node).
    pub slopes: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub s_se: Vec<f64>,
    pub nu: f64,
    /// `(S0, curvature)` of `S(a) = S0 + curvature a² / 2`, with errors.
    pub quadratic_fit: (f64, f64),
    pub quadratic_se: (f64, f64),
    pub residual_rms: f64,
    /// Slope triples violating midpoint convexity by more than 3 SE.
    pub convexity_violations: usize,
    pub warnings: Vec<String>,
}

/// Point-source data one free step after a source at node 0: the nearest
/// image of `x²/(2 dt)`.
fn one_step_source(grid: &Grid, dt: f64, ham: &HamiltonianSpec) -> Vec<f64> {
    let n = grid.n as i64;
    (0..n)
        .map(|i| {
            let d = if i <= n / 2 { i } else { i - n };
            dt * ham.lagrangian(d as f64 * grid.h() / dt)
        })
        .collect()
}

fn point_to_point_values(cfg: &ShapeConfig, replica: u64, nodes: &[i64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let f = cfg.forcing.with_replica(replica);
    let grid = cfg.grid;
    let dt = f.dt;
    let kick1 = f.sample_kick(1, &grid)?;
    let psi: Vec<f64> = one_step_source(&grid, dt, &cfg.ham).iter().zip(&kick1).map(|(a, k)| a - k).collect();
    let half = cfg.t_steps / 2;
    let half_nodes: Vec<i64> = nodes.iter().map(|&j| (j as f64 * half as f64 / cfg.t_steps as f64).round() as i64).collect();
    let read = |phi: &dyn Fn(i64) -> f64, at: &[i64]| at.iter().map(|&j| phi(j)).collect::<Vec<f64>>();
    if cfg.nu > 0.0 {
        let vc = ViscousConfig::new(cfg.nu, grid, dt)?;
        let mut z = PartitionField::from_psi(grid, cfg.nu, 0.0, &psi, 1);
        let mut mid = Vec::new();
        for t in 2..=cfg.t_steps {
            z = evolve_viscous(&z, &f, &vc, 1)?.pop().expect("one step");
            if t == half {
                mid = read(&|j| -2.0 * cfg.nu * z.log_z_raw(wrap(j, grid.n), cfg.nu), &half_nodes);
            }
        }
        Ok((read(&|j| -2.0 * cfg.nu * z.log_z_raw(wrap(j, grid.n), cfg.nu), nodes), mid))
    } else {
        let mut s = SolutionField::from_psi(grid, dt, 0.0, psi, 1);
        let mut mid = Vec::new();
        for t in 2..=cfg.t_steps {
            let kick = f.sample_kick(t as i64, &grid)?;
            s = lax_oleinik_step(&s, &kick, &cfg.ham)?;
            s.normalize_gauge();
            if t == half {
                mid = read(&|j| s.phi_lifted(j), &half_nodes);
            }
        }
        Ok((read(&|j| s.phi_lifted(j), nodes), mid))
    }
}

/// Shape function `S(a) ~ A(a, T)/T` from point-to-point actions (or
/// `-2 nu log Z` when `nu > 0`) between `(0, 0)` and `(a T, T)`, averaged over
/// replicas. The curvature of a least-squares parabola is reported.
pub fn estimate_shape(cfg: &ShapeConfig) -> Result<ShapeFunctionEstimate> {
    cfg.ham.validate()?;
    if cfg.t_steps < 4 || cfg.replicas < 2 || cfg.a_grid.len() < 4 {
        return Err(config("shape estimate needs T >= 4, 2 replicas and 4 slopes"));
    }
    let grid = cfg.grid;
    let dt = cfg.forcing.dt;
    let t_phys = cfg.t_steps as f64 * dt;
    let h = grid.h();
    let nodes: Vec<i64> = cfg.a_grid.iter().map(|a| (a * t_phys / h).round() as i64).collect();
    if nodes.iter().any(|j| j.unsigned_abs() as usize >= grid.n / 2) {
        return Err(config("a T reaches half the period; enlarge the domain"));
    }
    let slopes: Vec<f64> = nodes.iter().map(|&j| j as f64 * h / t_phys).collect();
    let runs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..cfg.replicas as u64).into_par_iter().map(|r| point_to_point_values(cfg, r, &nodes)).collect::<Result<_>>()?;
    let r = runs.len() as f64;
    let mut s_hat = Vec::new();
    let mut s_se = Vec::new();
    let mut warnings = Vec::new();
    let t_half = (cfg.t_steps / 2) as f64 * dt;
    for k in 0..nodes.len() {
        let v: Vec<f64> = runs.iter().map(|run| run.0[k] / t_phys).collect();
        let m = v.iter().sum::<f64>() / r;
        let se = (crate::stats::sample_variance(&v) / r).sqrt();
        let vh: Vec<f64> = runs.iter().map(|run| run.1[k] / t_half).collect();
        let mh = vh.iter().sum::<f64>() / r;
        let seh = (crate::stats::sample_variance(&vh) / r).sqrt();
        if (m - mh).abs() > 3.0 * (se * se + seh * seh).sqrt() + 1e-12 {
            warnings.push(format!("slope {:.3}: S drifts from {mh:.4} at T/2 to {m:.4} at T; T may be too small", slopes[k]));
        }
        s_hat.push(m);
        s_se.push(se);
    }
    // errors of different slopes share replicas; an unweighted fit with the
    // jackknife over replicas handles the correlation
    let fit_coef = |gs: &[&(Vec<f64>, Vec<f64>)]| -> (f64, f64) {
        let y: Vec<f64> = (0..nodes.len()).map(|k| gs.iter().map(|g| g.0[k] / t_phys).sum::<f64>() / gs.len() as f64).collect();
        let p = polyfit(&slopes, &y, 2, None).expect("enough slopes");
        (p.coef[0], 2.0 * p.coef[2])
    };
    let all: Vec<&(Vec<f64>, Vec<f64>)> = runs.iter().collect();
    let (s0, curv) = fit_coef(&all);
    let (_, se0) = jackknife(&runs, |gs| fit_coef(gs).0);
    let (_, sec) = jackknife(&runs, |gs| fit_coef(gs).1);
    let mut convexity_violations = 0;
    for k in 1..nodes.len().saturating_sub(1) {
        let excess = s_hat[k] - 0.5 * (s_hat[k - 1] + s_hat[k + 1]);
        let se = (s_se[k].powi(2) + 0.25 * (s_se[k - 1].powi(2) + s_se[k + 1].powi(2))).sqrt();
        let even = (slopes[k] - slopes[k - 1] - (slopes[k + 1] - slopes[k])).abs() < 1e-9;
        if even && excess > 3.0 * se + 1e-12 {
            convexity_violations += 1;
        }
    }
    if convexity_violations > 0 {
        warnings.push(format!("{convexity_violations} slope triples break convexity beyond 3 SE"));
    }
    let resid: f64 = slopes.iter().zip(&s_hat).map(|(a, s)| (s - s0 - 0.5 * curv * a * a).powi(2)).sum::<f64>();
    Ok(ShapeFunctionEstimate {
        slopes,
        s_hat,
        s_se,
        nu: cfg.nu,
        quadratic_fit: (s0, curv),
        quadratic_se: (se0, sec),
        residual_rms: (resid / nodes.len() as f64).sqrt(),
        convexity_violations,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendreResult {
    pub b: Vec<f64>,
    pub h_eff: Vec<f64>,
    /// Maximising slope `a(b)`.
    pub argmax: Vec<f64>,
    /// Lower convex hull values of the input on its own grid.
    pub hull: Vec<f64>,
    /// Set when convexification moved a value by more than 3 SE.
    pub hull_flag: bool,
}

/// Lower convex hull of `(x, y)` evaluated back on `x`.
pub fn lower_hull(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..x.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; x.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (i, o) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            *o = y[a] + (y[b] - y[a]) * (x[i] - x[a]) / (x[b] - x[a]);
        }
    }
    if hull.len() == 1 {
        out[hull[0]] = y[hull[0]];
    }
    out
}

/// Discrete transform `H(b) = max_a [a b - S(a)]` over the convexified input.
/// Every `b` must lie within the slope range of the hull's end segments.
pub fn legendre_transform(a: &[f64], s: &[f64], s_se: Option<&[f64]>, b: &[f64]) -> Result<LegendreResult> {
    if a.len() < 2 || a.len() != s.len() || a.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("slopes must be increasing with one value each"));
    }
    let hull = lower_hull(a, s);
    let hull_flag = match s_se {
        Some(se) => hull.iter().zip(s).zip(se).any(|((hv, sv), e)| (sv - hv) > 3.0 * e),
        None => false,
    };
    let m = a.len();
    let lo_slope = (hull[1] - hull[0]) / (a[1] - a[0]);
    let hi_slope = (hull[m - 1] - hull[m - 2]) / (a[m - 1] - a[m - 2]);
    let mut h_eff = Vec::with_capacity(b.len());
    let mut argmax = Vec::with_capacity(b.len());
    for &bv in b {
        if bv < lo_slope - 1e-12 || bv > hi_slope + 1e-12 {
            return Err(Error::Domain(format!("b = {bv} outside the covered range [{lo_slope}, {hi_slope}]; widen the slope grid")));
        }
        let (k, v) = (0..m).map(|k| (k, a[k] * bv - hull[k])).fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        h_eff.push(v);
        argmax.push(a[k]);
    }
    Ok(LegendreResult { b: b.to_vec(), h_eff, argmax, hull, hull_flag })
}

// ---------------------------------------------------------------------------
// wandering and fluctuation exponents

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub forcing: PotentialField,
    pub grid: Grid,
    pub ham: HamiltonianSpec,
    /// Strictly increasing step counts at which to measure.
    pub t_list: Vec<usize>,
    pub replicas: usize,
    /// Endpoints are nodes `0, stride, 2 stride, ...`.
    pub endpoint_stride: usize,
    pub cluster_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReplica {
    /// `|x - gamma(0)|` of the point-to-line minimiser, per measured time.
    pub displacement: Vec<Vec<f64>>,
    /// Point-to-line action minus its spatial mean, per measured time.
    pub action: Vec<Vec<f64>>,
    /// Point-to-line action itself, gauge included.
    pub raw_action: Vec<Vec<f64>>,
    /// Dot density of the strip `[0, T]`; `None` when nothing has
    /// concentrated yet.
    pub dot_density: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingData {
    pub t_list: Vec<f64>,
    pub replicas: Vec<ScalingReplica>,
    pub warnings: Vec<String>,
}

/// Wandering-ratio guard: the period should exceed `8 T^(2/3)`.
pub fn period_guard(period: f64, t_max: f64) -> Option<String> {
    let need = 8.0 * t_max.powf(2.0 / 3.0);
    (period < need).then(|| format!("period {period} is below 8 T^(2/3) = {need:.1} for T = {t_max}; finite-size effects likely"))
}

/// One forward run per replica from flat data. At each listed time the
/// composite origin map gives point-to-line minimiser displacements and the
/// dot field, and `Phi` gives the point-to-line actions.
pub fn scaling_run(cfg: &ScalingConfig) -> Result<ScalingData> {
    cfg.ham.validate()?;
    if cfg.t_list.is_empty() || cfg.t_list.windows(2).any(|w| w[1] <= w[0]) || cfg.t_list[0] == 0 {
        return Err(config("t_list must be positive and strictly increasing"));
    }
    let grid = cfg.grid;
    let dt = cfg.forcing.dt;
    let t_max = *cfg.t_list.last().expect("non-empty");
    let mut warnings = Vec::new();
    if let Some(w) = period_guard(grid.period, t_max as f64 * dt) {
        warnings.push(w);
    }
    let stride = cfg.endpoint_stride.max(1);
    let ends: Vec<usize> = (0..grid.n).step_by(stride).collect();
    let h = grid.h();
    let replicas: Vec<ScalingReplica> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let f = cfg.forcing.with_replica(r);
            let mut s = SolutionField::flat(grid, dt, 0.0, 0);
            let mut tr = OriginTracker::new(grid, 0);
            let mut out = ScalingReplica { displacement: vec![], action: vec![], raw_action: vec![], dot_density: vec![] };
            let mut next = 0;
            for t in 1..=t_max {
                let kick = f.sample_kick(t as i64, &grid)?;
                s = lax_oleinik_step(&s, &kick, &cfg.ham)?;
                s.normalize_gauge();
                tr.advance(&s);
                if t == cfg.t_list[next] {
                    let disp: Vec<f64> = ends.iter().map(|&i| (i as i64 - tr.origins[i]).unsigned_abs() as f64 * h).collect();
                    if disp.iter().any(|&d| d >= 0.5 * grid.period) {
                        return Err(validation(format!("minimiser displacement wraps the period at T = {t}; enlarge P")));
                    }
                    let phi = s.phi();
                    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
                    out.displacement.push(disp);
                    out.action.push(ends.iter().map(|&i| phi[i] - mean).collect());
                    out.raw_action.push(ends.iter().map(|&i| phi[i]).collect());
                    let dens = match strip_from_origins(&grid, &tr.origins, t as f64 * dt, 0.0, cfg.cluster_tol) {
                        Ok(e) => Some(e.strip.cross_density()),
                        Err(Error::Resolution(_)) => None,
                        Err(e) => return Err(e),
                    };
                    out.dot_density.push(dens);
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(ScalingData { t_list: cfg.t_list.iter().map(|&t| t as f64 * dt).collect(), replicas, warnings })
}

/// Wandering exponent from the median absolute displacement. `groups[r][k]`
/// holds replica `r`'s samples at time `t_list[k]`.
pub fn estimate_xi_from_samples(t_list: &[f64], groups: &[Vec<Vec<f64>>], fit_range: Option<(f64, f64)>) -> Result<ExponentEstimate> {
    let agg = |gs: &[&Vec<Vec<f64>>], k: usize| {
        let pooled: Vec<f64> = gs.iter().flat_map(|g| g[k].iter().map(|v| v.abs())).collect();
        median(&pooled)
    };
    let range = pick_range(t_list, groups, &agg, fit_range)?;
    let (fit, se) = jackknife_slope(t_list, groups, range, agg)?;
    Ok(ExponentEstimate::new("xi", fit.slope, se, (t_list[range.0], t_list[range.1]), groups.len()).with("r2", fit.r2))
}

/// Fluctuation exponent: half the log-log slope of the pooled sample
/// variance. `groups[r][k]` holds replica `r`'s action samples at `t_list[k]`.
pub fn estimate_chi_from_samples(t_list: &[f64], groups: &[Vec<Vec<f64>>], fit_range: Option<(f64, f64)>) -> Result<ExponentEstimate> {
    let agg = |gs: &[&Vec<Vec<f64>>], k: usize| {
        let pooled: Vec<f64> = gs.iter().flat_map(|g| g[k].iter().copied()).collect();
        crate::stats::sample_variance(&pooled)
    };
    let range = pick_range(t_list, groups, &agg, fit_range)?;
    let (fit, se) = jackknife_slope(t_list, groups, range, agg)?;
    Ok(ExponentEstimate::new("chi", 0.5 * fit.slope, 0.5 * se, (t_list[range.0], t_list[range.1]), groups.len()).with("r2", fit.r2))
}

/// Both wandering routes: displacement, and dot density when the run
/// recorded one at four or more times.
pub fn estimate_xi(data: &ScalingData, fit_range: Option<(f64, f64)>) -> Result<(ExponentEstimate, Option<ExponentEstimate>)> {
    let groups: Vec<Vec<Vec<f64>>> = data.replicas.iter().map(|r| r.displacement.clone()).collect();
    let disp = estimate_xi_from_samples(&data.t_list, &groups, fit_range)?;
    let valid: Vec<usize> = (0..data.t_list.len())
        .filter(|&k| data.replicas.iter().all(|r| r.dot_density.get(k).copied().flatten().is_some()))
        .collect();
    if valid.len() < 4 {
        return Ok((disp, None));
    }
    let t: Vec<f64> = valid.iter().map(|&k| data.t_list[k]).collect();
    let dens: Vec<Vec<f64>> = data.replicas.iter().map(|r| valid.iter().map(|&k| r.dot_density[k].unwrap_or(f64::NAN)).collect()).collect();
    let agg = |gs: &[&Vec<f64>], k: usize| gs.iter().map(|g| g[k]).sum::<f64>() / gs.len() as f64;
    let range = match pick_range(&t, &dens, &agg, fit_range) {
        Ok(r) => r,
        Err(Error::InsufficientStatistics(_)) => return Ok((disp, None)),
        Err(e) => return Err(e),
    };
    let (fit, se) = jackknife_slope(&t, &dens, range, agg)?;
    let density = ExponentEstimate::new("xi", -fit.slope, se, (t[range.0], t[range.1]), dens.len()).with("r2", fit.r2).with("density_route", 1.0);
    Ok((disp, Some(density)))
}

/// Which action samples feed the fluctuation exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChiRoute {
    /// Replica variance of the point-to-line action at fixed endpoints.
    PointToLine,
    /// Spatial roughness: action minus its mean over the period.
    Centered,
}

pub fn estimate_chi(data: &ScalingData, route: ChiRoute, fit_range: Option<(f64, f64)>) -> Result<ExponentEstimate> {
    if data.replicas.iter().any(|r| r.raw_action.len() != data.t_list.len() || r.action.len() != data.t_list.len()) {
        return Err(Error::InsufficientStatistics("the run stored no actions".into()));
    }
    let groups: Vec<Vec<Vec<f64>>> = data
        .replicas
        .iter()
        .map(|r| match route {
            ChiRoute::PointToLine => r.raw_action.clone(),
            ChiRoute::Centered => r.action.clone(),
        })
        .collect();
    estimate_chi_from_samples(&data.t_list, &groups, fit_range)
}

/// `chi - (2 xi - 1)` and its joint standard error, treating the two
/// estimates as independent.
pub fn scaling_relation(xi: &ExponentEstimate, chi: &ExponentEstimate) -> (f64, f64) {
    (chi.value - (2.0 * xi.value - 1.0), (chi.stderr.powi(2) + 4.0 * xi.stderr.powi(2)).sqrt())
}

// ---------------------------------------------------------------------------
// Brownian increments of the global solution

/// `Phi(0, .)` of the zero-slope global solution, one slice per replica,
/// approximated by a pullback run from flat data at time `-pullback_steps`.
pub fn global_solution_slices(
    forcing: &PotentialField,
    grid: Grid,
    ham: &HamiltonianSpec,
    pullback_steps: usize,
    replicas: usize,
) -> Result<Vec<Vec<f64>>> {
    ham.validate()?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let f = forcing.with_replica(r);
            let t0 = -(pullback_steps as i64);
            let mut s = SolutionField::flat(grid, f.dt, 0.0, t0);
            for t in (t0 + 1)..=0 {
                s = lax_oleinik_step(&s, &f.sample_kick(t, &grid)?, ham)?;
                s.normalize_gauge();
            }
            // the gauge is irrelevant for increments
            Ok(s.psi.clone())
        })
        .collect()
}

/// Endpoint displacements of the free polymer (Brownian motion with
/// diffusivity `nu`, variance `2 nu T`), laid out like [`ScalingReplica`]
/// displacements: `out[r][k]` holds replica `r`'s samples at `t_list[k]`.
pub fn free_polymer_displacements(seed: u64, nu: f64, t_list: &[f64], replicas: usize, paths: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    use rand_distr::{Distribution, StandardNormal};
    if !(nu > 0.0) || t_list.windows(2).any(|w| w[1] <= w[0]) || t_list.first().is_none_or(|&t| t <= 0.0) {
        return Err(config("free polymer needs nu > 0 and increasing positive times"));
    }
    Ok((0..replicas as u64)
        .map(|r| {
            let mut rng = crate::rng::substream(seed, crate::rng::Stream::Synthetic, r, 20);
            let mut out = vec![Vec::with_capacity(paths); t_list.len()];
            for _ in 0..paths {
                let mut x = 0.0;
                let mut prev = 0.0;
                for (k, &t) in t_list.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x += z * (2.0 * nu * (t - prev)).sqrt();
                    prev = t;
                    out[k].push(x);
                }
            }
            out
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub estimate: ExponentEstimate,
    pub r2: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    /// Set when the variance is visibly nonlinear in the lag (R² < 0.95).
    pub nonlinear_flag: bool,
}

fn increment_variance(slices: &[&Vec<f64>], lag: usize) -> f64 {
    let mut s = 0.0;
    let mut s2 = 0.0;
    let mut c = 0.0;
    for f in slices {
        for i in 0..f.len().saturating_sub(lag) {
            let d = f[i + lag] - f[i];
            s += d;
            s2 += d * d;
            c += 1.0;
        }
    }
    let m = s / c;
    s2 / c - m * m
}

/// `sigma` from `Var(Phi(x + l) - Phi(x)) = sigma² l` over lags `lags` (in
/// nodes of spacing `h`), fitted by least squares; the error is a jackknife
/// over slices. Increments at the largest lag are tested for Gaussianity.
pub fn estimate_sigma(slices: &[Vec<f64>], h: f64, lags: &[usize]) -> Result<SigmaReport> {
    if slices.len() < 2 || lags.len() < 3 {
        return Err(Error::InsufficientStatistics("need 2 slices and 3 lags".into()));
    }
    let x: Vec<f64> = lags.iter().map(|&l| l as f64 * h).collect();
    let fit_of = |gs: &[&Vec<f64>]| -> Result<LinearFit> {
        let y: Vec<f64> = lags.iter().map(|&l| increment_variance(gs, l)).collect();
        ols(&x, &y)
    };
    let all: Vec<&Vec<f64>> = slices.iter().collect();
    let fit = fit_of(&all)?;
    if !(fit.slope > 0.0) {
        return Err(Error::Degenerate("increment variance does not grow with the lag".into()));
    }
    let sigma = fit.slope.sqrt();
    let (_, se) = jackknife(slices, |gs| fit_of(gs).map(|f| f.slope.max(0.0).sqrt()).unwrap_or(f64::NAN));
    let lmax = *lags.iter().max().expect("non-empty");
    let incs: Vec<f64> = slices.iter().flat_map(|f| (0..f.len().saturating_sub(lmax)).map(move |i| f[i + lmax] - f[i])).collect();
    let m = incs.iter().sum::<f64>() / incs.len() as f64;
    let sd = crate::stats::sample_variance(&incs).sqrt();
    let ks = crate::stats::ks_one_sample(&incs, |v| 0.5 * libm::erfc(-(v - m) / (sd * std::f64::consts::SQRT_2)));
    let pv = crate::stats::kolmogorov_pvalue(ks * (incs.len() as f64).sqrt());
    Ok(SigmaReport {
        estimate: ExponentEstimate::new("sigma", sigma, se, (x[0], x[x.len() - 1]), slices.len()),
        r2: fit.r2,
        ks_statistic: ks,
        ks_pvalue: pv,
        nonlinear_flag: fit.r2 < 0.95,
    })
}

// ---------------------------------------------------------------------------
// shock and minimiser ages

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeRunConfig {
    pub forcing: PotentialField,
    pub grid: Grid,
    pub ham: HamiltonianSpec,
    pub burn_in: usize,
    pub horizon: usize,
    pub sample_every: usize,
    pub jump_threshold: usize,
    pub merge_radius: f64,
    pub replicas: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgeData {
    /// Ages (in time units) of shocks present at sampling times.
    pub shock_ages: Vec<f64>,
    /// Shocks alive since the first tracked step, whose age is unknown.
    pub censored: usize,
    pub births: usize,
    pub deaths: usize,
    /// Times for which grid points at the end of burn-in remain origins of
    /// minimisers from later times.
    pub minimiser_lifetimes: Vec<f64>,
    pub minimiser_censored: usize,
    pub snapshots: usize,
}

impl AgeData {
    fn merge(mut self, o: AgeData) -> Self {
        self.shock_ages.extend(o.shock_ages);
        self.minimiser_lifetimes.extend(o.minimiser_lifetimes);
        self.censored += o.censored;
        self.births += o.births;
        self.deaths += o.deaths;
        self.minimiser_censored += o.minimiser_censored;
        self.snapshots += o.snapshots;
        self
    }

    /// Relative imbalance of shock births and deaths.
    pub fn rate_imbalance(&self) -> f64 {
        (self.births as f64 - self.deaths as f64).abs() / (self.births.max(self.deaths).max(1)) as f64
    }
}

fn age_replica(cfg: &AgeRunConfig, r: u64) -> Result<AgeData> {
    let f = cfg.forcing.with_replica(r);
    let grid = cfg.grid;
    let dt = f.dt;
    let mut s = SolutionField::flat(grid, dt, 0.0, 0);
    for t in 1..=cfg.burn_in {
        s = lax_oleinik_step(&s, &f.sample_kick(t as i64, &grid)?, &cfg.ham)?;
        s.normalize_gauge();
    }
    let start = cfg.burn_in as i64 + 1;
    let mut data = AgeData::default();
    let mut shocks: Vec<ShockRecord> = Vec::new();
    let mut tr = OriginTracker::new(grid, cfg.burn_in as i64);
    let mut alive = vec![true; grid.n];
    let mut n_alive = grid.n;
    for t in start..=(cfg.burn_in + cfg.horizon) as i64 {
        s = lax_oleinik_step(&s, &f.sample_kick(t, &grid)?, &cfg.ham)?;
        s.normalize_gauge();
        let fresh = detect_shocks(&s, cfg.jump_threshold, 0.0);
        let tracked = if t == start {
            fresh
        } else {
            let merged = track_shocks(&shocks, &fresh, cfg.merge_radius, grid.period)?;
            let born = merged.iter().filter(|q| q.birth_time == t).count();
            data.births += born;
            data.deaths += (shocks.len() + born).saturating_sub(merged.len());
            merged
        };
        shocks = tracked;
        if ((t - start) as usize).is_multiple_of(cfg.sample_every.max(1)) && t > start {
            data.snapshots += 1;
            for q in &shocks {
                if q.birth_time == start {
                    data.censored += 1;
                } else {
                    data.shock_ages.push((q.age() + 1) as f64 * dt);
                }
            }
        }
        tr.advance(&s);
        let mut hit = vec![false; grid.n];
        for &o in &tr.origins {
            hit[wrap(o, grid.n)] = true;
        }
        for i in 0..grid.n {
            if alive[i] && !hit[i] {
                alive[i] = false;
                n_alive -= 1;
                data.minimiser_lifetimes.push((t - start) as f64 * dt);
            }
        }
    }
    data.minimiser_censored = n_alive;
    Ok(data)
}

/// Tracks shocks after burn-in and records their ages at regular sampling
/// times, along with the lifetimes of minimiser origins.
pub fn shock_age_run(cfg: &AgeRunConfig) -> Result<AgeData> {
    cfg.ham.validate()?;
    let parts: Vec<AgeData> = (0..cfg.replicas as u64).into_par_iter().map(|r| age_replica(cfg, r)).collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(AgeData::default(), AgeData::merge))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeTailReport {
    pub estimate: ExponentEstimate,
    /// Quadratic coefficient of `ln q` in `ln a` and its standard error.
    pub curvature: f64,
    pub curvature_se: f64,
    pub curvature_p: f64,
    pub power_law_rejected: bool,
    pub tail_events: usize,
    /// `(bin centre, density, count)` of the log-binned histogram.
    pub bins: Vec<(f64, f64, usize)>,
}

/// Log-binned age density `q(a)` and its power-law slope over `fit_range`
/// (default: from `a_min` to the last bin holding at least 5 events).
/// Bins are weighted by Poisson errors; the slope error is the weighted-fit
/// error. A significant quadratic term in `ln q` versus `ln a` (two-sided
/// p < 0.05) rejects the power law.
///
/// Ages living on a lattice of spacing `lattice` get bin widths counted in
/// lattice points, which removes the staircase bias of narrow bins.
pub fn age_tail(
    ages: &[f64],
    bins_per_decade: usize,
    a_min: f64,
    fit_range: Option<(f64, f64)>,
    lattice: Option<f64>,
) -> Result<AgeTailReport> {
    let ages: Vec<f64> = ages.iter().copied().filter(|&a| a >= a_min).collect();
    let amax = ages.iter().copied().fold(0.0, f64::max);
    if ages.is_empty() || !(amax > a_min) {
        return Err(Error::InsufficientStatistics("no ages above the minimum".into()));
    }
    let step = 10f64.powf(1.0 / bins_per_decade.max(1) as f64);
    let mut edges = vec![a_min];
    while *edges.last().expect("non-empty") <= amax {
        let e = edges.last().expect("non-empty") * step;
        edges.push(e);
    }
    let mut counts = vec![0usize; edges.len() - 1];
    for &a in &ages {
        let k = edges.partition_point(|&e| e <= a) - 1;
        let last = counts.len() - 1;
        counts[k.min(last)] += 1;
    }
    let bins: Vec<(f64, f64, usize)> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let width = match lattice {
                // lattice points in [lo, hi)
                Some(d) => d * ((edges[k + 1] / d - 1e-9).ceil() - (edges[k] / d - 1e-9).ceil()).max(1.0),
                None => edges[k + 1] - edges[k],
            };
            ((edges[k] * edges[k + 1]).sqrt(), c as f64 / width, c)
        })
        .collect();
    let (lo, hi) = fit_range.unwrap_or_else(|| {
        let last = bins.iter().rposition(|b| b.2 >= 5).map(|k| edges[k + 1]).unwrap_or(amax);
        (a_min, last)
    });
    let used: Vec<&(f64, f64, usize)> = bins.iter().filter(|b| b.0 >= lo && b.0 <= hi && b.2 > 0).collect();
    let tail_events: usize = used.iter().map(|b| b.2).sum();
    if tail_events < 100 {
        return Err(Error::InsufficientStatistics(format!("{tail_events} tail events; need at least 100")));
    }
    if used.len() < 4 {
        return Err(Error::InsufficientStatistics(format!("{} populated bins in the fit range; need 4", used.len())));
    }
    let x: Vec<f64> = used.iter().map(|b| b.0.ln()).collect();
    let y: Vec<f64> = used.iter().map(|b| b.1.ln()).collect();
    let sig: Vec<f64> = used.iter().map(|b| 1.0 / (b.2 as f64).sqrt()).collect();
    let lin = polyfit(&x, &y, 1, Some(&sig))?;
    let quad = polyfit(&x, &y, 2, Some(&sig))?;
    let z = quad.coef[2] / quad.se[2];
    let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(AgeTailReport {
        estimate: ExponentEstimate::new("age_tail", lin.coef[1], lin.se[1], (lo, hi), 0).with("chi2_linear", lin.rss),
        curvature: quad.coef[2],
        curvature_se: quad.se[2],
        curvature_p: p,
        power_law_rejected: p < 0.05,
        tail_events,
        bins,
    })
}

// ---------------------------------------------------------------------------
// backward contraction of minimisers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub forcing: PotentialField,
    pub grid: Grid,
    pub ham: HamiltonianSpec,
    pub horizon: usize,
    /// Initial separations in length units.
    pub separations: Vec<f64>,
    pub pairs_per_separation: usize,
    pub replicas: usize,
    /// Distance window `(lo, hi)` over which the exponential rate is read.
    pub window: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub lambda: ExponentEstimate,
    /// Exponent of the median merge time against the initial separation.
    pub onset: Option<ExponentEstimate>,
    pub excluded_pairs: usize,
}

struct PairOutcome {
    sep_index: usize,
    merge_time: Option<f64>,
    rate: Option<f64>,
}

fn lyapunov_replica(cfg: &LyapunovConfig, r: u64) -> Result<Vec<PairOutcome>> {
    let f = cfg.forcing.with_replica(r);
    let grid = cfg.grid;
    let n = grid.n as i64;
    let h = grid.h();
    let dt = f.dt;
    let fields = evolve(&SolutionField::flat(grid, dt, 0.0, 0), &f, &cfg.ham, cfg.horizon)?;
    let trace = |mut idx: i64| -> Vec<i64> {
        let mut out = Vec::with_capacity(fields.len());
        out.push(idx);
        for k in (1..fields.len()).rev() {
            let rr = wrap(idx, grid.n);
            idx = fields[k].backpointers[rr] + (idx - rr as i64);
            out.push(idx);
        }
        out
    };
    let mut out = Vec::new();
    for (si, &sep) in cfg.separations.iter().enumerate() {
        let d0 = (sep / h).round() as i64;
        for p in 0..cfg.pairs_per_separation {
            let i = (p as i64 * n) / cfg.pairs_per_separation as i64;
            let a = trace(i);
            let b = trace(i + d0);
            let dist: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (y - x) as f64 * h).collect();
            let merge = dist.iter().position(|&d| d <= 0.0);
            let first_below = |thr: f64| dist.iter().position(|&d| d <= thr);
            let rate = match (first_below(cfg.window.1), first_below(cfg.window.0)) {
                (Some(k1), Some(k2)) if k2 > k1 && dist[k1] > 0.0 && dist[k2] > 0.0 => Some((dist[k1] / dist[k2]).ln() / ((k2 - k1) as f64 * dt)),
                _ => None,
            };
            out.push(PairOutcome { sep_index: si, merge_time: merge.map(|k| k as f64 * dt), rate });
        }
    }
    Ok(out)
}

/// Rate of exponential approach of backward minimisers from nearby
/// endpoints, read while their distance crosses `window`, and the scaling of
/// merge times with the initial separation. Pairs merging within one step
/// are excluded.
pub fn estimate_lyapunov(cfg: &LyapunovConfig) -> Result<LyapunovReport> {
    cfg.ham.validate()?;
    if cfg.replicas < 2 {
        return Err(Error::InsufficientStatistics("need at least 2 replicas".into()));
    }
    let reps: Vec<Vec<PairOutcome>> = (0..cfg.replicas as u64).into_par_iter().map(|r| lyapunov_replica(cfg, r)).collect::<Result<_>>()?;
    let dt = cfg.forcing.dt;
    let excluded = reps.iter().flatten().filter(|p| p.merge_time.is_some_and(|m| m <= dt)).count();
    let mean_rate = |gs: &[&Vec<PairOutcome>]| {
        let v: Vec<f64> = gs.iter().flat_map(|g| g.iter().filter(|p| !p.merge_time.is_some_and(|m| m <= dt)).filter_map(|p| p.rate)).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let all: Vec<&Vec<PairOutcome>> = reps.iter().collect();
    let lambda = mean_rate(&all);
    if !lambda.is_finite() {
        return Err(Error::InsufficientStatistics("no pair crossed the distance window".into()));
    }
    let (_, se) = jackknife(&reps, mean_rate);
    let n_rates = reps.iter().flatten().filter(|p| p.rate.is_some()).count();
    let lam = ExponentEstimate::new("lyapunov", lambda, se, cfg.window, cfg.replicas).with("pairs", n_rates as f64);
    let seps = &cfg.separations;
    let onset = if seps.len() >= 3 {
        let med = |gs: &[&Vec<PairOutcome>], k: usize| {
            let v: Vec<f64> = gs.iter().flat_map(|g| g.iter().filter(|p| p.sep_index == k && p.merge_time.is_some_and(|m| m > dt)).filter_map(|p| p.merge_time)).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                median(&v)
            }
        };
        let ok = (0..seps.len()).all(|k| med(&all, k).is_finite());
        if ok {
            jackknife_slope(seps, &reps, (0, seps.len() - 1), med)
                .ok()
                .map(|(fit, se)| ExponentEstimate::new("onset", fit.slope, se, (seps[0], seps[seps.len() - 1]), cfg.replicas).with("r2", fit.r2))
        } else {
            None
        }
    } else {
        None
    };
    Ok(LyapunovReport { lambda: lam, onset, excluded_pairs: excluded })
}
