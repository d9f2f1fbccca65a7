//! Polymer measures on lattice paths.
//!
//! A path visits levels `0..=L`, `L = n_kicks * substeps`, with spacing
//! `delta = dt / substeps`; level 0 is time 0 (terminal data `Phi_0`) and level
//! `L` is the endpoint. Kick `j` acts at level `j * substeps`. The free measure
//! is the lattice Gaussian walk of variance `2 nu delta` per level, and the
//! polymer energy is `E = (1/2nu) [ -sum_j F_j(x_{j m}) + Phi_0(x_0) ]`.

use crate::error::{config, validation, Error, Result};
use crate::forcing::PotentialField;
use crate::grid::Grid;
use crate::rng::{substream, Stream};
use crate::spectral::signed_index;
use crate::viscous::{heat_step, kick_step, log_heat_kernel, velocity_from_z, GradientMethod, PartitionField, VelocityField, ViscousConfig};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePathSpace {
    pub grid: Grid,
    pub nu: f64,
    pub dt: f64,
    pub substeps: usize,
    pub n_kicks: usize,
    /// `log K(d)` for displacement `d` mod `n`, variance `2 nu delta`.
    pub log_kernel: Vec<f64>,
}

impl LatticePathSpace {
    pub fn new(grid: Grid, nu: f64, dt: f64, substeps: usize, n_kicks: usize) -> Result<Self> {
        if !(nu > 0.0) || !(dt > 0.0) || substeps == 0 || n_kicks == 0 {
            return Err(config("path space needs nu > 0, dt > 0, substeps >= 1, n_kicks >= 1"));
        }
        let delta = dt / substeps as f64;
        let log_kernel = log_heat_kernel(&grid, 2.0 * nu * delta, 0.0);
        Ok(Self { grid, nu, dt, substeps, n_kicks, log_kernel })
    }

    pub fn levels(&self) -> usize {
        self.n_kicks * self.substeps
    }

    pub fn delta(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    /// Kick index acting at `level`, if any.
    pub fn kick_at(&self, level: usize) -> Option<usize> {
        (level > 0 && level.is_multiple_of(self.substeps)).then(|| level / self.substeps)
    }

    fn kernel(&self) -> Vec<f64> {
        self.log_kernel.iter().map(|v| v.exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyFunctional {
    /// `kicks[j - 1]` is `F_j` on the grid.
    pub kicks: Vec<Vec<f64>>,
    pub phi0: Vec<f64>,
    pub nu: f64,
}

impl EnergyFunctional {
    pub fn from_forcing(forcing: &PotentialField, space: &LatticePathSpace, phi0: Vec<f64>) -> Result<Self> {
        let kicks = (1..=space.n_kicks as i64).map(|j| forcing.sample_kick(j, &space.grid)).collect::<Result<_>>()?;
        Ok(Self { kicks, phi0, nu: space.nu })
    }

    pub fn zero(space: &LatticePathSpace) -> Self {
        Self { kicks: vec![vec![0.0; space.grid.n]; space.n_kicks], phi0: vec![0.0; space.grid.n], nu: space.nu }
    }

    fn check(&self, space: &LatticePathSpace) -> Result<()> {
        let n = space.grid.n;
        if self.kicks.len() != space.n_kicks || self.kicks.iter().any(|k| k.len() != n) || self.phi0.len() != n {
            return Err(config("energy functional does not match the path space"));
        }
        Ok(())
    }

    /// `log` weight added at `level` (kick contribution `F / 2 nu`).
    fn kick_term(&self, space: &LatticePathSpace, level: usize, x: usize) -> f64 {
        space.kick_at(level).map_or(0.0, |j| self.kicks[j - 1][x] / (2.0 * self.nu))
    }

    /// `E(path)` for a path given as node indices at every level.
    pub fn energy(&self, space: &LatticePathSpace, path: &[usize]) -> f64 {
        let mut e = self.phi0[path[0]];
        for (level, &x) in path.iter().enumerate() {
            if let Some(j) = space.kick_at(level) {
                e -= self.kicks[j - 1][x];
            }
        }
        e / (2.0 * self.nu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMeasure {
    /// `marginals[level][node]`.
    pub marginals: Vec<Vec<f64>>,
    /// `pair_marginals[level - 1][y * n + x]` for the step `level-1 -> level`.
    pub pair_marginals: Option<Vec<Vec<f64>>>,
    /// `ln Z` (zero for chains defined by transition kernels).
    pub log_normalizer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    pub average_energy: f64,
    pub entropy: f64,
    pub free_energy: f64,
    pub reference: f64,
}

fn normalise_log(v: &[f64]) -> (f64, Vec<f64>) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (m, v.iter().map(|x| (x - m).exp()).collect())
}

/// `out(x) = sum_y K(x - y) v(y)` (the kernel is symmetric).
fn apply_kernel(kernel: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|x| {
            let mut s = 0.0;
            for y in 0..n {
                if v[y] != 0.0 {
                    s += kernel[(x + n - y) % n] * v[y];
                }
            }
            s
        })
        .collect()
}

/// Forward log weights `a_l(x)`: all partial paths from level 0 ending at
/// `(l, x)`, including kicks at levels `<= l` and the terminal term.
fn forward_logs(space: &LatticePathSpace, energy: &EnergyFunctional) -> Vec<Vec<f64>> {
    let n = space.grid.n;
    let kernel = space.kernel();
    let mut out = Vec::with_capacity(space.levels() + 1);
    out.push(energy.phi0.iter().map(|p| -p / (2.0 * energy.nu)).collect::<Vec<f64>>());
    for level in 1..=space.levels() {
        let (m, v) = normalise_log(out.last().expect("non-empty"));
        let s = apply_kernel(&kernel, &v);
        out.push((0..n).map(|x| m + s[x].ln() + energy.kick_term(space, level, x)).collect());
    }
    out
}

/// Backward log weights `b_l(x)`: continuations from `(l, x)` to the endpoint,
/// including kicks at levels `> l`.
fn backward_logs(space: &LatticePathSpace, energy: &EnergyFunctional, endpoint: usize) -> Vec<Vec<f64>> {
    let n = space.grid.n;
    let kernel = space.kernel();
    let levels = space.levels();
    let mut out = vec![Vec::new(); levels + 1];
    let mut b = vec![f64::NEG_INFINITY; n];
    b[endpoint] = 0.0;
    out[levels] = b;
    for level in (1..=levels).rev() {
        let w: Vec<f64> = (0..n).map(|x| out[level][x] + energy.kick_term(space, level, x)).collect();
        let (m, v) = normalise_log(&w);
        let s = apply_kernel(&kernel, &v);
        out[level - 1] = s.iter().map(|v| m + v.ln()).collect();
    }
    out
}

/// Exact Gibbs marginals by forward/backward transfer sweeps.
pub fn gibbs_exact(space: &LatticePathSpace, energy: &EnergyFunctional, endpoint: usize, with_pairs: bool) -> Result<PathMeasure> {
    energy.check(space)?;
    let n = space.grid.n;
    if endpoint >= n {
        return Err(config(format!("endpoint {endpoint} outside the grid")));
    }
    let a = forward_logs(space, energy);
    let b = backward_logs(space, energy, endpoint);
    let levels = space.levels();
    let log_z = a[levels][endpoint];
    if !log_z.is_finite() {
        return Err(Error::Numeric("log partition function is not finite".into()));
    }
    let marginals: Vec<Vec<f64>> = (0..=levels).map(|l| (0..n).map(|x| (a[l][x] + b[l][x] - log_z).exp()).collect()).collect();
    let pair_marginals = with_pairs.then(|| {
        (1..=levels)
            .map(|l| {
                let mut p = vec![0.0; n * n];
                for y in 0..n {
                    for x in 0..n {
                        let v = a[l - 1][y] + space.log_kernel[(x + n - y) % n] + energy.kick_term(space, l, x) + b[l][x] - log_z;
                        p[y * n + x] = v.exp();
                    }
                }
                p
            })
            .collect()
    });
    Ok(PathMeasure { marginals, pair_marginals, log_normalizer: log_z })
}

/// Velocity fields `u_l`, `l = 0..L-1`, of the viscous solution on the path
/// lattice: heat steps of length `delta` with kicks every `substeps` levels.
pub fn viscous_controls(space: &LatticePathSpace, energy: &EnergyFunctional) -> Result<Vec<VelocityField>> {
    energy.check(space)?;
    let cfg = ViscousConfig::new(space.nu, space.grid, space.delta())?;
    let psi: Vec<f64> = energy.phi0.clone();
    let mut z = PartitionField::from_psi(space.grid, space.nu, 0.0, &psi, 0);
    let mut out = Vec::with_capacity(space.levels());
    for level in 1..=space.levels() {
        out.push(velocity_from_z(&z, &cfg, GradientMethod::Spectral));
        z = heat_step(&z, &cfg)?;
        if let Some(j) = space.kick_at(level) {
            z = kick_step(&z, &energy.kicks[j - 1], &cfg)?;
        } else {
            z.time_index += 1;
        }
    }
    Ok(out)
}

/// Marginals of the backward Markov chain whose step `l -> l-1` from `x` has
/// weights `K(y - x) exp(-u_{l-1}(x) (y - x) / 2 nu)`, row-normalised.
pub fn controlled_chain(space: &LatticePathSpace, u_fields: &[VelocityField], endpoint: usize) -> Result<PathMeasure> {
    let n = space.grid.n;
    let levels = space.levels();
    if u_fields.len() != levels || u_fields.iter().any(|u| u.u.len() != n) {
        return Err(config(format!("expected {levels} velocity fields on {n} nodes")));
    }
    let h = space.grid.h();
    let delta = space.delta();
    let bandwidth = (2.0 * space.nu * delta).sqrt();
    let disp: Vec<f64> = (0..n).map(|d| signed_index(d, n) as f64 * h).collect();
    let mut marginals = vec![vec![0.0; n]; levels + 1];
    marginals[levels][endpoint] = 1.0;
    for level in (1..=levels).rev() {
        let u = &u_fields[level - 1].u;
        if let Some(x) = (0..n).find(|&x| u[x].abs() * delta > bandwidth) {
            return Err(Error::Resolution(format!(
                "drift step {} at level {level}, node {x} exceeds the kernel bandwidth {bandwidth}",
                u[x].abs() * delta
            )));
        }
        let upper = marginals[level].clone();
        let lower = &mut marginals[level - 1];
        let mut row = vec![0.0; n];
        for x in 0..n {
            if upper[x] == 0.0 {
                continue;
            }
            let c = -u[x] / (2.0 * space.nu);
            for d in 0..n {
                row[d] = space.log_kernel[d] + c * disp[d];
            }
            let (_, w) = normalise_log(&row);
            let s: f64 = w.iter().sum();
            for d in 0..n {
                lower[(x + d) % n] += upper[x] * w[d] / s;
            }
        }
    }
    Ok(PathMeasure { marginals, pair_marginals: None, log_normalizer: 0.0 })
}

/// Total variation distance `1/2 sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Largest total variation between two measures over the kick levels
/// (including level 0).
pub fn max_tv_at_kicks(space: &LatticePathSpace, p: &PathMeasure, q: &PathMeasure) -> f64 {
    (0..=space.n_kicks)
        .map(|j| total_variation(&p.marginals[j * space.substeps], &q.marginals[j * space.substeps]))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolymerSamples {
    /// `paths[sample][j]` is the lifted position at kick time `j` (`j = 0` is time 0).
    pub paths: Vec<Vec<f64>>,
    pub flagged: Vec<bool>,
}

fn interp_periodic(u: &[f64], grid: &Grid, x: f64) -> f64 {
    let n = grid.n;
    let s = (x / grid.h()).rem_euclid(n as f64);
    let i = s.floor() as usize % n;
    let t = s - s.floor();
    (1.0 - t) * u[i] + t * u[(i + 1) % n]
}

/// Euler–Maruyama for the reversed-time polymer diffusion
/// `X_{l-1} = X_l - u_{l-1}(X_l) delta + sqrt(2 nu delta) xi`, with `u`
/// linearly interpolated in space. Samples whose drift step ever exceeds the
/// kernel bandwidth are kept and flagged.
pub fn sample_polymer_sde(
    space: &LatticePathSpace,
    u_fields: &[VelocityField],
    endpoint_x: f64,
    n_samples: usize,
    seed: u64,
) -> Result<PolymerSamples> {
    let levels = space.levels();
    if u_fields.len() != levels {
        return Err(config(format!("expected {levels} velocity fields")));
    }
    let delta = space.delta();
    let sd = (2.0 * space.nu * delta).sqrt();
    let results: Vec<(Vec<f64>, bool)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, Stream::Polymer, s as u64, 0);
            let mut x = endpoint_x;
            let mut flagged = false;
            let mut at_kicks = vec![0.0; space.n_kicks + 1];
            at_kicks[space.n_kicks] = x;
            for level in (1..=levels).rev() {
                let u = interp_periodic(&u_fields[level - 1].u, &space.grid, x);
                if (u * delta).abs() > sd {
                    flagged = true;
                }
                let xi: f64 = StandardNormal.sample(&mut rng);
                x += -u * delta + sd * xi;
                if (level - 1) % space.substeps == 0 {
                    at_kicks[(level - 1) / space.substeps] = x;
                }
            }
            (at_kicks, flagged)
        })
        .collect();
    let (paths, flagged) = results.into_iter().unzip();
    Ok(PolymerSamples { paths, flagged })
}

/// All lattice paths with their free-measure weights `mu` and energies.
#[derive(Clone, Debug)]
pub struct PathTable {
    pub paths: Vec<Vec<usize>>,
    pub mu: Vec<f64>,
    pub energy: Vec<f64>,
}

/// Enumerates every path ending at `endpoint`; limited to 10^6 paths.
pub fn enumerate_paths(space: &LatticePathSpace, energy: &EnergyFunctional, endpoint: usize) -> Result<PathTable> {
    energy.check(space)?;
    let n = space.grid.n;
    let levels = space.levels();
    let count = (n as f64).powi(levels as i32);
    if count > 1e6 {
        return Err(config(format!("path space has {count} paths; exhaustive mode allows 1e6")));
    }
    let count = count as usize;
    let mut paths = Vec::with_capacity(count);
    let mut mu = Vec::with_capacity(count);
    let mut en = Vec::with_capacity(count);
    for code in 0..count {
        let mut p = vec![0usize; levels + 1];
        let mut c = code;
        for slot in p.iter_mut().take(levels) {
            *slot = c % n;
            c /= n;
        }
        p[levels] = endpoint;
        let lw: f64 = (1..=levels).map(|l| space.log_kernel[(p[l] + n - p[l - 1]) % n]).sum();
        mu.push(lw.exp());
        en.push(energy.energy(space, &p));
        paths.push(p);
    }
    Ok(PathTable { paths, mu, energy: en })
}

/// `I(p)`, `h(p)`, `G(p) = I - h` for a density `p` relative to the free
/// measure, and the reference `-ln Z`.
pub fn free_energy_report(table: &PathTable, density: &[f64]) -> Result<FreeEnergyReport> {
    if density.len() != table.mu.len() {
        return Err(validation("density length does not match the path table"));
    }
    if density.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(validation("density must be finite and non-negative"));
    }
    let mass: f64 = table.mu.iter().zip(density).map(|(m, p)| m * p).sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(validation(format!("density integrates to {mass} under the free measure")));
    }
    let mut avg = 0.0;
    let mut ent = 0.0;
    for ((m, p), e) in table.mu.iter().zip(density).zip(&table.energy) {
        avg += m * p * e;
        if *p > 0.0 {
            ent -= m * p * p.ln();
        }
    }
    let emin = table.energy.iter().copied().fold(f64::INFINITY, f64::min);
    let z: f64 = table.mu.iter().zip(&table.energy).map(|(m, e)| m * (-(e - emin)).exp()).sum();
    let log_z = z.ln() - emin;
    Ok(FreeEnergyReport { average_energy: avg, entropy: ent, free_energy: avg - ent, reference: -log_z })
}

/// Gibbs density `e^{-E}/Z` relative to the free measure.
pub fn gibbs_density(table: &PathTable) -> Vec<f64> {
    let emin = table.energy.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = table.energy.iter().map(|e| (-(e - emin)).exp()).collect();
    let z: f64 = table.mu.iter().zip(&w).map(|(m, w)| m * w).sum();
    w.iter().map(|v| v / z).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub t: usize,
    pub amplitude: f64,
    /// Largest endpoint mass in any window of unit length.
    pub max_unit_mass: f64,
    /// Endpoint variance divided by the free value `2 nu T`.
    pub variance_ratio: f64,
}

/// Point-to-line polymer from `(T, x = 0)` back to time 0 (free end, kicks
/// `1..=T`): statistics of the free-end distribution per `(T, amplitude)`.
pub fn localization_scan(
    forcing: &PotentialField,
    nu: f64,
    grid: Grid,
    t_list: &[usize],
    amplitudes: &[f64],
) -> Result<Vec<LocalizationRow>> {
    let cfg = ViscousConfig::new(nu, grid, forcing.dt)?;
    let window = (1.0 / grid.h()).round().max(1.0) as usize;
    let n = grid.n;
    let mut rows = Vec::new();
    for &amp in amplitudes {
        let f = forcing.with_amplitude(amp);
        for &t in t_list {
            let mut log_z = vec![f64::NEG_INFINITY; n];
            log_z[0] = 0.0;
            let mut z = PartitionField { time_index: 0, grid, slope_b: 0.0, log_z, gauge: 0.0 };
            for k in (1..=t as i64).rev() {
                let kick = f.sample_kick(k, &grid)?;
                z = kick_step(&z, &kick, &cfg)?;
                z = heat_step(&z, &cfg)?;
            }
            let (_, w) = normalise_log(&z.log_z);
            let s: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|v| v / s).collect();
            let mut best = 0.0f64;
            let mut run: f64 = (0..window).map(|i| p[i % n]).sum();
            for i in 0..n {
                best = best.max(run);
                run += p[(i + window) % n] - p[i];
            }
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                let d = signed_index(i, n) as f64 * grid.h();
                m1 += pi * d;
                m2 += pi * d * d;
            }
            let var = m2 - m1 * m1;
            rows.push(LocalizationRow { t, amplitude: amp, max_unit_mass: best, variance_ratio: var / (2.0 * nu * t as f64 * forcing.dt) });
        }
    }
    Ok(rows)
}
