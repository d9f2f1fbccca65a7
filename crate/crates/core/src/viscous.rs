//! Viscous dynamics through the Hopf–Cole transform.
//!
//! `Phi = b x - 2 nu (log_z + gauge)` where `log_z` is periodic with maximum 0.
//! Between kicks `Z` evolves by the exact lattice heat semigroup (a sampled,
//! periodised Gaussian of variance `2 nu dt`); a kick multiplies `Z` by
//! `exp(F / 2 nu)`.

use crate::error::{config, Error, Result};
use crate::forcing::PotentialField;
use crate::grid::Grid;
use crate::spectral;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Nodes whose FFT result falls below this fraction of the maximum are
/// recomputed by a direct log-sum-exp, where FFT round-off would dominate.
const FFT_RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViscousConfig {
    pub nu: f64,
    pub grid: Grid,
    pub dt: f64,
}

impl ViscousConfig {
    pub fn new(nu: f64, grid: Grid, dt: f64) -> Result<Self> {
        let c = Self { nu, grid, dt };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(config(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.dt > 0.0) {
            return Err(config(format!("dt must be positive, got {}", self.dt)));
        }
        let bw = (2.0 * self.nu * self.dt).sqrt();
        if bw < 2.0 * self.grid.h() * (1.0 - 1e-12) {
            return Err(config(format!(
                "heat-kernel bandwidth {bw} is below twice the grid spacing {}",
                self.grid.h()
            )));
        }
        Ok(())
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log weights `log K(d)`, `d = 0..n` (displacement `d` modulo `n`), of the
/// periodised sampled Gaussian of the given variance, normalised so the
/// untilted weights sum to 1, times the tilt `exp(tilt * displacement)`.
pub fn log_heat_kernel(grid: &Grid, variance: f64, tilt: f64) -> Vec<f64> {
    let n = grid.n;
    let h = grid.h();
    let p = grid.period;
    let sd = variance.sqrt();
    let reach = 40.0 * sd + (tilt * variance).abs();
    let images = (reach / p).ceil() as i64 + 1;
    let raw = |tilt: f64| -> Vec<f64> {
        (0..n)
            .map(|d| {
                let ds = crate::spectral::signed_index(d, n) as f64 * h;
                log_sum_exp((-images..=images).map(|m| {
                    let x = ds + m as f64 * p;
                    -0.5 * x * x / variance + tilt * x
                }))
            })
            .collect()
    };
    let base = raw(0.0);
    let norm = log_sum_exp(base.iter().copied());
    let out = if tilt == 0.0 { base } else { raw(tilt) };
    out.into_iter().map(|v| v - norm).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionField {
    pub time_index: i64,
    pub grid: Grid,
    pub slope_b: f64,
    pub log_z: Vec<f64>,
    pub gauge: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    Spectral,
    Centered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub time_index: i64,
    pub grid: Grid,
    pub u: Vec<f64>,
    pub method: GradientMethod,
}

impl PartitionField {
    /// `Z = exp(-Phi / 2 nu)` for `Phi = b x + psi` with periodic `psi`.
    pub fn from_psi(grid: Grid, nu: f64, slope_b: f64, psi: &[f64], time_index: i64) -> Self {
        let log_z: Vec<f64> = psi.iter().map(|p| -p / (2.0 * nu)).collect();
        let mut z = Self { time_index, grid, slope_b, log_z, gauge: 0.0 };
        z.renormalize();
        z
    }

    pub fn constant(grid: Grid, slope_b: f64, time_index: i64) -> Self {
        Self { time_index, grid, slope_b, log_z: vec![0.0; grid.n], gauge: 0.0 }
    }

    /// Raw log-partition value `log Z(x_i)` including the linear tilt.
    pub fn log_z_raw(&self, i: usize, nu: f64) -> f64 {
        self.log_z[i] + self.gauge - self.slope_b * self.grid.x(i) / (2.0 * nu)
    }

    pub fn phi(&self, nu: f64) -> Vec<f64> {
        (0..self.grid.n).map(|i| -2.0 * nu * self.log_z_raw(i, nu)).collect()
    }

    fn renormalize(&mut self) {
        let m = self.log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m.is_finite() {
            for v in &mut self.log_z {
                *v -= m;
            }
            self.gauge += m;
        }
    }
}

/// Free-flight step: convolution with the heat kernel of variance `2 nu dt`.
pub fn heat_step(z: &PartitionField, cfg: &ViscousConfig) -> Result<PartitionField> {
    cfg.validate()?;
    z.grid.check_same(&cfg.grid)?;
    let n = z.grid.n;
    let tilt = z.slope_b / (2.0 * cfg.nu);
    let logk = log_heat_kernel(&z.grid, 2.0 * cfg.nu * cfg.dt, tilt);
    let kmax = logk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k: Vec<f64> = logk.iter().map(|v| (v - kmax).exp()).collect();
    let zeta: Vec<f64> = z.log_z.iter().map(|v| v.exp()).collect();
    let conv = spectral::circular_convolve(&zeta, &k);
    let cmax = conv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(cmax.is_finite() && cmax > 0.0) {
        return Err(Error::Numeric(format!(
            "heat step produced a non-positive or non-finite maximum {cmax} at time {}",
            z.time_index
        )));
    }
    let mut log_z = vec![0.0; n];
    for i in 0..n {
        let c = conv[i];
        log_z[i] = if c > FFT_RELATIVE_FLOOR * cmax {
            c.ln()
        } else {
            log_sum_exp((0..n).map(|j| z.log_z[j] + logk[(i + n - j) % n] - kmax))
        };
    }
    if log_z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite log Z after heat step at time {}", z.time_index)));
    }
    let mut out = PartitionField { time_index: z.time_index, grid: z.grid, slope_b: z.slope_b, log_z, gauge: z.gauge + kmax };
    out.renormalize();
    Ok(out)
}

/// Same convolution by a dense log-sum-exp over all source nodes.
pub fn heat_step_dense(z: &PartitionField, cfg: &ViscousConfig) -> Result<PartitionField> {
    cfg.validate()?;
    let n = z.grid.n;
    let logk = log_heat_kernel(&z.grid, 2.0 * cfg.nu * cfg.dt, z.slope_b / (2.0 * cfg.nu));
    let log_z = (0..n).map(|i| log_sum_exp((0..n).map(|j| z.log_z[j] + logk[(i + n - j) % n]))).collect();
    let mut out = PartitionField { log_z, ..z.clone() };
    out.renormalize();
    Ok(out)
}

/// Multiplies `Z` by `exp(F / 2 nu)` and advances the time index.
pub fn kick_step(z: &PartitionField, kick: &[f64], cfg: &ViscousConfig) -> Result<PartitionField> {
    if kick.len() != z.grid.n {
        return Err(config(format!("kick has {} nodes, grid has {}", kick.len(), z.grid.n)));
    }
    let log_z = z.log_z.iter().zip(kick).map(|(l, f)| l + f / (2.0 * cfg.nu)).collect();
    let mut out = PartitionField { time_index: z.time_index + 1, log_z, ..z.clone() };
    out.renormalize();
    Ok(out)
}

/// Heat then kick, `steps` times, with kick indices `t+1, t+2, ...`.
/// Returns every intermediate field, starting with `init`.
pub fn evolve_viscous(
    init: &PartitionField,
    forcing: &PotentialField,
    cfg: &ViscousConfig,
    steps: usize,
) -> Result<Vec<PartitionField>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(init.clone());
    for _ in 0..steps {
        let prev = out.last().expect("non-empty");
        let kick = forcing.sample_kick(prev.time_index + 1, &prev.grid)?;
        let next = kick_step(&heat_step(prev, cfg)?, &kick, cfg)?;
        out.push(next);
    }
    Ok(out)
}

/// `u = b - 2 nu d/dx log_z` (quadratic Hamiltonian).
pub fn velocity_from_z(z: &PartitionField, cfg: &ViscousConfig, method: GradientMethod) -> VelocityField {
    let n = z.grid.n;
    let d = match method {
        GradientMethod::Spectral => spectral::derivative(&z.log_z, z.grid.period),
        GradientMethod::Centered => {
            let h = z.grid.h();
            (0..n).map(|i| (z.log_z[(i + 1) % n] - z.log_z[(i + n - 1) % n]) / (2.0 * h)).collect()
        }
    };
    VelocityField {
        time_index: z.time_index,
        grid: z.grid,
        u: d.iter().map(|g| z.slope_b - 2.0 * cfg.nu * g).collect(),
        method,
    }
}

/// Discrete Fourier amplitude of mode `k` (`k >= 1`).
pub fn mode_amplitude(values: &[f64], k: usize) -> Complex64 {
    spectral::forward_real(values)[k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(nu: f64, n: usize, p: f64) -> ViscousConfig {
        ViscousConfig::new(nu, Grid::new(n, p).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn constants_are_fixed() {
        let c = cfg(0.5, 16, 4.0);
        let z = PartitionField::constant(c.grid, 0.0, 0);
        let next = heat_step(&z, &c).unwrap();
        assert!(next.log_z.iter().all(|v| v.abs() < 1e-12));
        assert!(next.gauge.abs() < 1e-12);
    }

    #[test]
    fn fourier_mode_decays_at_heat_rate() {
        // Z = 1 + eps cos(2 pi k x / P) with raw (unrenormalised) comparison
        let c = cfg(0.3, 64, 8.0);
        let k = 3usize;
        let eps = 0.2;
        let zvals: Vec<f64> = (0..64).map(|i| 1.0 + eps * (2.0 * PI * k as f64 * c.grid.x(i) / 8.0).cos()).collect();
        let z = PartitionField { time_index: 0, grid: c.grid, slope_b: 0.0, log_z: zvals.iter().map(|v| v.ln()).collect(), gauge: 0.0 };
        let next = heat_step(&z, &c).unwrap();
        let out: Vec<f64> = (0..64).map(|i| (next.log_z[i] + next.gauge).exp()).collect();
        let wk = 2.0 * PI * k as f64 / 8.0;
        let decay = (-c.nu * c.dt * wk * wk).exp();
        for i in 0..64 {
            let expect = 1.0 + eps * decay * (wk * c.grid.x(i)).cos();
            assert!((out[i] - expect).abs() < 1e-12, "{} vs {}", out[i], expect);
        }
    }

    #[test]
    fn spectral_matches_dense_convolution() {
        let c = cfg(0.5, 16, 4.0);
        let psi: Vec<f64> = (0..16).map(|i| 3.0 * ((i * 7919 % 16) as f64 / 16.0 - 0.5)).collect();
        for b in [0.0, 0.4] {
            let z = PartitionField::from_psi(c.grid, c.nu, b, &psi, 0);
            let a = heat_step(&z, &c).unwrap();
            let d = heat_step_dense(&z, &c).unwrap();
            for i in 0..16 {
                assert!((a.log_z_raw(i, c.nu) - d.log_z_raw(i, c.nu)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn deep_low_values_survive_the_fft() {
        // psi spanning hundreds of e-folds
        let c = cfg(0.05, 64, 8.0);
        let psi: Vec<f64> = (0..64).map(|i| 8.0 * (1.0 - (2.0 * PI * c.grid.x(i) / 8.0).cos())).collect();
        let z = PartitionField::from_psi(c.grid, c.nu, 0.0, &psi, 0);
        let a = heat_step(&z, &c).unwrap();
        let d = heat_step_dense(&z, &c).unwrap();
        for i in 0..64 {
            assert!((a.log_z[i] - d.log_z[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_data_reproduces_hopf_lax() {
        // Phi_0 = b x: after one step Phi = b x - b^2 dt / 2
        let c = cfg(0.5, 32, 8.0);
        let b = 0.7;
        let z = PartitionField::constant(c.grid, b, 0);
        let next = heat_step(&z, &c).unwrap();
        let phi = next.phi(c.nu);
        for i in 0..32 {
            assert!((phi[i] - (b * c.grid.x(i) - 0.5 * b * b)).abs() < 1e-10);
        }
    }

    #[test]
    fn kick_identity_and_constant_gauge() {
        let c = cfg(0.5, 16, 4.0);
        let psi: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let z = PartitionField::from_psi(c.grid, c.nu, 0.0, &psi, 0);
        let same = kick_step(&z, &[0.0; 16], &c).unwrap();
        assert_eq!(same.log_z, z.log_z);
        let shifted = kick_step(&z, &[1.3; 16], &c).unwrap();
        let u0 = velocity_from_z(&z, &c, GradientMethod::Spectral).u;
        let u1 = velocity_from_z(&shifted, &c, GradientMethod::Spectral).u;
        for i in 0..16 {
            assert!((u0[i] - u1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_of_constant_and_linear_gauge() {
        let c = cfg(0.5, 16, 4.0);
        let z = PartitionField::constant(c.grid, 0.0, 0);
        assert!(velocity_from_z(&z, &c, GradientMethod::Spectral).u.iter().all(|v| v.abs() < 1e-14));
        let zb = PartitionField::constant(c.grid, 0.8, 0);
        for m in [GradientMethod::Spectral, GradientMethod::Centered] {
            assert!(velocity_from_z(&zb, &c, m).u.iter().all(|v| (v - 0.8).abs() < 1e-12));
        }
    }

    #[test]
    fn tracked_gauge_matches_raw_sum() {
        // raw Z by dense sums without any renormalisation
        let c = cfg(0.5, 12, 3.0);
        let f = PotentialField::fourier(4, 3.0, 2, 0.8);
        let z0 = PartitionField::constant(c.grid, 0.0, 0);
        let fields = evolve_viscous(&z0, &f, &c, 4).unwrap();
        let logk = log_heat_kernel(&c.grid, 2.0 * c.nu * c.dt, 0.0);
        let mut raw = vec![1.0f64; 12];
        for t in 1..=4 {
            let kick = f.sample_kick(t, &c.grid).unwrap();
            raw = (0..12)
                .map(|i| (0..12).map(|j| raw[j] * logk[(i + 12 - j) % 12].exp()).sum::<f64>() * (kick[i] / (2.0 * c.nu)).exp())
                .collect();
        }
        for i in 0..12 {
            assert!((fields[4].log_z_raw(i, c.nu) - raw[i].ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn bandwidth_check() {
        assert!(ViscousConfig::new(0.001, Grid::new(16, 4.0).unwrap(), 1.0).is_err());
    }
}
