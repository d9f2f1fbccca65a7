//! Kicked random potentials.
//!
//! Kick `n` acts at time `n * dt`. Each kick draws its own coefficients from an
//! RNG substream keyed by `(master_seed, replica, n)`, so evaluation is a pure
//! function of those keys and the evaluation point.

use crate::error::{config, Error, Result};
use crate::grid::Grid;
use crate::rng::{substream, Stream};
use crate::spectral;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// How each kick potential is synthesised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Synthesis {
    /// Random trigonometric polynomial with `n_modes` Gaussian coefficient pairs.
    Fourier { n_modes: usize },
    /// Gaussian bumps of width `bump_width` with Gaussian heights at a Poisson
    /// number (mean `bump_count`) of uniform centres.
    Bumps { bump_count: f64, bump_width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub master_seed: u64,
    pub period: f64,
    pub synthesis: Synthesis,
    pub amplitude: f64,
    /// Time between kicks; only the shear offset depends on it.
    pub dt: f64,
    /// Accumulated shear slope `a`: kick `n` is evaluated at `x + a n dt`.
    #[serde(default)]
    pub shear: f64,
    /// Replica index, part of the substream key.
    #[serde(default)]
    pub replica: u64,
}

/// Coefficients of one Fourier kick, already scaled by `amplitude / sqrt(K)`.
struct FourierKick {
    a: Vec<f64>,
    b: Vec<f64>,
    offset: f64,
}

struct Bump {
    centre: f64,
    height: f64,
}

impl PotentialField {
    pub fn fourier(master_seed: u64, period: f64, n_modes: usize, amplitude: f64) -> Self {
        Self {
            master_seed,
            period,
            synthesis: Synthesis::Fourier { n_modes },
            amplitude,
            dt: 1.0,
            shear: 0.0,
            replica: 0,
        }
    }

    pub fn bumps(
        master_seed: u64,
        period: f64,
        bump_count: f64,
        bump_width: f64,
        amplitude: f64,
    ) -> Self {
        Self {
            master_seed,
            period,
            synthesis: Synthesis::Bumps { bump_count, bump_width },
            amplitude,
            dt: 1.0,
            shear: 0.0,
            replica: 0,
        }
    }

    pub fn with_replica(&self, replica: u64) -> Self {
        Self { replica, ..self.clone() }
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..self.clone() }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self { amplitude, ..self.clone() }
    }

    pub fn shear_mode(&self) -> bool {
        matches!(self.synthesis, Synthesis::Fourier { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(config(format!("period must be positive, got {}", self.period)));
        }
        if !self.amplitude.is_finite() || self.amplitude < 0.0 {
            return Err(config(format!("amplitude must be finite and >= 0, got {}", self.amplitude)));
        }
        if !(self.dt > 0.0) {
            return Err(config(format!("dt must be positive, got {}", self.dt)));
        }
        match self.synthesis {
            Synthesis::Fourier { n_modes: 0 } => {
                Err(config("Fourier synthesis needs n_modes >= 1"))
            }
            Synthesis::Bumps { bump_count, bump_width } if !(bump_count > 0.0 && bump_width > 0.0) => {
                Err(config("bump synthesis needs positive bump_count and bump_width"))
            }
            _ => Ok(()),
        }
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        self.validate()?;
        if (grid.period - self.period).abs() > 1e-9 * self.period {
            return Err(config(format!(
                "grid period {} does not match forcing period {}",
                grid.period, self.period
            )));
        }
        Ok(())
    }

    fn fourier_kick(&self, n_modes: usize, kick: i64) -> FourierKick {
        let mut rng = substream(self.master_seed, Stream::Kick, self.replica, kick as u64);
        let scale = self.amplitude / (n_modes as f64).sqrt();
        let mut a = Vec::with_capacity(n_modes);
        let mut b = Vec::with_capacity(n_modes);
        for _ in 0..n_modes {
            let ak: f64 = StandardNormal.sample(&mut rng);
            let bk: f64 = StandardNormal.sample(&mut rng);
            a.push(scale * ak);
            b.push(scale * bk);
        }
        FourierKick { a, b, offset: self.shear * kick as f64 * self.dt }
    }

    fn bump_kick(&self, bump_count: f64, kick: i64) -> Vec<Bump> {
        let mut rng = substream(self.master_seed, Stream::Bumps, self.replica, kick as u64);
        let count: f64 = Poisson::new(bump_count).map(|p| p.sample(&mut rng)).unwrap_or(0.0);
        (0..count as usize)
            .map(|_| {
                let centre = rng.random::<f64>() * self.period;
                let height: f64 = StandardNormal.sample(&mut rng);
                Bump { centre, height: self.amplitude * height }
            })
            .collect()
    }

    /// Fourier coefficients `(A_k, B_k)`, `k = 1..K`, of kick `n` before shear.
    /// `F_n(x) = sum_k A_k cos(2 pi k x / P) + B_k sin(2 pi k x / P)`.
    pub fn fourier_coefficients(&self, kick: i64) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.synthesis {
            Synthesis::Fourier { n_modes } => {
                let fk = self.fourier_kick(n_modes, kick);
                Ok((fk.a, fk.b))
            }
            Synthesis::Bumps { .. } => Err(Error::Unsupported("bump synthesis has no Fourier coefficients".into())),
        }
    }

    /// Potential of kick `n` at a single point (direct evaluation).
    pub fn value_at(&self, kick: i64, x: f64) -> f64 {
        self.eval_point(kick, x, false)
    }

    /// Gradient of the potential of kick `n` at a single point.
    pub fn gradient_at(&self, kick: i64, x: f64) -> f64 {
        self.eval_point(kick, x, true)
    }

    fn eval_point(&self, kick: i64, x: f64, derivative: bool) -> f64 {
        match self.synthesis {
            Synthesis::Fourier { n_modes } => {
                let fk = self.fourier_kick(n_modes, kick);
                let w = 2.0 * PI / self.period;
                let mut s = 0.0;
                for k in 0..n_modes {
                    let kw = w * (k + 1) as f64;
                    let th = kw * (x + fk.offset);
                    let (sn, cs) = th.sin_cos();
                    s += if derivative {
                        kw * (fk.b[k] * cs - fk.a[k] * sn)
                    } else {
                        fk.a[k] * cs + fk.b[k] * sn
                    };
                }
                s
            }
            Synthesis::Bumps { bump_count, bump_width } => {
                let bumps = self.bump_kick(bump_count, kick);
                self.bump_eval(&bumps, bump_width, x, derivative)
            }
        }
    }

    fn bump_eval(&self, bumps: &[Bump], w: f64, x: f64, derivative: bool) -> f64 {
        let p = self.period;
        let images = (8.0 * w / p).ceil() as i64;
        let mean_per_height = w * (2.0 * PI).sqrt() / p;
        let mut s = 0.0;
        for b in bumps {
            let d0 = (x - b.centre).rem_euclid(p);
            let d0 = if d0 > 0.5 * p { d0 - p } else { d0 };
            for m in -images..=images {
                let d = d0 + m as f64 * p;
                let g = (-0.5 * d * d / (w * w)).exp();
                s += if derivative { -b.height * d / (w * w) * g } else { b.height * g };
            }
            if !derivative {
                s -= b.height * mean_per_height;
            }
        }
        s
    }

    /// `F_n` sampled at the grid nodes. Zero mean over the period.
    pub fn sample_kick(&self, kick: i64, grid: &Grid) -> Result<Vec<f64>> {
        self.sample(kick, grid, false)
    }

    /// Analytic gradient `dF_n/dx` at the grid nodes (the force is its negative).
    pub fn sample_gradient(&self, kick: i64, grid: &Grid) -> Result<Vec<f64>> {
        self.sample(kick, grid, true)
    }

    fn sample(&self, kick: i64, grid: &Grid, derivative: bool) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        if self.amplitude == 0.0 {
            return Ok(vec![0.0; grid.n]);
        }
        match self.synthesis {
            Synthesis::Fourier { n_modes } if grid.n > 2 * n_modes => {
                let fk = self.fourier_kick(n_modes, kick);
                let w = 2.0 * PI / self.period;
                let mut buf = vec![Complex64::new(0.0, 0.0); grid.n];
                for k in 0..n_modes {
                    let kw = w * (k + 1) as f64;
                    // A cos + B sin = Re[(A - iB) e^{i th}]
                    let mut c = Complex64::new(fk.a[k], -fk.b[k]) * Complex64::from_polar(1.0, kw * fk.offset);
                    if derivative {
                        c *= Complex64::new(0.0, kw);
                    }
                    buf[k + 1] = c;
                }
                spectral::inverse(&mut buf);
                Ok(buf.iter().map(|c| c.re).collect())
            }
            Synthesis::Fourier { n_modes } => {
                let fk = self.fourier_kick(n_modes, kick);
                let w = 2.0 * PI / self.period;
                Ok((0..grid.n)
                    .map(|i| {
                        let x = grid.x(i);
                        (0..n_modes)
                            .map(|k| {
                                let kw = w * (k + 1) as f64;
                                let (sn, cs) = (kw * (x + fk.offset)).sin_cos();
                                if derivative {
                                    kw * (fk.b[k] * cs - fk.a[k] * sn)
                                } else {
                                    fk.a[k] * cs + fk.b[k] * sn
                                }
                            })
                            .sum()
                    })
                    .collect())
            }
            Synthesis::Bumps { bump_count, bump_width } => {
                let bumps = self.bump_kick(bump_count, kick);
                Ok((0..grid.n)
                    .map(|i| self.bump_eval(&bumps, bump_width, grid.x(i), derivative))
                    .collect())
            }
        }
    }
}

/// Returns the realization sheared by slope `a`: kick `n` becomes `F_n(x + a n dt)`.
pub fn make_shear_pair(field: &PotentialField, a: f64) -> Result<PotentialField> {
    match field.synthesis {
        Synthesis::Fourier { .. } => Ok(PotentialField { shear: field.shear + a, ..field.clone() }),
        Synthesis::Bumps { .. } => Err(Error::Unsupported(
            "shear pairs need the Fourier ensemble; bump fields are not shear-invariant".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, p: f64) -> Grid {
        Grid::new(n, p).unwrap()
    }

    #[test]
    fn zero_amplitude_gives_zero() {
        let f = PotentialField::fourier(1, 4.0, 5, 0.0);
        assert!(f.sample_kick(3, &grid(16, 4.0)).unwrap().iter().all(|&v| v == 0.0));
        assert!(f.sample_gradient(3, &grid(16, 4.0)).unwrap().iter().all(|&v| v == 0.0));
        let b = PotentialField::bumps(1, 4.0, 3.0, 0.3, 0.0);
        assert!(b.sample_kick(3, &grid(16, 4.0)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let f = PotentialField::fourier(99, 8.0, 6, 1.3);
        let g = grid(64, 8.0);
        assert_eq!(f.sample_kick(-4, &g).unwrap(), f.sample_kick(-4, &g).unwrap());
        let b = PotentialField::bumps(99, 8.0, 4.0, 0.5, 1.0);
        assert_eq!(b.sample_kick(2, &g).unwrap(), b.sample_kick(2, &g).unwrap());
    }

    #[test]
    fn period_mismatch_is_config_error() {
        let f = PotentialField::fourier(1, 4.0, 2, 1.0);
        assert!(matches!(f.sample_kick(0, &grid(16, 5.0)), Err(Error::Config(_))));
    }

    #[test]
    fn single_mode_matches_closed_form_cosine() {
        let p = 2.0;
        let f = PotentialField::fourier(5, p, 1, 0.7);
        let g = grid(8, p);
        let (a, b) = f.fourier_coefficients(11).unwrap();
        let amp = a[0].hypot(b[0]);
        let phase = b[0].atan2(a[0]);
        let vals = f.sample_kick(11, &g).unwrap();
        let grads = f.sample_gradient(11, &g).unwrap();
        for i in 0..8 {
            let th = 2.0 * PI * g.x(i) / p;
            assert!((vals[i] - amp * (th - phase).cos()).abs() < 1e-12);
            assert!((grads[i] + amp * 2.0 * PI / p * (th - phase).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_and_direct_paths_agree() {
        let f = PotentialField::fourier(3, 5.0, 7, 1.0).with_dt(0.5);
        let f = make_shear_pair(&f, 0.3).unwrap();
        let g = grid(40, 5.0);
        let v = f.sample_kick(6, &g).unwrap();
        let d = f.sample_gradient(6, &g).unwrap();
        for i in 0..g.n {
            assert!((v[i] - f.value_at(6, g.x(i))).abs() < 1e-12);
            assert!((d[i] - f.gradient_at(6, g.x(i))).abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_integrates_to_zero_and_mean_is_zero() {
        let g = grid(128, 6.0);
        for f in [PotentialField::fourier(8, 6.0, 9, 2.0), PotentialField::bumps(8, 6.0, 5.0, 0.4, 2.0)] {
            let v = f.sample_kick(1, &g).unwrap();
            let d = f.sample_gradient(1, &g).unwrap();
            let h = g.h();
            assert!(d.iter().sum::<f64>().abs() * h < 1e-10);
            assert!(v.iter().sum::<f64>().abs() * h < 1e-8, "{}", v.iter().sum::<f64>() * h);
        }
    }

    #[test]
    fn bump_gradient_matches_finite_difference() {
        let f = PotentialField::bumps(4, 3.0, 6.0, 0.35, 1.0);
        let eps = 1e-6;
        for &x in &[0.0, 0.4, 1.7, 2.95] {
            let fd = (f.value_at(0, x + eps) - f.value_at(0, x - eps)) / (2.0 * eps);
            assert!((fd - f.gradient_at(0, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn shear_identity_and_inverse() {
        let f = PotentialField::fourier(2, 4.0, 4, 1.0);
        let g = grid(32, 4.0);
        assert_eq!(make_shear_pair(&f, 0.0).unwrap().sample_kick(3, &g).unwrap(), f.sample_kick(3, &g).unwrap());
        let back = make_shear_pair(&make_shear_pair(&f, 0.37).unwrap(), -0.37).unwrap();
        let a = back.sample_kick(3, &g).unwrap();
        let b = f.sample_kick(3, &g).unwrap();
        for i in 0..g.n {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shear_of_bumps_is_unsupported() {
        let b = PotentialField::bumps(1, 4.0, 3.0, 0.3, 1.0);
        assert!(matches!(make_shear_pair(&b, 0.5), Err(Error::Unsupported(_))));
    }

    /// Second moments of F_n(0) and F_n(0)F_n(x) for sheared and plain
    /// ensembles, estimated over 1000 replicas.
    #[test]
    fn sheared_ensemble_has_same_second_moments() {
        let g = grid(32, 4.0);
        let reps = 1000;
        let lag = 5;
        let moments = |shear: f64| {
            let mut s0 = Vec::with_capacity(reps);
            let mut s1 = Vec::with_capacity(reps);
            for r in 0..reps {
                let f = make_shear_pair(&PotentialField::fourier(17, 4.0, 3, 1.0).with_replica(r as u64), shear).unwrap();
                let v = f.sample_kick(7, &g).unwrap();
                s0.push(v[0] * v[0]);
                s1.push(v[0] * v[lag]);
            }
            (s0, s1)
        };
        let mean_se = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, (var / n).sqrt())
        };
        let (a0, a1) = moments(0.0);
        let (b0, b1) = moments(0.61);
        for (a, b) in [(a0, b0), (a1, b1)] {
            let (ma, sa) = mean_se(&a);
            let (mb, sb) = mean_se(&b);
            assert!((ma - mb).abs() < 3.0 * sa.hypot(sb), "{ma} vs {mb}");
        }
    }

    #[test]
    fn distinct_kicks_are_uncorrelated() {
        let g = grid(16, 4.0);
        let reps = 1000;
        let (mut xs, mut ys) = (vec![], vec![]);
        for r in 0..reps {
            let f = PotentialField::fourier(23, 4.0, 3, 1.0).with_replica(r);
            xs.push(f.sample_kick(1, &g).unwrap()[3]);
            ys.push(f.sample_kick(2, &g).unwrap()[3]);
        }
        let n = reps as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 3.0 / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn autocovariance_is_translation_invariant() {
        let g = grid(32, 4.0);
        let reps = 1000;
        let lag = 3;
        let mut at0 = vec![];
        let mut at10 = vec![];
        for r in 0..reps {
            let v = PotentialField::bumps(31, 4.0, 6.0, 0.4, 1.0).with_replica(r).sample_kick(0, &g).unwrap();
            at0.push(v[0] * v[lag]);
            at10.push(v[10] * v[10 + lag]);
        }
        let n = reps as f64;
        let d: Vec<f64> = at0.iter().zip(&at10).map(|(a, b)| a - b).collect();
        let m = d.iter().sum::<f64>() / n;
        let se = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(m.abs() < 3.0 * se, "{m} +- {se}");
    }

    proptest! {
        #[test]
        fn kicks_are_periodic(seed in 0u64..1000, kick in -50i64..50, x in 0.0f64..4.0) {
            let f = PotentialField::fourier(seed, 4.0, 5, 1.0);
            prop_assert!((f.value_at(kick, x) - f.value_at(kick, x + 4.0)).abs() < 1e-10);
            let b = PotentialField::bumps(seed, 4.0, 3.0, 0.5, 1.0);
            prop_assert!((b.value_at(kick, x) - b.value_at(kick, x + 4.0)).abs() < 1e-10);
        }

        #[test]
        fn second_differences_are_bounded(seed in 0u64..500) {
            // |F''| <= amp * sqrt(K) * (2 pi K / P)^2 * max|coef| for the Fourier ensemble
            let f = PotentialField::fourier(seed, 4.0, 4, 1.0);
            let g = Grid::new(256, 4.0).unwrap();
            let v = f.sample_kick(0, &g).unwrap();
            let (a, b) = f.fourier_coefficients(0).unwrap();
            let bound: f64 = (0..4).map(|k| a[k].hypot(b[k]) * (2.0 * PI * (k + 1) as f64 / 4.0).powi(2)).sum();
            let h = g.h();
            for i in 0..g.n {
                let d2 = (v[(i + 1) % g.n] - 2.0 * v[i] + v[(i + g.n - 1) % g.n]) / (h * h);
                prop_assert!(d2.abs() <= bound * 1.001 + 1e-9);
            }
        }
    }
}
