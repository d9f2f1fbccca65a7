//! Coalescing simple random walks on a circle, the Pfaffian kernel of their
//! empty-interval probabilities, and strips built from their basins.
//!
//! Walkers start on every other site of a lattice with spacing `dx` and jump
//! `±dx` every `dt = dx²`, so each has unit variance per unit time. Walkers on
//! one parity class cannot pass each other without landing on the same site,
//! which makes every coalescence exact. When two walkers meet the left one's
//! basin label survives.

use crate::error::{config, validation, Error, Result};
use crate::geometry::{rescale_to_unit_density, StripConfig};
use crate::renorm::StripStack;
use crate::rng::{substream, Stream};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalescingSnapshot {
    pub t: f64,
    /// Survivor positions, lifted and sorted.
    pub positions: Vec<f64>,
    /// Lifted lattice index of the leftmost starting site in each survivor's basin.
    pub basin_left: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalescingRun {
    pub lattice_dx: f64,
    pub lattice_dt: f64,
    pub horizon_t: f64,
    pub period: f64,
    pub snapshots: Vec<CoalescingSnapshot>,
}

impl CoalescingRun {
    pub fn snapshot(&self, t: f64) -> Option<&CoalescingSnapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() <= 0.5 * self.lattice_dt)
    }
}

fn lattice_sites(period: f64, dx: f64) -> Result<i64> {
    if !(dx > 0.0 && period > 0.0) {
        return Err(config("dx and period must be positive"));
    }
    let m = (period / dx).round();
    if (m * dx - period).abs() > 1e-9 * period || m < 2.0 || m as i64 % 2 != 0 {
        return Err(config(format!("period / dx = {} must be an even integer", period / dx)));
    }
    Ok(m as i64)
}

fn steps_for(t: f64, dt: f64) -> Result<u64> {
    let s = (t / dt).round();
    if t < 0.0 || (s * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(config(format!("time {t} is not a multiple of dt = {dt}")));
    }
    Ok(s as u64)
}

/// Random sign source handing out one bit per call.
struct Bits<R: RngCore> {
    rng: R,
    word: u64,
    left: u32,
}

impl<R: RngCore> Bits<R> {
    fn new(rng: R) -> Self {
        Self { rng, word: 0, left: 0 }
    }

    #[inline]
    fn step(&mut self) -> i64 {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        let b = (self.word & 1) as i64;
        self.word >>= 1;
        self.left -= 1;
        2 * b - 1
    }
}

fn simulate<R: RngCore>(rng: R, dx: f64, horizon_t: f64, period: f64, snapshot_times: &[f64]) -> Result<CoalescingRun> {
    let m = lattice_sites(period, dx)?;
    let dt = dx * dx;
    let total = steps_for(horizon_t, dt)?;
    let mut marks: Vec<(u64, f64)> = snapshot_times
        .iter()
        .map(|&t| {
            if t > horizon_t + 0.5 * dt {
                return Err(config(format!("snapshot time {t} beyond horizon {horizon_t}")));
            }
            Ok((steps_for(t, dt)?, t))
        })
        .collect::<Result<_>>()?;
    marks.sort_by_key(|a| a.0);
    let mut pos: Vec<i64> = (0..m / 2).map(|k| 2 * k).collect();
    let mut left: Vec<i64> = pos.clone();
    let mut bits = Bits::new(rng);
    let mut snaps = Vec::with_capacity(marks.len());
    let mut next = 0usize;
    let take = |step: u64, pos: &[i64], left: &[i64], snaps: &mut Vec<CoalescingSnapshot>, next: &mut usize| {
        while *next < marks.len() && marks[*next].0 == step {
            snaps.push(CoalescingSnapshot {
                t: marks[*next].1,
                positions: pos.iter().map(|&p| p as f64 * dx).collect(),
                basin_left: left.to_vec(),
            });
            *next += 1;
        }
    };
    take(0, &pos, &left, &mut snaps, &mut next);
    for step in 1..=total {
        for p in pos.iter_mut() {
            *p += bits.step();
        }
        let mut w = 0usize;
        for r in 1..pos.len() {
            if pos[r] != pos[w] {
                w += 1;
                pos[w] = pos[r];
                left[w] = left[r];
            }
        }
        pos.truncate(w + 1);
        left.truncate(w + 1);
        if pos.len() > 1 && pos[pos.len() - 1] == pos[0] + m {
            left[0] = left.pop().unwrap() - m;
            pos.pop();
        }
        take(step, &pos, &left, &mut snaps, &mut next);
    }
    Ok(CoalescingRun { lattice_dx: dx, lattice_dt: dt, horizon_t, period, snapshots: snaps })
}

/// Runs coalescing walks from every even site up to `horizon_t`, recording
/// snapshots at the requested times (each a multiple of `dx²`).
pub fn run_coalescing(seed: u64, dx: f64, horizon_t: f64, period: f64, snapshot_times: &[f64]) -> Result<CoalescingRun> {
    simulate(substream(seed, Stream::Walk, 0, 0), dx, horizon_t, period, snapshot_times)
}

/// Strip at time `t` in the lattice frame: crosses at basin boundaries of the
/// starting sites, dots at survivor positions.
pub fn coalescence_strip_raw(run: &CoalescingRun, t: f64) -> Result<StripConfig> {
    if !(t > 0.0) {
        return Err(validation("strip time must be positive"));
    }
    let snap = run.snapshot(t).ok_or_else(|| validation(format!("no snapshot at t = {t}")))?;
    let k = snap.positions.len();
    if k < 2 {
        return Err(Error::Degenerate(format!("{k} survivor(s) at t = {t}; need at least 2")));
    }
    let dx = run.lattice_dx;
    let p = run.period;
    let crosses: Vec<f64> = snap.basin_left.iter().map(|&l| (l - 1) as f64 * dx).collect();
    let mut origin_dot = None;
    for w in 0..k {
        let lo = crosses[w];
        let hi = if w + 1 < k { crosses[w + 1] } else { crosses[0] + p };
        let r = (-lo).rem_euclid(p);
        if r < hi - lo {
            let shift = ((lo + r) / p).round() * p;
            origin_dot = Some(snap.positions[w] - shift);
            break;
        }
    }
    let origin_dot = origin_dot.expect("basins cover the circle");
    StripConfig::from_basins(0.0, -t, p, &crosses, &snap.positions, origin_dot)
}

/// Strip at time `t`, rescaled to unit cross density.
pub fn strip_from_coalescence(run: &CoalescingRun, t: f64) -> Result<StripConfig> {
    Ok(rescale_to_unit_density(&coalescence_strip_raw(run, t)?))
}

/// Stack of `n_strips` independent unit-time strips sharing the lattice frame;
/// strip `i` spans `[-i, -i-1]`.
pub fn coalescing_stack(seed: u64, dx: f64, period: f64, n_strips: usize) -> Result<StripStack> {
    let strips = (0..n_strips)
        .into_par_iter()
        .map(|i| {
            let run = simulate(substream(seed, Stream::Walk, i as u64 + 1, 0), dx, 1.0, period, &[1.0])?;
            let mut s = coalescence_strip_raw(&run, 1.0)?;
            s.t_top = -(i as f64);
            s.t_bottom = -(i as f64) - 1.0;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StripStack { strips, alpha_target: Some(0.5) })
}

/// Probability that two walkers started `x` apart have met by time `t`.
pub fn kernel_g(x: f64, t: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(validation(format!("kernel distance must be nonnegative, got {x}")));
    }
    if !(t > 0.0) {
        return Err(validation(format!("kernel time must be positive, got {t}")));
    }
    Ok(erfc(x / (2.0 * t.sqrt())))
}

/// Antisymmetric matrix stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewMatrix {
    dim: usize,
    a: Vec<f64>,
}

impl SkewMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, a: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sets `a(i, j) = v` and `a(j, i) = -v`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i != j, "diagonal of a skew matrix is zero");
        self.a[i * self.dim + j] = v;
        self.a[j * self.dim + i] = -v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    /// Kernel matrix `a(i, j) = G(x_j - x_i)` for `i < j` over sorted points.
    pub fn from_points(x: &[f64], t: f64) -> Result<Self> {
        let mut m = Self::zeros(x.len());
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                m.set(i, j, kernel_g(x[j] - x[i], t)?);
            }
        }
        Ok(m)
    }
}

fn pf_rec(m: &SkewMatrix, idx: &mut Vec<usize>) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx.remove(0);
    let mut total = 0.0;
    for k in 0..idx.len() {
        let j = idx.remove(k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let a = m.get(first, j);
        if a != 0.0 {
            total += sign * a * pf_rec(m, idx);
        }
        idx.insert(k, j);
    }
    idx.insert(0, first);
    total
}

/// Pfaffian by expansion along the first row; dimension must be even and at
/// most 12.
pub fn pfaffian(m: &SkewMatrix) -> Result<f64> {
    if !m.dim.is_multiple_of(2) {
        return Err(validation(format!("Pfaffian of odd dimension {}", m.dim)));
    }
    if m.dim > 12 {
        return Err(validation(format!("dimension {} exceeds the expansion limit 12", m.dim)));
    }
    Ok(pf_rec(m, &mut (0..m.dim).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmptyIntervalResult {
    pub intervals: Vec<(f64, f64)>,
    pub t: f64,
    pub replicas: usize,
    pub mc: f64,
    pub se: f64,
    pub pfaffian: f64,
}

/// Monte Carlo probability that no cross lies inside any of the given
/// intervals, against the Pfaffian of the kernel matrix. An interval is
/// empty exactly when the walkers from its two ends have merged by `t`, so
/// only the `2n` endpoint walkers are simulated.
pub fn empty_interval_test(seed: u64, dx: f64, t: f64, intervals: &[(f64, f64)], replicas: usize) -> Result<EmptyIntervalResult> {
    if intervals.is_empty() || 2 * intervals.len() > 12 {
        return Err(validation("need between 1 and 6 intervals"));
    }
    let mut x = Vec::with_capacity(2 * intervals.len());
    for (k, &(a, b)) in intervals.iter().enumerate() {
        if b < a {
            return Err(validation(format!("interval {k} has right end before left end")));
        }
        if k > 0 && a <= intervals[k - 1].1 {
            return Err(validation(format!("intervals {} and {k} overlap or are unsorted", k - 1)));
        }
        x.push(a);
        x.push(b);
    }
    if replicas < 2 {
        return Err(Error::InsufficientStatistics("need at least 2 replicas".into()));
    }
    let dt = dx * dx;
    let steps = steps_for(t, dt)?;
    let sites: Vec<i64> = x
        .iter()
        .map(|&v| {
            let s = (v - x[0]) / dx;
            if (s - s.round()).abs() > 1e-9 || s.round() as i64 % 2 != 0 {
                Err(config(format!("endpoint {v} is not on the even walker lattice from {}", x[0])))
            } else {
                Ok(s.round() as i64)
            }
        })
        .collect::<Result<_>>()?;
    let hits: usize = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut bits = Bits::new(substream(seed, Stream::Walk, r as u64, 1));
            // cluster representative = leftmost walker of the cluster
            let mut pos = sites.clone();
            let mut rep: Vec<usize> = (0..pos.len()).collect();
            for i in 1..pos.len() {
                if pos[i] == pos[i - 1] {
                    rep[i] = rep[i - 1];
                }
            }
            let done = |rep: &[usize]| (0..rep.len() / 2).all(|k| rep[2 * k] == rep[2 * k + 1]);
            for _ in 0..steps {
                if done(&rep) {
                    break;
                }
                let mut i = 0;
                while i < pos.len() {
                    let s = bits.step();
                    let mut j = i;
                    while j < pos.len() && rep[j] == rep[i] {
                        pos[j] += s;
                        j += 1;
                    }
                    i = j;
                }
                for i in 1..pos.len() {
                    if pos[i] == pos[i - 1] && rep[i] != rep[i - 1] {
                        let (old, new) = (rep[i], rep[i - 1]);
                        for r in rep.iter_mut() {
                            if *r == old {
                                *r = new;
                            }
                        }
                    }
                }
            }
            usize::from(done(&rep))
        })
        .sum();
    let p = hits as f64 / replicas as f64;
    let se = (p * (1.0 - p) / replicas as f64).sqrt().max(1.0 / replicas as f64);
    Ok(EmptyIntervalResult {
        intervals: intervals.to_vec(),
        t,
        replicas,
        mc: p,
        se,
        pfaffian: pfaffian(&SkewMatrix::from_points(&x, t)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renorm::{estimate_alpha, renorm_sweep, SweepMode};
    use crate::stats::loglog;
    use nalgebra::DMatrix;
    use rand::Rng;

    #[test]
    fn horizon_zero_keeps_every_walker() {
        let run = run_coalescing(1, 0.25, 0.0, 8.0, &[0.0]).unwrap();
        assert_eq!(run.snapshots[0].positions.len(), 16);
        assert!(run_coalescing(1, 0.3, 1.0, 8.0, &[]).is_err());
        assert!(run_coalescing(1, 1.0, 1.0, 9.0, &[]).is_err());
    }

    #[test]
    fn survivors_nonincreasing_and_basins_contiguous() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
        let run = run_coalescing(2, 0.125, 5.0, 32.0, &times).unwrap();
        let counts: Vec<usize> = run.snapshots.iter().map(|s| s.positions.len()).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        for s in &run.snapshots {
            assert!(s.positions.windows(2).all(|w| w[1] > w[0]));
            assert!(s.basin_left.windows(2).all(|w| w[1] > w[0]));
            assert!(s.basin_left[s.basin_left.len() - 1] < s.basin_left[0] + 256);
        }
    }

    #[test]
    fn single_walker_variance_is_time() {
        // with period 2 dx there is a single walker and lifted positions keep
        // its full displacement
        let dx = 0.125;
        let t = 4.0;
        let reps = 2000;
        let d: Vec<f64> = (0..reps)
            .map(|r| {
                let run = simulate(substream(7, Stream::Walk, r, 9), dx, t, 2.0 * dx, &[t]).unwrap();
                run.snapshots[0].positions[0]
            })
            .collect();
        let var = d.iter().map(|v| v * v).sum::<f64>() / reps as f64;
        // SE of a variance estimate for a Gaussian is var sqrt(2 / n)
        assert!((var - t).abs() < 3.0 * t * (2.0 / reps as f64).sqrt(), "var {var}");
    }

    #[test]
    fn density_decays_as_inverse_square_root() {
        let times: Vec<f64> = [1.0, 2.0, 4.0, 8.0, 16.0].to_vec();
        let run = run_coalescing(3, 0.125, 16.0, 4096.0, &times).unwrap();
        let dens: Vec<f64> = run.snapshots.iter().map(|s| s.positions.len() as f64 / 4096.0).collect();
        let f = loglog(&times, &dens).unwrap();
        assert!((f.slope + 0.5).abs() < 0.05, "slope {}", f.slope);
        // continuum density 1 / sqrt(pi t)
        assert!((dens[4] * (std::f64::consts::PI * 16.0).sqrt() - 1.0).abs() < 0.1);
    }

    #[test]
    fn strip_has_equal_counts_and_unit_density() {
        let run = run_coalescing(4, 0.125, 1.0, 64.0, &[0.015625, 1.0]).unwrap();
        let s = strip_from_coalescence(&run, 1.0).unwrap();
        assert_eq!(s.crosses.len(), s.dots.len());
        assert!((s.cross_density() - 1.0).abs() < 1e-12);
        // after a single step most neighbours are still apart: crosses sit at
        // inter-site midpoints
        let raw = coalescence_strip_raw(&run, 0.015625).unwrap();
        assert!(raw.crosses.iter().all(|c| ((c / 0.125 - 1.0) / 2.0).fract().abs() < 1e-9));
        assert!(coalescence_strip_raw(&run_coalescing(4, 0.5, 64.0, 2.0, &[64.0]).unwrap(), 64.0).is_err());
    }

    #[test]
    fn stack_composition_matches_a_single_long_run_scaling() {
        let stack = coalescing_stack(5, 0.125, 2048.0, 40).unwrap();
        let sweep = renorm_sweep(&stack, SweepMode::Incremental).unwrap();
        let pts: Vec<(f64, f64)> = sweep.densities.iter().copied().filter(|p| p.0 >= 4.0).collect();
        let (alpha, _) = estimate_alpha(&pts).unwrap();
        assert!((alpha - 0.5).abs() < 0.05, "alpha {alpha}");
    }

    #[test]
    fn kernel_limits() {
        assert_eq!(kernel_g(0.0, 1.0).unwrap(), 1.0);
        assert!(kernel_g(100.0 * 2f64.sqrt(), 2.0).unwrap() < 1e-12);
        assert!(kernel_g(-1.0, 1.0).is_err());
        // erfc(1/2) = 0.4795001221869535
        let g = kernel_g(1.0, 1.0).unwrap();
        assert!((g - 0.479_500_122_186_953_5).abs() < 1e-14, "{g:e}");
    }

    #[test]
    fn kernel_matches_two_walker_simulation() {
        for x in [0.5, 1.0, 2.0] {
            let r = empty_interval_test(11, 1.0 / 32.0, 1.0, &[(0.0, x)], 10_000).unwrap();
            assert!((r.mc - r.pfaffian).abs() < 3.0 * r.se, "x {x}: mc {} pf {}", r.mc, r.pfaffian);
        }
    }

    #[test]
    fn zero_length_interval_is_certain() {
        let r = empty_interval_test(1, 0.125, 1.0, &[(0.0, 0.0)], 100).unwrap();
        assert_eq!(r.mc, 1.0);
        assert_eq!(r.pfaffian, 1.0);
        assert!(empty_interval_test(1, 0.125, 1.0, &[(0.0, 1.0), (0.5, 2.0)], 10).is_err());
    }

    #[test]
    fn small_pfaffians() {
        let mut m = SkewMatrix::zeros(2);
        m.set(0, 1, 0.3);
        assert_eq!(pfaffian(&m).unwrap(), 0.3);
        let mut m = SkewMatrix::zeros(4);
        let v = [(0, 1, 1.5), (0, 2, -0.7), (0, 3, 2.0), (1, 2, 0.4), (1, 3, 0.9), (2, 3, -1.1)];
        for (i, j, x) in v {
            m.set(i, j, x);
        }
        let expect = 1.5 * -1.1 - (-0.7 * 0.9) + 2.0 * 0.4;
        assert!((pfaffian(&m).unwrap() - expect).abs() < 1e-15);
        assert!(pfaffian(&SkewMatrix::zeros(3)).is_err());
        assert_eq!(m.get(3, 0), -2.0);
    }

    #[test]
    fn pfaffian_squared_is_determinant() {
        let mut rng = crate::rng::substream(8, Stream::Synthetic, 5, 0);
        for trial in 0..200 {
            let dim = 2 * (1 + trial % 6);
            let mut m = SkewMatrix::zeros(dim);
            for i in 0..dim {
                for j in (i + 1)..dim {
                    m.set(i, j, rng.random::<f64>() * 2.0 - 1.0);
                }
            }
            let det = DMatrix::from_fn(dim, dim, |i, j| m.get(i, j)).determinant();
            let pf = pfaffian(&m).unwrap();
            assert!((pf * pf - det).abs() < 1e-10 * det.abs().max(1.0), "dim {dim}");
        }
    }
}
