//! Strip composition by elimination of dots and crosses.
//!
//! For strips `upper` on `[t0, t1]` and `lower` on `[t1, t2]`, every upper
//! interval `j` reaches upper dot `j + xi_u`, which sits in some lower interval
//! `J` and so reaches lower dot `J + xi_l`. Writing `D(j)` for that composite
//! label, an upper cross survives exactly when its neighbouring intervals have
//! different `D`, and a lower dot survives exactly when it is some `D(j)`.
//! A lower interval holding no upper dots loses its dot; one holding `k` dots
//! keeps the outer two of the `k + 1` bounding crosses.

use crate::error::{validation, Result};
use crate::geometry::{rescale_to_unit_density, StripConfig};
use crate::stats::loglog;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripStack {
    /// Strip `i` spans `[-i, -i-1]`; all strips share one spatial frame.
    pub strips: Vec<StripConfig>,
    pub alpha_target: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Doubling,
    Incremental,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Composite labels `D(j)` for `j` over one period of upper intervals.
fn composite_labels(upper: &StripConfig, lower: &StripConfig) -> Vec<i64> {
    (0..upper.count() as i64)
        .map(|j| lower.dot_of_interval(lower.interval_of(upper.dot_pos(upper.dot_of_interval(j)))))
        .collect()
}

/// Lower interval of every upper dot, keyed by lower interval label, for
/// inspecting the elimination counts `k`.
pub fn dots_per_interval(upper: &StripConfig, lower: &StripConfig) -> Vec<(i64, usize)> {
    let mut out: Vec<(i64, usize)> = Vec::new();
    for j in 0..lower.count() as i64 {
        out.push((j, 0));
    }
    for l in 0..upper.count() as i64 {
        let k = lower.interval_of(upper.dot_pos(l)).rem_euclid(lower.count() as i64);
        out[k as usize].1 += 1;
    }
    out
}

/// Composes two adjacent strips.
pub fn renorm_pair(upper: &StripConfig, lower: &StripConfig) -> Result<StripConfig> {
    upper.validate()?;
    lower.validate()?;
    if !close(upper.period, lower.period) {
        return Err(validation(format!("periods differ: {} vs {}", upper.period, lower.period)));
    }
    if !close(upper.t_bottom, lower.t_top) {
        return Err(validation(format!(
            "upper strip ends at t = {} but lower strip starts at t = {}",
            upper.t_bottom, lower.t_top
        )));
    }
    let m_u = upper.count() as i64;
    let m_l = lower.count() as i64;
    let d = composite_labels(upper, lower);
    let d_at = |j: i64| d[j.rem_euclid(m_u) as usize] + j.div_euclid(m_u) * m_l;
    for j in 0..m_u {
        if d_at(j + 1) < d_at(j) {
            let pos = upper.dot_pos(upper.dot_of_interval(j + 1));
            return Err(validation(format!(
                "upper dot at {pos} falls in lower interval {} which precedes the interval of its left neighbour",
                lower.interval_of(pos)
            )));
        }
    }
    let mut crosses = Vec::new();
    let mut dots = Vec::new();
    for j in 0..m_u {
        if d_at(j) != d_at(j + 1) {
            crosses.push(upper.cross_raw(j));
            dots.push(lower.dot_raw(d_at(j + 1)));
        }
    }
    StripConfig::from_basins(upper.t_top, lower.t_bottom, upper.period, &crosses, &dots, lower.dot_pos(d_at(0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Composite strips, each rescaled to unit cross density.
    pub stack: StripStack,
    /// `(number of unit strips composed, cross density before rescaling)`.
    pub densities: Vec<(f64, f64)>,
}

/// Applies the composition across a stack. `Incremental` adds strips one at a
/// time and records every partial composite; `Doubling` composes neighbouring
/// pairs once.
pub fn renorm_sweep(stack: &StripStack, mode: SweepMode) -> Result<SweepResult> {
    let s = &stack.strips;
    let span = |c: &StripConfig| c.t_top - c.t_bottom;
    let mut composites = Vec::new();
    match mode {
        SweepMode::Incremental => {
            let first = s.first().ok_or_else(|| validation("empty stack"))?;
            let unit = span(first);
            let mut acc = first.clone();
            composites.push(acc.clone());
            for next in &s[1..] {
                acc = renorm_pair(&acc, next)?;
                composites.push(acc.clone());
            }
            let densities = composites.iter().map(|c| (span(c) / unit, c.cross_density())).collect();
            Ok(SweepResult { stack: rescaled(composites, stack.alpha_target), densities })
        }
        SweepMode::Doubling => {
            if s.len() < 2 {
                return Err(validation("doubling sweep needs at least two strips"));
            }
            let unit = span(&s[0]);
            for pair in s.chunks_exact(2) {
                composites.push(renorm_pair(&pair[0], &pair[1])?);
            }
            let densities = composites.iter().map(|c| (span(c) / unit, c.cross_density())).collect();
            Ok(SweepResult { stack: rescaled(composites, stack.alpha_target), densities })
        }
    }
}

fn rescaled(strips: Vec<StripConfig>, alpha_target: Option<f64>) -> StripStack {
    StripStack { strips: strips.iter().map(rescale_to_unit_density).collect(), alpha_target }
}

/// Density exponent from `(n, density)` pairs: minus the log-log slope, with
/// its regression standard error.
pub fn estimate_alpha(densities: &[(f64, f64)]) -> Result<(f64, f64)> {
    if densities.iter().any(|&(n, d)| !(d > 0.0) || !(n > 0.0)) {
        return Err(validation("densities and strip counts must be positive"));
    }
    if densities.len() < 4 {
        return Err(validation(format!("need at least 4 points, got {}", densities.len())));
    }
    let lo = densities.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = densities.iter().map(|p| p.0).fold(0.0, f64::max);
    if hi < 10.0 * lo * (1.0 - 1e-12) {
        return Err(validation(format!("fit range [{lo}, {hi}] spans less than a decade")));
    }
    let (n, d): (Vec<f64>, Vec<f64>) = densities.iter().copied().unzip();
    let f = loglog(&n, &d)?;
    Ok((-f.slope, f.slope_se))
}

/// Composite of a whole stack, top strip first, without rescaling.
pub fn fold_stack(strips: &[StripConfig]) -> Result<StripConfig> {
    let first = strips.first().ok_or_else(|| validation("empty stack"))?;
    strips[1..].iter().try_fold(first.clone(), |acc, s| renorm_pair(&acc, s))
}

/// Inter-cross gaps after rescaling to unit density.
pub fn unit_gaps(cfg: &StripConfig) -> Vec<f64> {
    let c = rescale_to_unit_density(cfg);
    let m = c.count() as i64;
    (0..m)
        .map(|k| {
            let g = c.cross_pos(k + 1) - c.cross_pos(k);
            if g <= 0.0 {
                g + c.period
            } else {
                g
            }
        })
        .collect()
}

/// Unit-density gaps of the composite of the first `burn_in` strips, and of
/// one further composition with the composite of the next `burn_in`.
pub fn one_more_step_gaps(strips: &[StripConfig], burn_in: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if burn_in == 0 || strips.len() < 2 * burn_in {
        return Err(validation(format!("need {} strips for burn-in {burn_in}, got {}", 2 * burn_in, strips.len())));
    }
    let a = fold_stack(&strips[..burn_in])?;
    let b = fold_stack(&strips[burn_in..2 * burn_in])?;
    Ok((unit_gaps(&a), unit_gaps(&renorm_pair(&a, &b)?)))
}

/// Mean raw cross density at each level of repeated pairwise composition
/// (`n = 1, 2, 4, ...`).
pub fn doubling_levels(strips: &[StripConfig]) -> Result<Vec<(f64, f64)>> {
    let span = |c: &StripConfig| c.t_top - c.t_bottom;
    let unit = span(strips.first().ok_or_else(|| validation("empty stack"))?);
    let mut level = strips.to_vec();
    let mut out = Vec::new();
    loop {
        let d = level.iter().map(StripConfig::cross_density).sum::<f64>() / level.len() as f64;
        out.push((span(&level[0]) / unit, d));
        if level.len() < 2 {
            break;
        }
        level = level.chunks_exact(2).map(|p| renorm_pair(&p[0], &p[1])).collect::<Result<_>>()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn strip(t: f64, crosses: &[f64], dots: &[f64], origin_dot: f64) -> StripConfig {
        StripConfig::from_basins(t, t - 1.0, 10.0, crosses, dots, origin_dot).unwrap()
    }

    /// Brute-force composition on explicit lifted points: an upper cross
    /// survives when the upper dots on its two sides fall in different lower
    /// intervals, checked by scanning lower crosses directly.
    fn brute(upper: &StripConfig, lower: &StripConfig) -> (Vec<f64>, Vec<f64>) {
        let lc: Vec<f64> = (-3 * lower.count() as i64..3 * lower.count() as i64).map(|k| lower.cross_pos(k)).collect();
        let bucket = |x: f64| lc.iter().filter(|&&c| c <= x).count();
        let mut crosses = Vec::new();
        let mut dots = std::collections::BTreeSet::new();
        for j in 0..upper.count() as i64 {
            let a = bucket(upper.dot_pos(upper.dot_of_interval(j)));
            let b = bucket(upper.dot_pos(upper.dot_of_interval(j + 1)));
            if a != b {
                crosses.push(upper.cross_pos(j).rem_euclid(upper.period));
            }
            let x = lower.dot_pos(lower.dot_of_interval(lower.interval_of(upper.dot_pos(upper.dot_of_interval(j)))));
            dots.insert((x.rem_euclid(upper.period) * 1e9).round() as i64);
        }
        crosses.sort_by(f64::total_cmp);
        (crosses, dots.into_iter().map(|v| v as f64 * 1e-9).collect())
    }

    #[test]
    fn empty_interval_eliminates_its_dot() {
        // lower intervals [1,4) [4,7) [7,11): upper dots at 2 and 8 leave [4,7) empty
        let upper = strip(2.0, &[0.5, 5.0], &[2.0, 8.0], 2.0);
        let lower = strip(1.0, &[1.0, 4.0, 7.0], &[2.5, 5.5, 9.0], -1.0);
        let out = renorm_pair(&upper, &lower).unwrap();
        assert_eq!(out.dots, vec![2.5, 9.0]);
        assert_eq!(out.crosses, vec![0.5, 5.0]);
        assert_eq!((out.t_top, out.t_bottom), (2.0, 0.0));
        assert_eq!(out.dot_pos(out.xi), 2.5);
    }

    #[test]
    fn single_dot_per_interval_eliminates_nothing() {
        let upper = strip(2.0, &[0.5, 3.5, 6.5], &[2.0, 5.0, 8.0], 2.0);
        let lower = strip(1.0, &[1.0, 4.0, 7.0], &[2.5, 5.5, 9.0], 2.5);
        let out = renorm_pair(&upper, &lower).unwrap();
        assert_eq!(out.crosses, upper.crosses);
        assert_eq!(out.dots, lower.dots);
    }

    #[test]
    fn three_dots_keep_outer_crosses() {
        // upper dots at 1.5, 2.5, 3.5 share lower interval [1, 5); the four
        // crosses bounding their intervals are 1, 2, 3, 4 and 2, 3 go
        let upper = strip(2.0, &[1.0, 2.0, 3.0, 4.0, 8.0], &[1.5, 2.5, 3.5, 6.0, 9.0], 9.0 - 10.0);
        let lower = strip(1.0, &[1.0, 5.0, 7.0, 8.5, 9.5], &[3.0, 6.0, 8.0, 9.0, 0.5], 0.5);
        let per = dots_per_interval(&upper, &lower);
        assert_eq!(per.iter().find(|p| p.0 == 1).unwrap().1, 3);
        let out = renorm_pair(&upper, &lower).unwrap();
        assert_eq!(out.crosses, vec![1.0, 4.0, 8.0]);
        assert_eq!(out.dots, vec![3.0, 6.0, 9.0]);
    }

    #[test]
    fn five_cross_fixture_matches_hand_enumeration() {
        // upper: 5 intervals, dots at 0.4, 2.2, 2.8, 6.1, 7.3
        // lower crosses 1, 3, 5, 7, 9 so dots land in intervals
        //   [9,11) [1,3) [1,3) [5,7) [7,9)
        // the lower intervals [3,5) and the one reached from nothing lose dots
        let upper = strip(2.0, &[1.5, 2.5, 4.0, 7.0, 9.5], &[0.4, 2.2, 2.8, 6.1, 7.3], 0.4);
        let lower = strip(1.0, &[1.0, 3.0, 5.0, 7.0, 9.0], &[0.0, 2.0, 4.0, 6.0, 8.0], 0.0);
        let out = renorm_pair(&upper, &lower).unwrap();
        // cross 2.5 separates the two dots in [1,3) and is removed
        assert_eq!(out.crosses, vec![1.5, 4.0, 7.0, 9.5]);
        // dot 4 (from [3,5)) is unreachable
        assert_eq!(out.dots, vec![0.0, 2.0, 6.0, 8.0]);
        let (bc, bd) = brute(&upper, &lower);
        assert_eq!(out.crosses, bc);
        assert_eq!(out.dots, bd);
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = strip(2.0, &[1.0], &[2.0], 2.0);
        let b = StripConfig::from_basins(1.0, 0.0, 11.0, &[1.0], &[2.0], 2.0).unwrap();
        assert!(renorm_pair(&a, &b).is_err());
        let c = strip(5.0, &[1.0], &[2.0], 2.0);
        assert!(renorm_pair(&c, &a).is_err());
    }

    #[test]
    fn alpha_fits() {
        let exact: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 10.0, 20.0].iter().map(|&n: &f64| (n, n.powf(-0.5))).collect();
        let (a, se) = estimate_alpha(&exact).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && se < 1e-12);
        let mut rng = crate::rng::substream(9, crate::rng::Stream::Synthetic, 2, 0);
        let noisy: Vec<(f64, f64)> =
            (0..30).map(|i| 2f64.powf(i as f64 / 5.0)).map(|n| (n, n.powf(-2.0 / 3.0) * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0)))).collect();
        let (a, _) = estimate_alpha(&noisy).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 0.02);
        assert!(estimate_alpha(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (20.0, 1.0)]).is_err());
        assert!(estimate_alpha(&[(1.0, 1.0), (2.0, 0.5), (3.0, 0.4), (5.0, 0.3)]).is_err());
    }

    #[test]
    fn identical_one_to_one_stack_is_fixed() {
        let s = |t: f64| strip(t, &[0.5, 3.5, 6.5], &[2.0, 5.0, 8.0], 2.0);
        let stack = StripStack { strips: vec![s(0.0), s(-1.0), s(-2.0), s(-3.0)], alpha_target: None };
        let r = renorm_sweep(&stack, SweepMode::Incremental).unwrap();
        for c in &r.stack.strips {
            assert_eq!(c.count(), 3);
        }
        assert!(r.densities.iter().all(|d| (d.1 - 0.3).abs() < 1e-12));
        let r = renorm_sweep(&stack, SweepMode::Doubling).unwrap();
        assert_eq!(r.stack.strips.len(), 2);
    }

    fn random_strip(rng: &mut impl Rng, t: f64, period: f64) -> StripConfig {
        let m = rng.random_range(1..12);
        let c: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * period).collect();
        let d: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * period).collect();
        let mut s = StripConfig::new(t, t - 1.0, period, &c, &d, 0).unwrap();
        s.xi = rng.random_range(-3..3);
        s
    }

    #[test]
    fn rescaling_commutes_with_composition() {
        let mut rng = crate::rng::substream(4, crate::rng::Stream::Synthetic, 3, 0);
        for _ in 0..100 {
            let u = random_strip(&mut rng, 1.0, 10.0);
            let l = random_strip(&mut rng, 0.0, 10.0);
            let f = 0.1 + 3.0 * rng.random::<f64>();
            let a = renorm_pair(&u, &l).unwrap().rescale(f);
            let b = renorm_pair(&u.rescale(f), &l.rescale(f)).unwrap();
            assert_eq!(a.xi, b.xi);
            for (x, y) in a.crosses.iter().zip(&b.crosses).chain(a.dots.iter().zip(&b.dots)) {
                assert!((x - y).abs() < 1e-12 * f * 10.0);
            }
            assert_eq!(a.count(), b.count());
        }
    }

    proptest! {
        #[test]
        fn composition_only_removes_points(seed in 0u64..5000) {
            let mut rng = crate::rng::substream(seed, crate::rng::Stream::Synthetic, 4, 0);
            let u = random_strip(&mut rng, 1.0, 10.0);
            let l = random_strip(&mut rng, 0.0, 10.0);
            let out = renorm_pair(&u, &l).unwrap();
            prop_assert!(out.count() <= u.count().min(l.count()));
            prop_assert!(out.crosses.iter().all(|c| u.crosses.contains(c)));
            prop_assert!(out.dots.iter().all(|d| l.dots.contains(d)));
            let (bc, bd) = brute(&u, &l);
            prop_assert_eq!(&out.crosses, &bc);
            prop_assert_eq!(out.dots.len(), bd.len());
            // the origin interval reaches the dot found by following it through both strips
            let target = l.dot_pos(l.dot_of_interval(l.interval_of(u.dot_pos(u.dot_of_interval(0)))));
            prop_assert!((out.dot_pos(out.xi) - target).abs() < 1e-9);
            for k in -5..5 {
                prop_assert!(out.dot_pos(out.dot_of_interval(k + 1)) > out.dot_pos(out.dot_of_interval(k)));
            }
        }
    }
}
