//! Dots, crosses and connectors on one time strip.
//!
//! Labelling conventions on the circle of circumference `period`:
//! - Crosses split the circle into intervals. Interval `k` is the half-open
//!   `[C(k-1), C(k))` of lifted cross positions, and interval 0 contains `x = 0`.
//!   A point lying exactly on a cross belongs to the interval on its right.
//! - Dot 0 is the dot nearest the origin, ties going to the right; labels grow
//!   rightward and lift by the dot count per period.
//! - The connector `xi` sends interval `k` to dot `k + xi`. Equal counts make
//!   this the whole monotone degree-one correspondence.

use crate::error::{validation, Error, Result};
use crate::grid::{wrap, Grid};
use crate::inviscid::SolutionField;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripConfig {
    pub t_top: f64,
    pub t_bottom: f64,
    pub period: f64,
    pub crosses: Vec<f64>,
    pub dots: Vec<f64>,
    pub xi: i64,
}

fn sorted_mod(v: &[f64], period: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x.rem_euclid(period)).map(|x| if x >= period { 0.0 } else { x }).collect();
    out.sort_by(f64::total_cmp);
    out
}

impl StripConfig {
    /// Builds a strip from raw positions (reduced modulo `period` and sorted)
    /// and the connector.
    pub fn new(t_top: f64, t_bottom: f64, period: f64, crosses: &[f64], dots: &[f64], xi: i64) -> Result<Self> {
        let cfg = Self {
            t_top,
            t_bottom,
            period,
            crosses: sorted_mod(crosses, period),
            dots: sorted_mod(dots, period),
            xi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Strip whose origin interval maps to the dot at lifted position
    /// `origin_dot`.
    pub fn from_basins(t_top: f64, t_bottom: f64, period: f64, crosses: &[f64], dots: &[f64], origin_dot: f64) -> Result<Self> {
        let mut cfg = Self::new(t_top, t_bottom, period, crosses, dots, 0)?;
        cfg.xi = cfg.dot_label_at(origin_dot).ok_or_else(|| validation(format!("no dot at lifted position {origin_dot}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(validation("strip period must be positive"));
        }
        if !(self.t_top > self.t_bottom) {
            return Err(validation(format!("t_top {} must exceed t_bottom {}", self.t_top, self.t_bottom)));
        }
        if self.crosses.is_empty() || self.dots.is_empty() {
            return Err(validation("strip needs at least one cross and one dot"));
        }
        if self.crosses.len() != self.dots.len() {
            return Err(validation(format!(
                "{} crosses but {} dots; intervals and dots must correspond one to one",
                self.crosses.len(),
                self.dots.len()
            )));
        }
        for v in [&self.crosses, &self.dots] {
            if v.windows(2).any(|w| !(w[1] > w[0])) || v.iter().any(|&x| !(0.0..self.period).contains(&x)) {
                return Err(validation("positions must be distinct and lie in [0, period)"));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.crosses.len()
    }

    fn zero_crosses(&self) -> i64 {
        self.crosses.iter().take_while(|&&c| c <= 0.0).count() as i64
    }

    /// Lifted position of cross `k` (right end of interval `k`).
    pub fn cross_pos(&self, k: i64) -> f64 {
        let m = self.count() as i64;
        let g = k + self.zero_crosses();
        self.crosses[g.rem_euclid(m) as usize] + g.div_euclid(m) as f64 * self.period
    }

    /// Cross `k` reduced to `[0, period)`, read straight from storage.
    pub fn cross_raw(&self, k: i64) -> f64 {
        let m = self.count() as i64;
        self.crosses[(k + self.zero_crosses()).rem_euclid(m) as usize]
    }

    /// Dot `l` reduced to `[0, period)`, read straight from storage.
    pub fn dot_raw(&self, l: i64) -> f64 {
        let m = self.dots.len() as i64;
        self.dots[(l + self.dot_base().0).rem_euclid(m) as usize]
    }

    /// Interval containing the lifted position `x`.
    pub fn interval_of(&self, x: f64) -> i64 {
        let m = self.count() as i64;
        let q = x.div_euclid(self.period);
        let r = x - q * self.period;
        let below = self.crosses.partition_point(|&c| c <= r) as i64;
        q as i64 * m + below - self.zero_crosses()
    }

    fn dot_base(&self) -> (i64, i64) {
        let m = self.dots.len();
        let first = self.dots[0];
        let last = self.dots[m - 1] - self.period;
        if first <= -last {
            (0, 0)
        } else {
            (m as i64 - 1, -1)
        }
    }

    /// Lifted position of dot `l`.
    pub fn dot_pos(&self, l: i64) -> f64 {
        let m = self.dots.len() as i64;
        let (r0, lift) = self.dot_base();
        let g = l + r0;
        self.dots[g.rem_euclid(m) as usize] + (g.div_euclid(m) + lift) as f64 * self.period
    }

    /// Label of the dot at lifted position `x`, if there is one.
    pub fn dot_label_at(&self, x: f64) -> Option<i64> {
        let m = self.dots.len() as i64;
        let tol = 1e-9 * self.period;
        let q = x.div_euclid(self.period);
        let r = x - q * self.period;
        let (r0, lift) = self.dot_base();
        let candidates = [(r, 0i64), (r - self.period, 1), (r + self.period, -1)];
        for (rr, dq) in candidates {
            if let Some(idx) = self.dots.iter().position(|&d| (d - rr).abs() <= tol) {
                let g = idx as i64 + (q as i64 + dq - lift) * m;
                return Some(g - r0);
            }
        }
        None
    }

    /// Dot label reached from interval `k`.
    pub fn dot_of_interval(&self, k: i64) -> i64 {
        k + self.xi
    }

    pub fn cross_density(&self) -> f64 {
        self.count() as f64 / self.period
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            t_top: self.t_top,
            t_bottom: self.t_bottom,
            period: self.period * factor,
            crosses: self.crosses.iter().map(|x| x * factor).collect(),
            dots: self.dots.iter().map(|x| x * factor).collect(),
            xi: self.xi,
        }
    }

    /// Multiplies every length by `factor`.
    pub fn rescale(&self, factor: f64) -> Self {
        self.scaled(factor)
    }
}

/// Rescales lengths so the cross field has unit density.
pub fn rescale_to_unit_density(cfg: &StripConfig) -> StripConfig {
    let f = cfg.cross_density();
    if f == 1.0 {
        return cfg.clone();
    }
    cfg.scaled(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFieldStats {
    pub count: usize,
    pub density: f64,
    /// Upper edges of the gap bins; the last bin also absorbs longer gaps.
    pub gap_bin_edges: Vec<f64>,
    /// One gap per point on the circle, so the counts sum to `count`.
    pub gap_histogram: Vec<usize>,
    pub gaps: Vec<f64>,
    pub pair_bin_edges: Vec<f64>,
    /// Pair correlation `g(r)`, equal to 1 for a Poisson field.
    pub two_point_correlation: Vec<f64>,
}

/// Descriptive statistics of a point field on a circle. Gap bins span four
/// mean gaps; pair-correlation bins span `r_max` (half a period at most).
pub fn point_field_stats(points: &[f64], period: f64, bins: usize, r_max: f64) -> Result<PointFieldStats> {
    let m = points.len();
    if m < 2 {
        return Err(Error::Degenerate(format!("need at least 2 points, got {m}")));
    }
    let p = sorted_mod(points, period);
    let gaps: Vec<f64> = (0..m).map(|i| if i + 1 < m { p[i + 1] - p[i] } else { p[0] + period - p[m - 1] }).collect();
    let mean_gap = period / m as f64;
    let bins = bins.max(1);
    let gw = 4.0 * mean_gap / bins as f64;
    let mut hist = vec![0usize; bins];
    for &g in &gaps {
        hist[((g / gw) as usize).min(bins - 1)] += 1;
    }
    let r_max = r_max.min(0.5 * period);
    let rw = r_max / bins as f64;
    let mut pairs = vec![0usize; bins];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = p[j] - p[i];
            let d = d.min(period - d);
            if d < r_max {
                pairs[(d / rw) as usize] += 1;
            }
        }
    }
    let density = m as f64 / period;
    // expected unordered pairs at distance in [r, r + dr) for Poisson: m (m-1)/2 * 2 dr / P
    let expect = (m * (m - 1)) as f64 / 2.0 * 2.0 * rw / period;
    Ok(PointFieldStats {
        count: m,
        density,
        gap_bin_edges: (1..=bins).map(|k| k as f64 * gw).collect(),
        gap_histogram: hist,
        gaps,
        pair_bin_edges: (1..=bins).map(|k| k as f64 * rw).collect(),
        two_point_correlation: pairs.iter().map(|&c| c as f64 / expect).collect(),
    })
}

/// Statistics of the cross and dot fields of a strip.
pub fn field_stats(cfg: &StripConfig, bins: usize) -> Result<(PointFieldStats, PointFieldStats)> {
    let r_max = 0.5 * cfg.period;
    Ok((point_field_stats(&cfg.crosses, cfg.period, bins, r_max)?, point_field_stats(&cfg.dots, cfg.period, bins, r_max)?))
}

/// Composite origin map from a bottom time to the current top time:
/// `origins[i]` is the lifted bottom node reached by tracing node `i` back.
#[derive(Clone, Debug)]
pub struct OriginTracker {
    pub grid: Grid,
    pub bottom_time: i64,
    pub top_time: i64,
    pub origins: Vec<i64>,
}

impl OriginTracker {
    pub fn new(grid: Grid, bottom_time: i64) -> Self {
        Self { grid, bottom_time, top_time: bottom_time, origins: (0..grid.n as i64).collect() }
    }

    /// Extends the map by one step using the step's backpointers.
    pub fn advance(&mut self, step: &SolutionField) {
        let n = self.grid.n;
        self.origins = step
            .backpointers
            .iter()
            .map(|&j| {
                let r = wrap(j, n);
                self.origins[r] + (j - r as i64)
            })
            .collect();
        self.top_time = step.time_index;
    }
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub strip: StripConfig,
    pub warnings: Vec<String>,
    /// Diameter of every cluster, in length units.
    pub cluster_diameters: Vec<f64>,
}

/// Dots and crosses from a composite origin map. Adjacent top nodes whose
/// origins differ by more than `cluster_tol` are separated by a cross; each
/// run in between is one cluster whose median origin is its dot.
pub fn strip_from_origins(grid: &Grid, origins: &[i64], t_top: f64, t_bottom: f64, cluster_tol: f64) -> Result<Extraction> {
    let n = grid.n;
    let h = grid.h();
    let tol_cells = cluster_tol / h;
    let lifted = |i: i64| -> i64 {
        let r = wrap(i, n);
        origins[r] + (i - r as i64)
    };
    let splits: Vec<i64> = (0..n as i64).filter(|&i| (lifted(i + 1) - lifted(i)) as f64 > tol_cells).collect();
    if splits.is_empty() {
        return Err(Error::Resolution(
            "backtraced endpoints form a single cluster around the whole circle; no concentration at this depth".into(),
        ));
    }
    let mut crosses = Vec::with_capacity(splits.len());
    let mut dots = Vec::with_capacity(splits.len());
    let mut diameters = Vec::with_capacity(splits.len());
    let mut origin_dot = None;
    for (k, &s) in splits.iter().enumerate() {
        let a = s + 1;
        let b = if k + 1 < splits.len() { splits[k + 1] } else { splits[0] + n as i64 };
        crosses.push((s as f64 + 0.5) * h);
        let mut members: Vec<i64> = (a..=b).map(lifted).collect();
        members.sort_unstable();
        let med = if members.len() % 2 == 1 {
            members[members.len() / 2] as f64
        } else {
            0.5 * (members[members.len() / 2 - 1] + members[members.len() / 2]) as f64
        };
        diameters.push((members[members.len() - 1] - members[0]) as f64 * h);
        dots.push(med * h);
        // the run holding node 0 (or its lift n) is the origin interval
        if a <= 0 && 0 <= b {
            origin_dot = Some(med * h);
        } else if a <= n as i64 && n as i64 <= b {
            origin_dot = Some(med * h - grid.period);
        }
    }
    let mut warnings = Vec::new();
    let big = diameters.iter().filter(|&&d| d > cluster_tol).count();
    if big > 0 {
        warnings.push(format!("{big} clusters exceed the tolerance {cluster_tol}; strip too short for separation"));
    }
    let origin_dot = origin_dot.expect("runs cover the circle");
    let strip = StripConfig::from_basins(t_top, t_bottom, grid.period, &crosses, &dots, origin_dot)?;
    Ok(Extraction { strip, warnings, cluster_diameters: diameters })
}

/// Strip between `fields[bottom]` and `fields[top]` of a stored run.
pub fn extract_strip(fields: &[SolutionField], top: usize, bottom: usize, cluster_tol: f64) -> Result<Extraction> {
    if !(top > bottom && top < fields.len()) {
        return Err(validation(format!("need bottom < top < {}, got {bottom}, {top}", fields.len())));
    }
    let grid = fields[0].grid;
    let mut tr = OriginTracker::new(grid, fields[bottom].time_index);
    for f in &fields[bottom + 1..=top] {
        if f.backpointers.len() != grid.n {
            return Err(validation(format!("field at time {} has no backpointers", f.time_index)));
        }
        tr.advance(f);
    }
    let dt = fields[top].dt;
    strip_from_origins(&grid, &tr.origins, fields[top].time_index as f64 * dt, fields[bottom].time_index as f64 * dt, cluster_tol)
}
