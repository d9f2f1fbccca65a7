//! Inviscid kicked Hamilton–Jacobi dynamics by the discrete Lax–Oleinik
//! recursion, minimiser tracing and shock bookkeeping.
//!
//! The step from time `n` to `n + 1` is
//! `Phi_{n+1}(x) = min_y [Phi_n(y) + dt L((x - y)/dt)] - F_{n+1}(x)`,
//! i.e. the kick of index `n + 1` lands at the arrival time.

use crate::error::{config, Error, Result};
use crate::forcing::PotentialField;
use crate::grid::{wrap, Grid};
use crate::hamiltonian::HamiltonianSpec;
use serde::{Deserialize, Serialize};

/// Windows up to this width are scanned directly; wider ones use the
/// monotone divide-and-conquer argmin.
const SCAN_WIDTH: usize = 48;

/// `Phi(x_i) = b x_i + psi_i + gauge`; backpointers are lifted node indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    pub time_index: i64,
    pub grid: Grid,
    pub dt: f64,
    pub slope_b: f64,
    pub psi: Vec<f64>,
    pub gauge: f64,
    /// Lifted argmin index `j` with `y*(x_i) = j h`; empty for initial data.
    pub backpointers: Vec<i64>,
    /// Kick potential subtracted in the step that produced this field.
    pub kick: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimiserPath {
    pub endpoint_time: i64,
    pub endpoint_x: f64,
    /// Lifted positions from the earliest stored time up to the endpoint.
    pub positions: Vec<f64>,
    pub times: Vec<i64>,
    pub action: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShockRecord {
    pub position: f64,
    pub birth_time: i64,
    pub current_time: i64,
    pub left_limit_u: f64,
    pub right_limit_u: f64,
    /// Lifted interval of previous-time points swallowed by the shock in the
    /// last step (both minimising branches end at its endpoints).
    pub absorbed: (f64, f64),
}

impl ShockRecord {
    pub fn age(&self) -> i64 {
        self.current_time - self.birth_time
    }
}

impl SolutionField {
    /// `Phi = b x` (flat sublinear part).
    pub fn flat(grid: Grid, dt: f64, slope_b: f64, time_index: i64) -> Self {
        Self::from_psi(grid, dt, slope_b, vec![0.0; grid.n], time_index)
    }

    pub fn from_psi(grid: Grid, dt: f64, slope_b: f64, psi: Vec<f64>, time_index: i64) -> Self {
        assert_eq!(psi.len(), grid.n);
        Self { time_index, grid, dt, slope_b, psi, gauge: 0.0, backpointers: Vec::new(), kick: Vec::new() }
    }

    /// Initial data from full values `Phi(x_i)`; the linear part `b x` is removed.
    pub fn from_phi(grid: Grid, dt: f64, slope_b: f64, phi: &[f64], time_index: i64) -> Self {
        let psi = phi.iter().enumerate().map(|(i, &p)| p - slope_b * grid.x(i)).collect();
        Self::from_psi(grid, dt, slope_b, psi, time_index)
    }

    /// Point source at node `s`: zero there (and on its lifts, up to `b P`),
    /// `+inf` elsewhere.
    pub fn point_source(grid: Grid, dt: f64, slope_b: f64, s: usize, time_index: i64) -> Self {
        let mut psi = vec![f64::INFINITY; grid.n];
        psi[s] = -slope_b * grid.x(s);
        Self::from_psi(grid, dt, slope_b, psi, time_index)
    }

    #[inline]
    pub fn phi_at(&self, i: usize) -> f64 {
        self.slope_b * self.grid.x(i) + self.psi[i] + self.gauge
    }

    /// `Phi` at the lifted node `j` (may lie outside `0..n`).
    #[inline]
    pub fn phi_lifted(&self, j: i64) -> f64 {
        self.slope_b * j as f64 * self.grid.h() + self.psi[wrap(j, self.grid.n)] + self.gauge
    }

    pub fn phi(&self) -> Vec<f64> {
        (0..self.grid.n).map(|i| self.phi_at(i)).collect()
    }

    /// Forward differences `(Phi_{i+1} - Phi_i)/h` around the circle.
    pub fn gradient_fd(&self) -> Vec<f64> {
        let n = self.grid.n;
        let h = self.grid.h();
        // the gauge cancels; leaving it out keeps rounding at the scale of psi
        (0..n).map(|i| (self.psi[(i + 1) % n] - self.psi[i]) / h + self.slope_b).collect()
    }

    /// Minimiser velocity `(x_i - y*(x_i))/dt` from the backpointers.
    pub fn velocity(&self) -> Option<Vec<f64>> {
        if self.backpointers.is_empty() {
            return None;
        }
        let h = self.grid.h();
        Some(
            self.backpointers
                .iter()
                .enumerate()
                .map(|(i, &j)| (i as i64 - j) as f64 * h / self.dt)
                .collect(),
        )
    }

    /// Moves the minimum of `psi` into the gauge constant.
    pub fn normalize_gauge(&mut self) {
        let m = self.psi.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        if m.is_finite() {
            for v in &mut self.psi {
                *v -= m;
            }
            self.gauge += m;
        }
    }

    /// Sublinear oscillation `max psi - min psi`, infinite if any entry is.
    pub fn oscillation(&self) -> f64 {
        let (lo, hi) = self
            .psi
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    fn is_monotone(&self) -> bool {
        self.backpointers.windows(2).all(|w| w[0] <= w[1])
            && self.backpointers.first().zip(self.backpointers.last()).is_none_or(|(a, b)| *b <= *a + self.grid.n as i64)
    }
}

fn step_costs(ham: &HamiltonianSpec, h: f64, dt: f64, b: f64, dlo: i64, dhi: i64) -> Vec<f64> {
    (dlo..=dhi)
        .map(|d| {
            let dx = d as f64 * h;
            dt * ham.lagrangian(dx / dt) - b * dx
        })
        .collect()
}

struct ArgminProblem<'a> {
    psi: &'a [f64],
    cost: &'a [f64],
    dlo: i64,
    dhi: i64,
}

impl ArgminProblem<'_> {
    #[inline]
    fn value(&self, i: i64, j: i64) -> f64 {
        self.psi[wrap(j, self.psi.len())] + self.cost[(i - j - self.dlo) as usize]
    }

    fn scan(&self, i: i64, a: i64, b: i64) -> (f64, i64) {
        let mut best = (f64::INFINITY, a);
        for j in a..=b {
            let v = self.value(i, j);
            if v < best.0 {
                best = (v, j);
            }
        }
        best
    }

    fn solve(&self, vals: &mut [f64], bps: &mut [i64]) {
        let n = self.psi.len() as i64;
        if ((self.dhi - self.dlo) as usize) < SCAN_WIDTH {
            for i in 0..n {
                let (v, j) = self.scan(i, i - self.dhi, i - self.dlo);
                vals[i as usize] = v;
                bps[i as usize] = j;
            }
        } else {
            self.divide(0, n - 1, -self.dhi, n - 1 - self.dlo, vals, bps);
        }
    }

    fn divide(&self, ilo: i64, ihi: i64, jlo: i64, jhi: i64, vals: &mut [f64], bps: &mut [i64]) {
        if ilo > ihi {
            return;
        }
        let mid = ilo + (ihi - ilo) / 2;
        let mut a = jlo.max(mid - self.dhi);
        let mut b = jhi.min(mid - self.dlo);
        if a > b {
            a = mid - self.dhi;
            b = mid - self.dlo;
        }
        let (v, j) = self.scan(mid, a, b);
        vals[mid as usize] = v;
        bps[mid as usize] = j;
        self.divide(ilo, mid - 1, jlo, j, vals, bps);
        self.divide(mid + 1, ihi, j, jhi, vals, bps);
    }
}

/// One Hopf–Lax step followed by the kick. Ties go to the smaller `y`.
pub fn lax_oleinik_step(state: &SolutionField, kick: &[f64], ham: &HamiltonianSpec) -> Result<SolutionField> {
    ham.validate()?;
    let n = state.grid.n;
    if kick.len() != n {
        return Err(config(format!("kick has {} nodes, grid has {n}", kick.len())));
    }
    let h = state.grid.h();
    let dt = state.dt;
    let osc = state.oscillation();
    let half = (n / 2) as i64;
    let (dlo, dhi, bounded) = if osc.is_finite() {
        let vmax = ham.speed_bound(osc / dt, state.slope_b);
        let w = ((vmax * dt / h).ceil() as i64 + 1).max(1);
        if w >= half {
            (-half, half, false)
        } else {
            (-w, w, true)
        }
    } else {
        // point-source data: one lift per residue
        (-((n as i64 - 1) / 2), half, true)
    };
    let cost = step_costs(ham, h, dt, state.slope_b, dlo, dhi);
    let prob = ArgminProblem { psi: &state.psi, cost: &cost, dlo, dhi };
    let mut vals = vec![0.0; n];
    let mut bps = vec![0i64; n];
    prob.solve(&mut vals, &mut bps);
    if !bounded {
        if let Some(i) = (0..n).find(|&i| (i as i64 - bps[i]).abs() >= half) {
            return Err(Error::Resolution(format!(
                "minimiser displacement at node {i} reaches half the period; dt is too large for the forcing amplitude"
            )));
        }
    }
    let psi: Vec<f64> = vals.iter().zip(kick).map(|(v, k)| v - k).collect();
    if psi.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in Lax–Oleinik step".into()));
    }
    Ok(SolutionField {
        time_index: state.time_index + 1,
        grid: state.grid,
        dt,
        slope_b: state.slope_b,
        psi,
        gauge: state.gauge,
        backpointers: bps,
        kick: kick.to_vec(),
    })
}

/// Same step by exhaustive scan over every lifted `y` within one period on
/// either side. Quadratic cost per node; kept as a reference implementation.
pub fn lax_oleinik_step_dense(state: &SolutionField, kick: &[f64], ham: &HamiltonianSpec) -> Result<SolutionField> {
    ham.validate()?;
    let n = state.grid.n as i64;
    let h = state.grid.h();
    let mut psi = vec![0.0; n as usize];
    let mut bps = vec![0i64; n as usize];
    for i in 0..n {
        let mut best = (f64::INFINITY, i);
        for j in (i - n)..=(i + n) {
            let dx = (i - j) as f64 * h;
            let v = state.psi[wrap(j, n as usize)] + state.dt * ham.lagrangian(dx / state.dt) - state.slope_b * dx;
            if v < best.0 {
                best = (v, j);
            }
        }
        psi[i as usize] = best.0 - kick[i as usize];
        bps[i as usize] = best.1;
    }
    Ok(SolutionField {
        time_index: state.time_index + 1,
        grid: state.grid,
        dt: state.dt,
        slope_b: state.slope_b,
        psi,
        gauge: state.gauge,
        backpointers: bps,
        kick: kick.to_vec(),
    })
}

/// Runs `steps` kicks forward from `init`, keeping every intermediate field.
/// The returned vector starts with `init`.
pub fn evolve(
    init: &SolutionField,
    forcing: &PotentialField,
    ham: &HamiltonianSpec,
    steps: usize,
) -> Result<Vec<SolutionField>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(init.clone());
    for _ in 0..steps {
        let prev = out.last().expect("non-empty");
        let kick = forcing.sample_kick(prev.time_index + 1, &prev.grid)?;
        let mut next = lax_oleinik_step(prev, &kick, ham)?;
        next.normalize_gauge();
        out.push(next);
    }
    Ok(out)
}

fn trace_from(fields: &[SolutionField], k_last: usize, mut idx: i64) -> Vec<i64> {
    let n = fields[0].grid.n;
    let mut lifted = vec![0i64; k_last + 1];
    lifted[k_last] = idx;
    for k in (1..=k_last).rev() {
        let r = wrap(idx, n);
        idx = fields[k].backpointers[r] + (idx - r as i64);
        lifted[k - 1] = idx;
    }
    lifted
}

fn path_action(fields: &[SolutionField], ham: &HamiltonianSpec, lifted: &[i64]) -> f64 {
    let h = fields[0].grid.h();
    let n = fields[0].grid.n;
    let mut a = fields[0].phi_lifted(lifted[0]);
    for k in 1..lifted.len() {
        let f = &fields[k];
        let v = (lifted[k] - lifted[k - 1]) as f64 * h / f.dt;
        a += f.dt * ham.lagrangian(v) - f.kick[wrap(lifted[k], n)];
    }
    a
}

fn to_path(fields: &[SolutionField], ham: &HamiltonianSpec, lifted: Vec<i64>) -> MinimiserPath {
    let h = fields[0].grid.h();
    let action = path_action(fields, ham, &lifted);
    let last = lifted.len() - 1;
    MinimiserPath {
        endpoint_time: fields[last].time_index,
        endpoint_x: lifted[last] as f64 * h,
        positions: lifted.iter().map(|&j| j as f64 * h).collect(),
        times: fields[..=last].iter().map(|f| f.time_index).collect(),
        action,
    }
}

/// Follows backpointers from the node nearest `endpoint_x` at the last field
/// back to `fields[0]`. Gauge shifts from `normalize_gauge` are carried in
/// each field's `gauge`, so the recomputed action matches `Phi` at the endpoint.
///
/// If another non-adjacent local argmin of the last step lies within
/// `eps_tie * max(1, |Phi|)` of the chosen one, both branches are returned in
/// [`Error::AmbiguousEndpoint`].
pub fn trace_minimiser(
    fields: &[SolutionField],
    ham: &HamiltonianSpec,
    endpoint_x: f64,
    eps_tie: f64,
) -> Result<MinimiserPath> {
    if fields.len() < 2 {
        return Err(config("trace needs the initial field and at least one step"));
    }
    for f in &fields[1..] {
        f.grid.check_same(&fields[0].grid)?;
        if f.backpointers.len() != f.grid.n {
            return Err(config(format!("field at time {} has no backpointers", f.time_index)));
        }
    }
    let k_last = fields.len() - 1;
    let last = &fields[k_last];
    let prev = &fields[k_last - 1];
    let h = last.grid.h();
    let n = last.grid.n as i64;
    let i = (endpoint_x / h).round() as i64;
    let r = wrap(i, n as usize);
    let j_star = last.backpointers[r] + (i - r as i64);

    // candidate values over one period centred on the chosen argmin
    let value = |j: i64| prev.phi_lifted(j) + last.dt * ham.lagrangian((i - j) as f64 * h / last.dt);
    let best = value(j_star);
    let tol = eps_tie * best.abs().max(1.0);
    let mut rival = None;
    for j in (j_star - n / 2)..=(j_star + n / 2) {
        if (j - j_star).abs() <= 1 {
            continue;
        }
        let v = value(j);
        if v <= best + tol && v <= value(j - 1) && v <= value(j + 1) {
            rival = Some(j);
            break;
        }
    }

    let mut lifted = trace_from(fields, k_last - 1, j_star);
    lifted.push(i);
    let path = to_path(fields, ham, lifted);
    let phi_end = last.phi_lifted(i);
    if (path.action - phi_end).abs() > 1e-8 * phi_end.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "recomputed action {} disagrees with Phi {} at the endpoint",
            path.action, phi_end
        )));
    }
    if let Some(j) = rival {
        let mut other = trace_from(fields, k_last - 1, j);
        other.push(i);
        let other = to_path(fields, ham, other);
        let (a, b) = if j < j_star { (other, path) } else { (path, other) };
        return Err(Error::AmbiguousEndpoint(Box::new((a, b))));
    }
    Ok(path)
}

/// Shocks of the last step: backpointer jumps of at least `jump_threshold`
/// cells, including the wrap-around pair. Positions are cell midpoints and
/// one-sided velocities come from one-sided differences of `Phi`.
///
/// `eps_tie` is accepted for interface symmetry with [`trace_minimiser`];
/// detection works on the integer jump map, where float ties cannot create
/// spurious jumps.
pub fn detect_shocks(state: &SolutionField, jump_threshold: usize, _eps_tie: f64) -> Vec<ShockRecord> {
    let n = state.grid.n;
    if state.backpointers.len() != n {
        return Vec::new();
    }
    let h = state.grid.h();
    let p = state.grid.period;
    let thr = jump_threshold.max(2) as i64;
    let mut out = Vec::new();
    for i in 0..n {
        let next = if i + 1 < n { state.backpointers[i + 1] } else { state.backpointers[0] + n as i64 };
        let jump = next - state.backpointers[i];
        if jump >= thr {
            let il = i as i64;
            let left = (state.phi_lifted(il) - state.phi_lifted(il - 1)) / h;
            let right = (state.phi_lifted(il + 2) - state.phi_lifted(il + 1)) / h;
            out.push(ShockRecord {
                position: ((i as f64 + 0.5) * h).rem_euclid(p),
                birth_time: state.time_index,
                current_time: state.time_index,
                left_limit_u: left,
                right_limit_u: right,
                absorbed: (state.backpointers[i] as f64 * h, next as f64 * h),
            });
        }
    }
    out
}

/// Carries birth times from `prev` to `next`. A previous shock is an ancestor
/// of the next shock whose absorbed interval (widened by `merge_radius`)
/// contains it; each previous shock has at most one heir and the oldest
/// ancestor wins. Shocks without ancestors are born now.
pub fn track_shocks(
    prev: &[ShockRecord],
    next: &[ShockRecord],
    merge_radius: f64,
    period: f64,
) -> Result<Vec<ShockRecord>> {
    let mut out: Vec<ShockRecord> = next.to_vec();
    if next.len() >= 2 {
        let mut pos: Vec<f64> = next.iter().map(|s| s.position.rem_euclid(period)).collect();
        pos.sort_by(f64::total_cmp);
        let mut gap = pos[0] + period - pos[pos.len() - 1];
        for w in pos.windows(2) {
            gap = gap.min(w[1] - w[0]);
        }
        if merge_radius >= 0.5 * gap {
            return Err(Error::Validation(format!(
                "merge radius {merge_radius} is not below half the minimum shock gap {gap}"
            )));
        }
    }
    for s in &mut out {
        s.birth_time = s.current_time;
    }
    for q in prev {
        let mut best: Option<(usize, f64)> = None;
        for (k, s) in next.iter().enumerate() {
            let lo = s.absorbed.0.min(s.position) - merge_radius;
            let hi = s.absorbed.1.max(s.position) + merge_radius;
            let mid = 0.5 * (lo + hi);
            let ql = q.position + period * ((mid - q.position) / period).round();
            if ql >= lo && ql <= hi {
                let d = (ql - mid).abs();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
        }
        if let Some((k, _)) = best {
            out[k].birth_time = out[k].birth_time.min(q.birth_time);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PullbackResult {
    pub a: SolutionField,
    pub b: SolutionField,
    pub distance: f64,
}

/// Sup distance between forward-difference gradients.
pub fn gradient_distance(a: &SolutionField, b: &SolutionField) -> f64 {
    a.gradient_fd().iter().zip(b.gradient_fd()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Evolves two initial conditions from time `-T` to `0` under the same kicks
/// (indices `-T+1..=0`) and reports the sup distance of their gradients.
pub fn pullback_solve(
    forcing: &PotentialField,
    ham: &HamiltonianSpec,
    t_steps: usize,
    init_a: &SolutionField,
    init_b: &SolutionField,
) -> Result<PullbackResult> {
    if init_a.slope_b != init_b.slope_b {
        return Err(config(format!(
            "initial slopes differ ({} vs {}); they select different global solutions",
            init_a.slope_b, init_b.slope_b
        )));
    }
    init_a.grid.check_same(&init_b.grid)?;
    let t0 = -(t_steps as i64);
    let mut a = SolutionField { time_index: t0, backpointers: vec![], kick: vec![], ..init_a.clone() };
    let mut b = SolutionField { time_index: t0, backpointers: vec![], kick: vec![], ..init_b.clone() };
    for _ in 0..t_steps {
        let kick = forcing.sample_kick(a.time_index + 1, &a.grid)?;
        a = lax_oleinik_step(&a, &kick, ham)?;
        b = lax_oleinik_step(&b, &kick, ham)?;
        a.normalize_gauge();
        b.normalize_gauge();
    }
    let distance = gradient_distance(&a, &b);
    Ok(PullbackResult { a, b, distance })
}

/// Checks the monotone-lift invariant of a field's backpointers.
pub fn backpointers_monotone(state: &SolutionField) -> bool {
    state.is_monotone()
}
