//! Convex Lagrangian / Hamiltonian pairs.

use crate::error::{config, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HamiltonianSpec {
    /// `L(v) = v^2/2`, `H(p) = p^2/2`.
    Quadratic,
    /// `L(v) = |v|^q / q` with `q > 1`; dual exponent `q' = q/(q-1)`.
    Power { q: f64 },
    /// Piecewise-linear `L` through `(v_i, l_i)`, infinite outside the table.
    Tabulated { v: Vec<f64>, l: Vec<f64> },
}

impl HamiltonianSpec {
    pub fn is_quadratic(&self) -> bool {
        matches!(self, HamiltonianSpec::Quadratic)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HamiltonianSpec::Quadratic => Ok(()),
            HamiltonianSpec::Power { q } if *q > 1.0 && q.is_finite() => Ok(()),
            HamiltonianSpec::Power { q } => Err(config(format!("power Lagrangian needs q > 1, got {q}"))),
            HamiltonianSpec::Tabulated { v, l } => {
                if v.len() != l.len() || v.len() < 3 {
                    return Err(config("tabulated Lagrangian needs >= 3 matching (v, L) pairs"));
                }
                if v.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(config("tabulated velocities must be strictly increasing"));
                }
                let slopes: Vec<f64> = (0..v.len() - 1).map(|i| (l[i + 1] - l[i]) / (v[i + 1] - v[i])).collect();
                for (i, s) in slopes.windows(2).enumerate() {
                    if s[1] < s[0] - 1e-12 * (1.0 + s[0].abs()) {
                        return Err(config(format!("tabulated Lagrangian is not convex near v = {}", v[i + 1])));
                    }
                }
                // superlinear growth on the tabulated range: edge slopes must
                // exceed the chord slopes from the minimum
                let imin = (0..l.len()).min_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap_or(0);
                if imin == 0 || imin == v.len() - 1 {
                    return Err(config("tabulated Lagrangian must attain its minimum in the interior"));
                }
                Ok(())
            }
        }
    }

    /// `L(v)`.
    pub fn lagrangian(&self, v: f64) -> f64 {
        match self {
            HamiltonianSpec::Quadratic => 0.5 * v * v,
            HamiltonianSpec::Power { q } => v.abs().powf(*q) / q,
            HamiltonianSpec::Tabulated { v: vs, l } => {
                if v < vs[0] || v > vs[vs.len() - 1] {
                    return f64::INFINITY;
                }
                let k = vs.partition_point(|&x| x <= v).clamp(1, vs.len() - 1);
                let t = (v - vs[k - 1]) / (vs[k] - vs[k - 1]);
                l[k - 1] + t * (l[k] - l[k - 1])
            }
        }
    }

    /// `H(p) = sup_v (p v - L(v))`.
    pub fn hamiltonian(&self, p: f64) -> f64 {
        match self {
            HamiltonianSpec::Quadratic => 0.5 * p * p,
            HamiltonianSpec::Power { q } => {
                let qd = q / (q - 1.0);
                p.abs().powf(qd) / qd
            }
            HamiltonianSpec::Tabulated { v, l } => {
                v.iter().zip(l).map(|(&vi, &li)| p * vi - li).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// `H'(p)`, the velocity conjugate to momentum `p`.
    pub fn velocity(&self, p: f64) -> f64 {
        match self {
            HamiltonianSpec::Quadratic => p,
            HamiltonianSpec::Power { q } => {
                let qd = q / (q - 1.0);
                p.signum() * p.abs().powf(qd - 1.0)
            }
            HamiltonianSpec::Tabulated { v, l } => {
                let mut best = 0;
                for i in 1..v.len() {
                    if p * v[i] - l[i] > p * v[best] - l[best] {
                        best = i;
                    }
                }
                v[best]
            }
        }
    }

    /// `L'(v)`, the momentum conjugate to velocity `v`.
    pub fn momentum(&self, v: f64) -> f64 {
        match self {
            HamiltonianSpec::Quadratic => v,
            HamiltonianSpec::Power { q } => v.signum() * v.abs().powf(q - 1.0),
            HamiltonianSpec::Tabulated { .. } => {
                let e = 1e-7 * (1.0 + v.abs());
                (self.lagrangian(v + e) - self.lagrangian(v - e)) / (2.0 * e)
            }
        }
    }

    /// Smallest speed `v >= 0` beyond which `L(v) - L(0) - |b| v > budget`
    /// in both directions. Used as an a priori bound on minimiser velocities.
    pub fn speed_bound(&self, budget: f64, b: f64) -> f64 {
        let budget = budget.max(0.0);
        if let HamiltonianSpec::Quadratic = self {
            let b = b.abs();
            return b + (b * b + 2.0 * budget).sqrt();
        }
        if let HamiltonianSpec::Tabulated { v, .. } = self {
            return v[0].abs().max(v[v.len() - 1].abs());
        }
        let l0 = self.lagrangian(0.0);
        let excess = |s: f64| {
            let lo = self.lagrangian(-s) - l0 - b.abs() * s;
            let hi = self.lagrangian(s) - l0 - b.abs() * s;
            lo.min(hi) - budget
        };
        let mut hi = 1.0;
        while excess(hi) <= 0.0 && hi < 1e12 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Largest violation of `H(p) = sup_v (p v - L(v))` on `[-p_max, p_max]`,
    /// with the supremum taken over a dense velocity sample.
    pub fn duality_gap(&self, p_max: f64, samples: usize) -> f64 {
        let v_max = match self {
            HamiltonianSpec::Tabulated { v, .. } => v[0].abs().max(v[v.len() - 1].abs()),
            _ => 4.0 * self.velocity(p_max).abs().max(1.0),
        };
        let vs: Vec<f64> = match self {
            HamiltonianSpec::Tabulated { v, .. } => v.clone(),
            _ => (0..=20 * samples).map(|i| -v_max + 2.0 * v_max * i as f64 / (20 * samples) as f64).collect(),
        };
        (0..=samples)
            .map(|i| {
                let p = -p_max + 2.0 * p_max * i as f64 / samples as f64;
                let sup = vs.iter().map(|&v| p * v - self.lagrangian(v)).fold(f64::NEG_INFINITY, f64::max);
                (sup - self.hamiltonian(p)).abs()
            })
            .fold(0.0, f64::max)
    }
}
