//! Versioned JSON configuration schema, one document type per command.

use anyhow::{bail, Context};
use kpzlab::forcing::Synthesis;
use kpzlab::{HamiltonianSpec, PotentialField};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Config problems carry their field path and map to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Parses `text` as `T`, reporting the offending field path on failure.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError(format!("at `{path}`: {}", e.into_inner()))
    })
}

pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: T = parse(&text)?;
    if cfg.schema_version() != SCHEMA_VERSION {
        bail!(ConfigError(format!("at `schema_version`: expected {SCHEMA_VERSION}, got {}", cfg.schema_version())));
    }
    Ok(cfg)
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
    fn seed_mut(&mut self) -> &mut u64;
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.master_seed
            }
        }
    )*};
}

fn one() -> f64 {
    1.0
}

fn quadratic() -> HamiltonianSpec {
    HamiltonianSpec::Quadratic
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingCfg {
    pub period: f64,
    pub synthesis: Synthesis,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub dt: f64,
}

impl ForcingCfg {
    pub fn field(&self, seed: u64) -> PotentialField {
        let base = match self.synthesis {
            Synthesis::Fourier { n_modes } => PotentialField::fourier(seed, self.period, n_modes, self.amplitude),
            Synthesis::Bumps { bump_count, bump_width } => PotentialField::bumps(seed, self.period, bump_count, bump_width, self.amplitude),
        };
        base.with_dt(self.dt)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitCfg {
    #[default]
    Flat,
    /// `psi(x) = amplitude sin(2 pi k x / P)`.
    Sine { amplitude: f64, k: u32 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockCfg {
    pub jump_threshold: usize,
    /// In grid cells.
    pub merge_radius_cells: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCfg {
    pub schema_version: u32,
    pub master_seed: u64,
    pub forcing: ForcingCfg,
    pub grid_n: usize,
    #[serde(default = "quadratic")]
    pub hamiltonian: HamiltonianSpec,
    /// Zero runs the inviscid solver.
    #[serde(default)]
    pub nu: f64,
    #[serde(default)]
    pub slope_b: f64,
    pub steps: usize,
    pub snapshot_every: usize,
    #[serde(default)]
    pub init: InitCfg,
    #[serde(default)]
    pub shocks: Option<ShockCfg>,
    /// Strip extraction between consecutive snapshots; cluster tolerance in cells.
    #[serde(default)]
    pub strip_cluster_cells: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StripSource {
    /// Independent unit-time coalescing-walk strips.
    Coalescing { dx: f64, period: f64, n_strips: usize },
    /// JSON array of strip configurations, top strip first.
    File { path: String },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeCfg {
    Doubling,
    Incremental,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenormCfg {
    pub schema_version: u32,
    pub master_seed: u64,
    pub source: StripSource,
    pub mode: ModeCfg,
    /// Smallest composite size used in the density fit.
    #[serde(default = "one")]
    pub fit_min_n: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoalesceCfg {
    pub schema_version: u32,
    pub master_seed: u64,
    pub dx: f64,
    pub t: f64,
    pub replicas: usize,
    /// Each geometry is a list of disjoint `[left, right]` intervals.
    pub geometries: Vec<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingCfg {
    pub forcing: ForcingCfg,
    pub grid_n: usize,
    pub t_list: Vec<usize>,
    pub replicas: usize,
    #[serde(default = "stride")]
    pub endpoint_stride: usize,
    #[serde(default)]
    pub fit_range: Option<(f64, f64)>,
}

fn stride() -> usize {
    4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreePolymerCfg {
    pub nu: f64,
    pub t_list: Vec<f64>,
    pub replicas: usize,
    pub paths: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeCfg {
    pub forcing: ForcingCfg,
    pub grid_n: usize,
    pub t_steps: usize,
    pub replicas: usize,
    pub a_grid: Vec<f64>,
    #[serde(default)]
    pub nu: f64,
    /// Slopes at which to evaluate the effective Hamiltonian.
    #[serde(default)]
    pub b_grid: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgesCfg {
    pub forcing: ForcingCfg,
    pub grid_n: usize,
    pub burn_in: usize,
    pub horizon: usize,
    pub sample_every: usize,
    pub jump_threshold: usize,
    pub replicas: usize,
    #[serde(default = "bins")]
    pub bins_per_decade: usize,
    /// Defaults to `[4 dt, horizon dt / 8]`.
    #[serde(default)]
    pub fit_range: Option<(f64, f64)>,
}

fn bins() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaCfg {
    pub forcing: ForcingCfg,
    pub grid_n: usize,
    pub pullback_steps: usize,
    pub replicas: usize,
    pub lags: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovCfg {
    pub forcing: ForcingCfg,
    pub grid_n: usize,
    pub horizon: usize,
    pub separations: Vec<f64>,
    pub pairs_per_separation: usize,
    pub replicas: usize,
    pub window: (f64, f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentsCfg {
    pub schema_version: u32,
    pub master_seed: u64,
    #[serde(default = "quadratic")]
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub scaling: Option<ScalingCfg>,
    /// Re-estimate from a stored `scaling_data.json` instead of simulating.
    #[serde(default)]
    pub stored: Option<String>,
    #[serde(default)]
    pub free_polymer: Option<FreePolymerCfg>,
    #[serde(default)]
    pub shape: Option<ShapeCfg>,
    #[serde(default)]
    pub ages: Option<AgesCfg>,
    #[serde(default)]
    pub sigma: Option<SigmaCfg>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovCfg>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolymerCheckCfg {
    pub schema_version: u32,
    pub master_seed: u64,
    pub forcing: ForcingCfg,
    pub grid_n: usize,
    pub nu: f64,
    pub substeps: usize,
    pub kicks: usize,
    /// Endpoint node; defaults to mid-period.
    #[serde(default)]
    pub endpoint: Option<usize>,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AiryCfg {
    pub schema_version: u32,
    pub master_seed: u64,
    pub half_width: f64,
    pub n: usize,
    pub sigma: f64,
    pub corr_len: f64,
    pub count: usize,
    pub iterations: usize,
    /// Target mean and variance of `B(0, 0)`.
    #[serde(default = "targets")]
    pub targets: (f64, f64),
}

fn targets() -> (f64, f64) {
    (0.0, 1.0)
}

versioned!(SimulateCfg, RenormCfg, CoalesceCfg, ExponentsCfg, PolymerCheckCfg, AiryCfg);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_reports_its_path() {
        let text = r#"{"schema_version":1,"master_seed":1,"dx":0.1,"t":1,"replicas":10,"geometries":[[[0,1]]],"bogus":1}"#;
        let e = parse::<CoalesceCfg>(text).unwrap_err();
        assert!(e.0.contains("bogus"), "{e}");
        let text = r#"{"schema_version":1,"master_seed":1,"forcing":{"period":8,"synthesis":{"mode":"fourier","n_modes":"x"},"amplitude":0},"grid_n":8,"steps":1,"snapshot_every":1}"#;
        let e = parse::<SimulateCfg>(text).unwrap_err();
        assert!(e.0.contains("forcing.synthesis"), "{e}");
    }
}
