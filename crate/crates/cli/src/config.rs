//! Run configurations. Every section rejects unknown keys.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fluxlaws::cascade::{CutoffRule, DetectOptions, Direction};
use fluxlaws::correlations::{log_spaced, NodeRule};
use fluxlaws::forcing::ForcingConfig;
use fluxlaws::grid::WaveGrid;
use fluxlaws::sim2d::{Dealias, Scheme, SimConfig};

use crate::CliError;

fn two_pi() -> f64 {
    2.0 * PI
}
fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn blocks() -> usize {
    4
}
fn tenth() -> f64 {
    0.1
}
fn five_percent() -> f64 {
    0.05
}
fn two_percent() -> f64 {
    0.02
}
fn min_nodes() -> usize {
    64
}
fn half() -> f64 {
    0.5
}
fn rho() -> f64 {
    0.05
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_axis: usize,
    #[serde(default = "two_pi")]
    pub lambda: f64,
}

impl GridSection {
    pub fn build(&self) -> Result<WaveGrid, CliError> {
        Ok(WaveGrid::new(2, self.lambda, self.n_axis)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub nu: f64,
    pub dt: f64,
    pub t_burn: f64,
    pub t_sample: f64,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub dealias: Dealias,
    #[serde(default = "yes")]
    pub nonlinear: bool,
    #[serde(default = "one")]
    pub cfl_max: f64,
    #[serde(default)]
    pub min_snapshot_interval: f64,
    #[serde(default = "blocks")]
    pub blocks: usize,
    #[serde(default = "tenth")]
    pub stationarity_tol: f64,
}

/// Log-spaced separations; defaults to `[λ/n, λ/4]` with 24 points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllSpec {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub n: Option<usize>,
}

impl EllSpec {
    pub fn values(&self, grid: &WaveGrid) -> Vec<f64> {
        let lo = self.lo.unwrap_or(grid.lambda() / grid.n_axis() as f64);
        let hi = self.hi.unwrap_or(grid.lambda() / 4.0);
        log_spaced(lo, hi, self.n.unwrap_or(24))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    #[serde(default)]
    pub ell: EllSpec,
    /// Strictly decreasing `γ` ladder for `D_γ`; empty skips it.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Fewest sphere nodes per separation.
    #[serde(default = "min_nodes")]
    pub min_nodes: usize,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self { ell: EllSpec::default(), gammas: Vec::new(), min_nodes: min_nodes() }
    }
}

impl Diagnostics {
    pub fn node_rule(&self) -> NodeRule {
        NodeRule::Bandwidth { min_nodes: self.min_nodes }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "five_percent")]
    pub energy_closure: f64,
    #[serde(default = "five_percent")]
    pub enstrophy_closure: f64,
    #[serde(default = "tenth")]
    pub khm_residual: f64,
    /// Residual band; defaults to `[8λ/n, λ/4]`.
    #[serde(default)]
    pub band: Option<[f64; 2]>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { energy_closure: 0.05, enstrophy_closure: 0.05, khm_residual: 0.10, band: None }
    }
}

impl Tolerances {
    pub fn band(&self, grid: &WaveGrid) -> (f64, f64) {
        match self.band {
            Some([a, b]) => (a, b),
            None => (8.0 * grid.lambda() / grid.n_axis() as f64, grid.lambda() / 4.0),
        }
    }
}

/// `simulate`, `structure`, `khm-check` and `budget` share this file; the
/// run directory keeps a copy as `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSection,
    pub forcing: ForcingConfig,
    pub sim: SimSection,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let grid = self.grid.build()?;
        let forcing = self.forcing.build(grid)?;
        let s = &self.sim;
        let mut cfg = SimConfig::new(forcing, s.nu, s.dt);
        cfg.t_burn = s.t_burn;
        cfg.t_sample = s.t_sample;
        cfg.snapshot_every = s.snapshot_every;
        cfg.seed = self.seed;
        cfg.scheme = s.scheme;
        cfg.dealias = s.dealias;
        cfg.nonlinear = s.nonlinear;
        cfg.cfl_max = s.cfl_max;
        cfg.min_snapshot_interval = s.min_snapshot_interval;
        cfg.blocks = s.blocks;
        cfg.stationarity_tol = s.stationarity_tol;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSection {
    #[serde(default)]
    pub rule: Option<CutoffRule>,
    pub ell_i: f64,
    #[serde(default = "half")]
    pub ell_exponent: f64,
    #[serde(default = "rho")]
    pub rho: f64,
    #[serde(default = "two_percent")]
    pub tolerance: f64,
}

impl DetectSection {
    pub fn options(&self, direction: Direction) -> DetectOptions {
        let base = if direction == Direction::Inverse { DetectOptions::inverse(self.ell_i) } else { DetectOptions::direct(self.ell_i) };
        DetectOptions {
            rule: self.rule.unwrap_or(base.rule),
            ell_i: self.ell_i,
            ell_exponent: self.ell_exponent,
            rho: self.rho,
            tolerance: self.tolerance,
        }
    }
}

/// One sweep member: synthetic statistics or a simulation run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemberSpec {
    /// Direct: escaping flux `flux_star` at `k_cut`, 2D energy remainder at
    /// `k_low`. Inverse: `flux_star` dissipated at `k_cut`.
    Synthetic {
        nu: f64,
        #[serde(default = "one")]
        lambda: f64,
        eps: f64,
        k_f: f64,
        k_cut: f64,
        flux_star: f64,
        #[serde(default)]
        k_low: f64,
    },
    Run {
        path: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeManifest {
    pub direction: Direction,
    pub dimension: usize,
    pub detect: DetectSection,
    #[serde(default)]
    pub ell: EllSpec,
    /// Decreasing viscosity order.
    pub members: Vec<MemberSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltrationConfig {
    #[serde(default = "two_percent")]
    pub tolerance: f64,
    #[serde(default = "deltas")]
    pub deltas: Vec<f64>,
    /// `ν = 10^{−e}` for the small-scale families.
    #[serde(default = "small_exponents")]
    pub small_scale_exponents: Vec<i32>,
    #[serde(default = "large_exponents")]
    pub large_scale_exponents: Vec<i32>,
    #[serde(default = "ell_small")]
    pub ell_i_small: f64,
    #[serde(default = "ell_large")]
    pub ell_i_large: f64,
}

fn deltas() -> Vec<f64> {
    vec![0.0, 0.4, 1.0]
}
fn small_exponents() -> Vec<i32> {
    (7..=11).collect()
}
fn large_exponents() -> Vec<i32> {
    (12..=16).collect()
}
fn ell_small() -> f64 {
    1e-3
}
fn ell_large() -> f64 {
    1e3
}

impl Default for FiltrationConfig {
    fn default() -> Self {
        Self {
            tolerance: two_percent(),
            deltas: deltas(),
            small_scale_exponents: small_exponents(),
            large_scale_exponents: large_exponents(),
            ell_i_small: ell_small(),
            ell_i_large: ell_large(),
        }
    }
}
