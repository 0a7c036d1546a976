//! Run configuration: one TOML table per subcommand, every field optional.

use crate::error::CliError;
use bnews_core::estimator::{Side, Variant, WindowPolicy, DEFAULT_K_MIN, DEFAULT_THRESHOLD};
use bnews_core::koper::{KoperConfig, OrbitOptions, SectionSpec};
use bnews_core::rdsim::NoiseModel;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Prefix of the comment lines that carry the configuration inside outputs.
pub const CONFIG_MARKER: &str = "# | ";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Also write gnuplot scripts next to the data files.
    pub gnuplot: bool,
    pub simulate: SimulateConfig,
    pub scan: ScanConfig,
    pub warn: WarnConfig,
    pub koper: KoperRunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Linear,
    Pitchfork,
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesFormat {
    Csv,
    Bnts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub family: Family,
    /// Family parameter α.
    pub alpha: f64,
    /// Slope of the linear family.
    pub slope: f64,
    pub noise: NoiseModel,
    pub x0: f64,
    pub n: usize,
    pub burn_in: usize,
    /// Number of independent runs (seeds split from `seed`).
    pub count: usize,
    pub seed: u64,
    pub format: SeriesFormat,
    /// Output file name inside the output directory.
    pub file: String,
    /// Escape interval; the family's domain when absent.
    pub domain: Option<(f64, f64)>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            family: Family::Linear,
            alpha: 0.0,
            slope: 0.5,
            noise: NoiseModel::UniformInterval { lo: -1.0, hi: 1.0 },
            x0: 0.0,
            n: 100_000,
            burn_in: 1000,
            count: 1,
            seed: 0,
            format: SeriesFormat::Csv,
            file: "series.csv".into(),
            domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub family: Family,
    pub sigma: f64,
    pub slope: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub n_alpha: usize,
    pub jump_tol: f64,
    /// Base name of the report files.
    pub file: String,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            family: Family::Pitchfork,
            sigma: 0.5,
            slope: 0.5,
            alpha_min: 1.5,
            alpha_max: 4.0,
            n_alpha: 101,
            jump_tol: 10.0,
            file: "scan".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesInput {
    pub alpha: f64,
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub side: Side,
    pub delta_frac: f64,
    pub adapt: bool,
    pub target_visits: usize,
    pub gap_frac: f64,
    pub gap_deltas: Option<f64>,
    pub epsilon_frac: Option<f64>,
    pub variant: Variant,
    pub k_min: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let p = WindowPolicy::default();
        Self {
            side: p.side,
            delta_frac: p.delta_frac,
            adapt: p.adapt,
            target_visits: p.target_visits,
            gap_frac: p.gap_frac,
            gap_deltas: p.gap_deltas,
            epsilon_frac: p.epsilon_frac,
            variant: p.variant,
            k_min: p.k_min,
        }
    }
}

impl From<PolicyConfig> for WindowPolicy {
    fn from(p: PolicyConfig) -> Self {
        WindowPolicy {
            side: p.side,
            delta_frac: p.delta_frac,
            adapt: p.adapt,
            target_visits: p.target_visits,
            gap_frac: p.gap_frac,
            gap_deltas: p.gap_deltas,
            epsilon_frac: p.epsilon_frac,
            variant: p.variant,
            k_min: p.k_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarnConfig {
    /// Series files to scan; when empty, series are simulated from `family`.
    pub series: Vec<SeriesInput>,
    pub family: Family,
    pub sigma: f64,
    pub slope: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub n_alpha: usize,
    pub x0: f64,
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub threshold: f64,
    pub policy: PolicyConfig,
    pub file: String,
}

impl Default for WarnConfig {
    fn default() -> Self {
        Self {
            series: Vec::new(),
            family: Family::Pitchfork,
            sigma: 0.5,
            slope: 0.5,
            alpha_min: 2.6,
            alpha_max: 4.0,
            n_alpha: 15,
            x0: 2.0,
            n: 200_000,
            burn_in: 1000,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            policy: PolicyConfig::default(),
            file: "warn.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KoperTask {
    /// Deterministic return map on a z grid.
    ReturnMap,
    /// Noisy return clouds at `cloud_lambdas`.
    Cloud,
    /// Invariant-set sweep over λ.
    Sweep,
    /// Boundary derivative along the sweep (implies `sweep`).
    Derivative,
    /// Fixed-point slope of the deterministic map.
    Deterministic,
    /// Three-channel trajectory dump.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoperRunConfig {
    pub tasks: Vec<KoperTask>,
    pub model: KoperConfig,
    pub section: SectionSpec,
    pub orbit: OrbitOptions,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_step: f64,
    pub jump_factor: f64,
    pub n_real: usize,
    pub eps_fd: f64,
    /// Derivative at every `deriv_stride`-th sweep value.
    pub deriv_stride: usize,
    pub z_grid_n: usize,
    pub cloud_lambdas: Vec<f64>,
    pub n_per_z: usize,
    pub fixed_point_tol: f64,
    pub trajectory_time: f64,
    pub trajectory_stride: usize,
}

impl Default for KoperRunConfig {
    fn default() -> Self {
        Self {
            tasks: vec![KoperTask::ReturnMap, KoperTask::Sweep, KoperTask::Derivative, KoperTask::Deterministic],
            model: KoperConfig::default(),
            section: SectionSpec::default(),
            orbit: OrbitOptions::default(),
            lambda_min: -6.9,
            lambda_max: -6.859,
            lambda_step: 0.001,
            jump_factor: 10.0,
            n_real: 500,
            eps_fd: 0.01,
            deriv_stride: 3,
            z_grid_n: 201,
            cloud_lambdas: vec![-6.9, -6.85],
            n_per_z: 20,
            fixed_point_tol: 1e-11,
            trajectory_time: 200.0,
            trajectory_stride: 10,
        }
    }
}

impl KoperRunConfig {
    pub fn lambdas(&self) -> Result<Vec<f64>, CliError> {
        grid_by_step(self.lambda_min, self.lambda_max, self.lambda_step)
    }
}

/// `n` evenly spaced values from `lo` to `hi`.
pub fn grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, CliError> {
    if n < 2 || !(lo < hi) {
        return Err(CliError::Config(format!("empty parameter grid: {n} points on [{lo}, {hi}]")));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// `lo, lo + step, …` up to `hi` (inclusive up to rounding), values rounded
/// to 12 decimals so that they print cleanly.
pub fn grid_by_step(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0) || !(lo < hi) {
        return Err(CliError::Config(format!("empty parameter grid: [{lo}, {hi}] by {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if n < 2 {
        return Err(CliError::Config("parameter grid needs at least two points".into()));
    }
    Ok((0..n).map(|i| ((lo + step * i as f64) * 1e12).round() / 1e12).collect())
}

impl RunConfig {
    /// Reads a TOML file, or the configuration embedded in a previous output.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let embedded: Vec<&str> =
            text.lines().filter_map(|l| l.strip_prefix(CONFIG_MARKER.trim_end()).map(|r| r.strip_prefix(' ').unwrap_or(r))).collect();
        let source = if embedded.is_empty() { text.to_string() } else { embedded.join("\n") };
        toml::from_str(&source).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// The configuration as comment lines for output headers.
    pub fn comment_lines(&self) -> Vec<String> {
        self.to_toml().lines().map(|l| format!("{CONFIG_MARKER}{l}")).collect()
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.simulate.seed = seed;
        self.warn.seed = seed;
        self.koper.model.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: String| Err(CliError::Config(e));
        self.simulate.noise.validate().or_else(|e| cfg(format!("simulate.noise: {e}")))?;
        if self.simulate.n == 0 || self.simulate.count == 0 {
            return cfg("simulate.n and simulate.count must be positive".into());
        }
        if let Some((lo, hi)) = self.simulate.domain {
            if !(lo < hi) {
                return cfg("simulate.domain must be increasing".into());
            }
        }
        if !(self.scan.sigma > 0.0) || !(self.warn.sigma > 0.0) {
            return cfg("sigma must be positive".into());
        }
        if !(self.warn.threshold.is_finite()) || self.warn.policy.k_min == 0 {
            return cfg("warn.threshold must be finite and warn.policy.k_min positive".into());
        }
        if self.warn.policy.k_min < DEFAULT_K_MIN / 10 {
            return cfg(format!("warn.policy.k_min below {}", DEFAULT_K_MIN / 10));
        }
        self.koper.model.validate().or_else(|e| cfg(format!("koper.model: {e}")))?;
        self.koper.section.validate().or_else(|e| cfg(format!("koper.section: {e}")))?;
        if self.koper.n_real == 0 || !(self.koper.eps_fd > 0.0) || self.koper.deriv_stride == 0 {
            return cfg("koper.n_real, koper.eps_fd and koper.deriv_stride must be positive".into());
        }
        if self.koper.z_grid_n < 2 || self.koper.n_per_z == 0 {
            return cfg("koper.z_grid_n must be >= 2 and koper.n_per_z >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn embedded_config_is_recovered() {
        let mut c = RunConfig::default();
        c.simulate.n = 1234;
        c.koper.model.lambda = -6.88;
        let mut text = String::from("# bnews time series\n");
        for l in c.comment_lines() {
            text.push_str(&l);
            text.push('\n');
        }
        text.push_str("x\n0.1\n");
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn partial_tables_and_unknown_keys() {
        let c = RunConfig::parse("[simulate]\nn = 10\nnoise = { kind = \"scaled-unit\", scale = 0.2 }\n").unwrap();
        assert_eq!(c.simulate.n, 10);
        assert_eq!(c.simulate.burn_in, 1000);
        assert!(matches!(RunConfig::parse("[simulate]\nnn = 10\n"), Err(CliError::Config(_))));
        let bad = RunConfig::parse("[simulate]\nnoise = { kind = \"uniform-interval\", lo = 1.0, hi = -1.0 }\n").unwrap();
        assert!(matches!(bad.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn grids() {
        assert_eq!(grid_by_step(-6.9, -6.859, 0.001).unwrap().len(), 42);
        assert_eq!(grid_by_step(-6.9, -6.859, 0.001).unwrap()[41], -6.859);
        assert!(grid(1.0, 1.0, 5).is_err());
        assert!(grid(0.0, 1.0, 1).is_err());
        assert_eq!(grid(0.0, 1.0, 3).unwrap(), vec![0.0, 0.5, 1.0]);
    }
}
